// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "test_support.hpp"

using namespace midas;
using namespace midas::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradientFdTol = 1e-5;
constexpr double kFdStep = 1e-6;
constexpr double kPartitionTol = 1e-10;
constexpr double kSagaTol = 1e-10;
constexpr double kGramTol = 1e-12;
constexpr double kFactorizationTol = 1e-10;
constexpr double kReductionTol = 1e-12;
constexpr double kPalmSlack = 1e-10;
constexpr double kAlsSlack = 1e-8;
constexpr double kRecoveryTol = 1e-2;
constexpr double kOrderingSlack = 1.05;
constexpr double kFeasibilityTol = 1e-12;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SynthData exact_instance(std::uint64_t seed) {
    SynthSpec s;
    s.dims = {12, 12, 12};
    s.ranks = RankVector({2, 2});
    s.seed = 1000 + seed;
    return synthesize(s);
}

SolverConfig defaults(std::uint64_t seed) {
    SolverConfig c;  // SAGA, t = 3, eta = 0.1, B = 2 max L, ramp(0.3) / ramp(0.8), 200 epochs
    c.ranks = RankVector({2, 2});
    c.seed = seed;
    return c;
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        CounterRng rng(s, Stream::SynthFactors, 42);
        const Dims d{2 + rng.uniform_index(5), 2 + rng.uniform_index(6), 2 + rng.uniform_index(7)};
        const std::vector<std::vector<std::size_t>> rank_lists{{1, 2}, {2, 1, 3}, {3}, {1, 1, 2}, {2, 3}};
        const RankVector ranks(rank_lists[s]);
        const DenseTensor3 x = random_tensor(d, s);
        const LL1Factors f = random_ll1(d, ranks, s);
        for (Mode m : kModes)
            worst = std::max(worst,
                             max_relative_error(full_gradient(f, x, m), finite_difference_gradient(f, x, m, kFdStep)));
    }
    const double secs = seconds_since(t0);
    return {worst <= kGradientFdTol && secs < 5.0,
            "max rel err " + fmt("%.3e", worst) + " (tol 1e-5), " + fmt("%.2f", secs) + " s (< 5 s)"};
}

Outcome estimator_unbiasedness() {
    const auto t0 = std::chrono::steady_clock::now();
    const Dims d{6, 7, 8};
    const DenseTensor3 x = random_tensor(d, 7);
    const LL1Factors f = random_ll1(d, RankVector({2, 1, 3}), 7);
    double worst = 0.0;
    for (Mode m : kModes) {
        const std::size_t jn = fiber_count(d, m);
        CounterRng rng(m == Mode::First ? 1 : m == Mode::Second ? 2 : 3, Stream::Bins);
        const auto perm = rng.permutation(jn);
        const std::size_t b = largest_divisor_at_most(jn, 5);
        Matrix avg = Matrix::Zero(f.factor(m).rows(), f.factor(m).cols());
        for (std::size_t s = 0; s < jn; s += b) {
            const std::vector<std::size_t> part(perm.begin() + static_cast<std::ptrdiff_t>(s),
                                                perm.begin() + static_cast<std::ptrdiff_t>(s + b));
            avg += sgd_estimate(f, x, FiberBatch(m, part, d));
        }
        avg /= static_cast<double>(jn / b);
        worst = std::max(worst, (avg - full_gradient(f, x, m)).norm());
    }
    const double secs = seconds_since(t0);
    return {worst <= kPartitionTol && secs < 1.0,
            "max ||avg - grad||_F " + fmt("%.3e", worst) + " (tol 1e-10), " + fmt("%.3f", secs) + " s (< 1 s)"};
}

Outcome saga_identities() {
    const Dims d{6, 6, 6};
    const DenseTensor3 x = random_tensor(d, 8, 0.0, 1.0);
    const LL1Factors p = random_ll1(d, RankVector({2, 2}), 8);
    SagaState s(d, {4, 4, 4}, 8);
    s.warm_start(p, x);
    bool cancel = true;
    for (Mode m : kModes)
        for (std::size_t b = 0; b < s.bin_count(m); ++b) cancel = cancel && s.evaluate(p, x, m, b).estimate == s.running_mean(m);
    const LL1Factors q = random_ll1(d, RankVector({2, 2}), 9);
    double sweep = 0.0;
    for (Mode m : kModes) {
        for (std::size_t b = 0; b < s.bin_count(m); ++b) s.estimate(q, x, m, b);
        Matrix avg = Matrix::Zero(q.factor(m).rows(), q.factor(m).cols());
        for (std::size_t b = 0; b < s.bin_count(m); ++b) avg += sgd_estimate(q, x, s.bin_batch(m, b));
        avg /= static_cast<double>(s.bin_count(m));
        sweep = std::max(sweep, (s.running_mean(m) - avg).norm());
    }
    return {cancel && sweep <= kSagaTol, std::string("warm-start estimate == running_mean: ") +
                                             (cancel ? "exact" : "NOT exact") + "; post-sweep mean error " +
                                             fmt("%.3e", sweep) + " (tol 1e-10)"};
}

Outcome unfold_and_khatri_rao() {
    bool roundtrip = true;
    double gram = 0.0, factorization = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Instance in = random_instance(600 + s, 7, 3);
        const DenseTensor3 t = random_tensor(in.dims, s);
        for (Mode m : kModes) roundtrip = roundtrip && fold(unfold(t, m), in.dims) == t;
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        const Matrix kr = khatri_rao(f.a1, f.a2);
        const Matrix lhs = kr.transpose() * kr;
        const Matrix rhs = (f.a1.transpose() * f.a1).cwiseProduct(f.a2.transpose() * f.a2);
        gram = std::max(gram, (lhs - rhs).norm() / rhs.norm());
        const DenseTensor3 xr = reconstruct(f);
        for (Mode m : kModes) {
            factorization =
                std::max(factorization, (unfold(xr, m).data - build_H(f, m) * f.factor(m).transpose()).norm());
            const Matrix h = build_H(f, m);
            const Matrix g = h.transpose() * h;
            gram = std::max(gram, (gram_H(f, m) - g).norm() / g.norm());
        }
    }
    return {roundtrip && gram <= kGramTol && factorization <= kFactorizationTol,
            std::string("fold(unfold) ") + (roundtrip ? "exact" : "NOT exact") + "; Gram rel err " + fmt("%.3e", gram) +
                " (tol 1e-12); ||X_(n) - H_n A_n^T|| " + fmt("%.3e", factorization) + " (tol 1e-10)"};
}

Outcome reduction_equivalence() {
    const SynthData data = exact_instance(0);
    SolverConfig c = defaults(4);
    c.estimator = {EstimatorType::Sgd, 0};
    c.depth = 0;
    c.batch = std::numeric_limits<std::size_t>::max();
    c.mode_policy = ModePolicy::Cyclic;
    c.step = StepRule::inverse_lipschitz();
    c.epochs = 50;
    c.abs_tol = 0.0;
    const RunResult a = run(c, data.tensor), b = palm_baseline(c, data.tensor);
    if (a.trace.rows.size() != b.trace.rows.size()) return {false, "trace lengths differ"};
    double worst = 0.0;
    for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
        const auto &p = a.trace.rows[i], &q = b.trace.rows[i];
        worst = std::max({worst, std::abs(p.phi - q.phi), std::abs(p.f - q.f), std::abs(p.step_norm - q.step_norm)});
        if (p.iteration != q.iteration) return {false, "iteration counters differ"};
    }
    return {worst <= kReductionTol, std::to_string(a.trace.rows.size()) + " sweeps (" +
                                        std::to_string(a.trace.rows.back().iteration) +
                                        " block updates), max entry diff " + fmt("%.3e", worst) + " (tol 1e-12)"};
}

Outcome baseline_monotonicity() {
    const Dims d{8, 8, 8};
    const DenseTensor3 x = random_tensor(d, 10, 0.0, 1.0);
    SolverConfig c = defaults(10);
    c.epochs = 500;
    c.abs_tol = 0.0;
    const auto worst_rise = [](const RunResult& r) {
        double prev = r.trace.initial.phi, w = -std::numeric_limits<double>::infinity();
        for (const auto& row : r.trace.rows) {
            w = std::max(w, row.phi - prev);
            prev = row.phi;
        }
        return w;
    };
    const double palm = worst_rise(palm_baseline(c, x));
    const double als = worst_rise(als_mu_baseline(c, x));
    return {palm <= kPalmSlack && als <= kAlsSlack, "500 sweeps each; largest phi increase PALM " + fmt("%.3e", palm) +
                                                        " (slack 1e-10), ALS-MU " + fmt("%.3e", als) + " (slack 1e-8)"};
}

std::vector<double> recovery_residuals;

Outcome exact_rank_recovery() {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t s = 0; s < 5; ++s) {
        const SynthData data = exact_instance(s);
        const RunResult r = run(defaults(s), data.tensor);
        recovery_residuals.push_back(relative_residual(r.factors, data.tensor));
    }
    const double med = median(recovery_residuals), secs = seconds_since(t0);
    std::string all;
    for (double v : recovery_residuals) all += fmt(" %.2e", v);
    return {med <= kRecoveryTol && secs < 60.0, "median rel residual " + fmt("%.3e", med) + " (tol 1e-2), seeds:" + all +
                                                    ", " + fmt("%.2f", secs) + " s (< 60 s)"};
}

Outcome acceleration_ordering() {
    std::array<std::vector<double>, 3> finals;
    const std::array<std::size_t, 3> depths{0, 1, 3};
    for (std::uint64_t s = 0; s < 10; ++s) {
        const SynthData data = exact_instance(s);
        for (std::size_t i = 0; i < 3; ++i) {
            SolverConfig c = defaults(s);
            c.depth = depths[i];
            finals[i].push_back(run(c, data.tensor).trace.rows.back().f);
        }
    }
    const double f0 = median(finals[0]), f1 = median(finals[1]), f3 = median(finals[2]);
    return {f3 <= f1 && f1 <= kOrderingSlack * f0, "median final f over 10 seeds: t=0 " + fmt("%.4e", f0) + ", t=1 " +
                                                       fmt("%.4e", f1) + ", t=3 " + fmt("%.4e", f3)};
}

Outcome variance_reduction() {
    const SynthData data = exact_instance(0);
    SolverConfig c = defaults(0);
    c.epochs = 100;
    MidasSolver solver(c, data.tensor);
    solver.run();
    const GradientEstimator sgd({EstimatorType::Sgd, 0}, data.tensor.dims(), solver.batch_sizes(), c.seed);
    bool ok = true;
    std::string detail;
    for (Mode m : kModes) {
        const LL1Factors under = solver.under_point(m);
        const MseProbe a = estimator_mse_probe(solver.estimator(), under, data.tensor, m, 500, 77);
        const MseProbe b = estimator_mse_probe(sgd, under, data.tensor, m, 500, 77);
        const double sigma = std::hypot(a.std_error, b.std_error);
        const bool sep = a.mse + 3.0 * sigma < b.mse;
        ok = ok && sep;
        detail += " A" + std::to_string(mode_number(m)) + ": SAGA " + fmt("%.3e", a.mse) + " vs SGD " +
                  fmt("%.3e", b.mse) + " (3 sigma " + fmt("%.1e", 3.0 * sigma) + ")";
    }
    return {ok, "epoch 100, 500 draws;" + detail};
}

Outcome feasibility_formula() {
    double worst = 0.0;
    for (double L : {0.1, 1.0, 7.5})
        for (double gamma : {0.0, 0.3, 4.0}) {
            const FeasibilityReport r = feasibility_check({0, 0.0, 0.0, 0.1, L, gamma});
            worst = std::max(worst, std::abs(r.max_feasible_eta - 2.0 / (4.0 * L + gamma * 2.0 * 3.0)));
        }
    // (t, alpha, beta, eta, L, gamma) -> delta, computed by hand.
    struct Case {
        FeasibilityInputs in;
        double delta;
    };
    const std::vector<Case> cases{
        {{1, 0.0, 0.0, 0.1, 1.0, 0.0}, 4.0},
        {{2, 0.1, 0.2, 0.05, 1.0, 0.5}, 6.75 - 9.0 * 1.37},
        {{3, 0.0, 0.1, 0.01, 2.0, 0.0}, 48.0 - 14.0 * 0.09},
    };
    for (const auto& k : cases) worst = std::max(worst, std::abs(feasibility_check(k.in).delta - k.delta));
    const bool example_feasible = feasibility_check(cases[0].in).feasible;
    return {worst <= kFeasibilityTol && example_feasible,
            "max |diff| " + fmt("%.3e", worst) + " over 9 eta bounds and 3 delta values (tol 1e-12)"};
}

Outcome determinism(const fs::path& work) {
    const fs::path tensor = work / "det.dten";
    write_tensor(tensor, exact_instance(3).tensor);
    write_file_bytes(work / "det.cfg", "ranks=2,2\nseed=11\nepochs=60\ngamma_diag=0\n");
    std::vector<fs::path> outs;
    for (int threads : {1, 1, 4, 4}) {
        const fs::path out = work / ("det_" + std::to_string(outs.size()));
        const std::string cmd = "MIDAS_THREADS=" + std::to_string(threads) + " '" + MIDAS_CLI_PATH +
                                "' decompose --no-timing --tensor '" + tensor.string() + "' --config '" +
                                (work / "det.cfg").string() + "' --out '" + out.string() + "' >/dev/null 2>&1";
        if (shell(cmd) != 0) return {false, "decompose failed with MIDAS_THREADS=" + std::to_string(threads)};
        outs.push_back(out);
    }
    bool same = true;
    for (const auto& name : {"trace.csv", "factors/A1.dten", "factors/A2.dten", "factors/A3.dten"})
        for (std::size_t i = 1; i < outs.size(); ++i)
            same = same && read_file_bytes(outs[0] / name) == read_file_bytes(outs[i] / name);
    return {same, std::string("4 runs (MIDAS_THREADS=1,1,4,4): trace.csv and factor files ") +
                      (same ? "bitwise identical" : "DIFFER")};
}

Outcome file_round_trip(const fs::path& work) {
    bool identical = true;
    for (std::uint64_t s = 0; s < 10; ++s) {
        CounterRng rng(s, Stream::SynthFactors, 12);
        const Dims d{1 + rng.uniform_index(9), 1 + rng.uniform_index(9), 1 + rng.uniform_index(9)};
        const DenseTensor3 t = random_tensor(d, s, -1e6, 1e6);
        const fs::path p = work / ("rt" + std::to_string(s) + ".dten");
        write_tensor(p, t);
        const DenseTensor3 back = read_tensor(p);
        identical = identical && back.dims() == d &&
                    std::memcmp(back.data().data(), t.data().data(), 8 * t.size()) == 0;
    }
    const std::vector<std::string> bad{"DTENSOR 1 2 2\n", "DTENSOR 2 1 1 1\n", "DTENS0R 1 1 1 1\n",
                                       "DTENSOR 1 1 -1 1\n", "DTENSOR 1 1 1 1"};
    int rejected = 0;
    for (std::size_t i = 0; i < bad.size(); ++i) {
        const fs::path p = work / ("bad" + std::to_string(i) + ".dten");
        write_file_bytes(p, bad[i] + std::string(8, '\0'));
        const std::string cmd = "'" + std::string(MIDAS_CLI_PATH) + "' decompose --tensor '" + p.string() +
                                "' --out '" + (work / "bad_out").string() + "' >/dev/null 2>&1";
        rejected += shell(cmd) != 0;
    }
    return {identical && rejected == static_cast<int>(bad.size()),
            std::string("10 tensors ") + (identical ? "bitwise identical" : "DIFFER") + "; " +
                std::to_string(rejected) + "/" + std::to_string(bad.size()) + " malformed headers rejected"};
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "midas_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"estimator unbiasedness", estimator_unbiasedness},
        {"SAGA cancellation identities", saga_identities},
        {"unfold/fold and Khatri-Rao suites", unfold_and_khatri_rao},
        {"reduction to PALM", reduction_equivalence},
        {"baseline monotonicity", baseline_monotonicity},
        {"exact-rank recovery", exact_rank_recovery},
        {"acceleration ordering", acceleration_ordering},
        {"variance-reduction effect", variance_reduction},
        {"feasibility formula", feasibility_formula},
        {"determinism", [&] { return determinism(work); }},
        {"file-format round trip", [&] { return file_round_trip(work); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
