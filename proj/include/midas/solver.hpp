#pragma once

// Multi-step inertial doubly stochastic proximal gradient for the regularized
// LL1 problem, plus two deterministic baselines (PALM and ALS-MU).
//
// One iteration:
//   1. pick a mode n (uniformly at random, or cyclically)
//   2. draw a fiber batch (or SAGA bin) for mode n
//   3. Atilde = A_n^k + sum_{i=1..t} alpha^{k+1-i} (A_n^{k+1-i} - A_n^{k-i})
//      Aunder = A_n^k + sum_{i=1..t} beta^{k+1-i}  (A_n^{k+1-i} - A_n^{k-i})
//   4. g = estimator at (.., Aunder, ..)
//   5. A_n^{k+1} = prox_{eta h_n}(Atilde - eta g), other blocks unchanged
// In steps 3 and 5, k counts the updates of block n itself: the history of a
// block is its own sequence of values, and the schedules are indexed by that
// block's update count. Values before the first update equal A_n^0.

#include <algorithm>
#include <array>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "midas/estimators.hpp"
#include "midas/ll1.hpp"
#include "midas/prox.hpp"
#include "midas/rng.hpp"
#include "midas/tensor.hpp"

namespace midas {

/// Inertial coefficient schedule. Ramp gives scale * (k - 1) / (k + 2).
struct Schedule {
    enum class Kind { Constant, Ramp };
    Kind kind = Kind::Ramp;
    double scale = 0.0;

    static Schedule constant(double c) { return {Kind::Constant, c}; }
    static Schedule ramp(double c) { return {Kind::Ramp, c}; }

    /// Coefficient for index k; indices below 1 precede the first iterate and are 0.
    double at(long long k) const {
        if (k < 1) return 0.0;
        if (kind == Kind::Constant) return scale;
        const double kd = static_cast<double>(k);
        return scale * (kd - 1.0) / (kd + 2.0);
    }
    double limit() const { return scale; }

    bool operator==(const Schedule&) const = default;
};

struct StepRule {
    enum class Kind { Constant, InverseLipschitz };
    Kind kind = Kind::Constant;
    double eta = 0.1;

    static StepRule constant(double eta) { return {Kind::Constant, eta}; }
    static StepRule inverse_lipschitz() { return {Kind::InverseLipschitz, 0.0}; }

    bool operator==(const StepRule&) const = default;
};

enum class ModePolicy { UniformRandom, Cyclic };

struct SolverConfig {
    EstimatorKind estimator{};
    std::size_t depth = 3;  // t
    Schedule alpha = Schedule::ramp(0.3);
    Schedule beta = Schedule::ramp(0.8);
    StepRule step = StepRule::constant(0.1);
    std::size_t batch = 0;  // 0 = 2 * max L_r
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
    ModePolicy mode_policy = ModePolicy::UniformRandom;
    RegularizerSpec reg = RegularizerSpec::uniform(Regularizer::nonnegative());
    RankVector ranks{std::vector<std::size_t>{1}};
    std::optional<LL1Factors> init;  // empty = i.i.d. Uniform(0, 1)
    std::optional<double> gamma_diag;
    double abs_tol = 1e-12;

    bool operator==(const SolverConfig&) const = default;

    void validate(const Dims& dims) const {
        if (step.kind == StepRule::Kind::Constant && !(step.eta > 0.0 && std::isfinite(step.eta)))
            throw std::invalid_argument("step size eta must be positive and finite");
        if (!std::isfinite(alpha.scale) || !std::isfinite(beta.scale))
            throw std::invalid_argument("inertial coefficients must be finite");
        if (init) init->validate(&dims);
        if (init && !(init->ranks == ranks)) throw std::invalid_argument("initial factors use a different rank vector");
        if (gamma_diag && !(*gamma_diag >= 0.0)) throw std::invalid_argument("gamma_diag must be >= 0");
        for (const auto& r : reg.per_mode)
            if (r.kind == RegularizerKind::Ridge && !(r.lambda >= 0.0 && std::isfinite(r.lambda)))
                throw std::invalid_argument("ridge lambda must be finite and >= 0");
    }
};

class NumericalError : public std::runtime_error {
public:
    NumericalError(std::size_t iteration, Mode mode)
        : std::runtime_error("non-finite value in the update of A" + std::to_string(mode_number(mode)) +
                             " at iteration " + std::to_string(iteration)),
          iteration_(iteration), mode_(mode) {}

    std::size_t iteration() const { return iteration_; }
    Mode mode() const { return mode_; }

private:
    std::size_t iteration_;
    Mode mode_;
};

inline std::size_t largest_divisor_at_most(std::size_t n, std::size_t cap) {
    for (std::size_t d = std::min(n, cap); d > 1; --d)
        if (n % d == 0) return d;
    return 1;
}

struct BatchResolution {
    std::array<std::size_t, 3> sizes{};
    std::vector<std::string> notes;
};

/// Per-mode batch sizes: min(B, J_n), and for SAGA the largest divisor of J_n
/// not above that.
inline BatchResolution resolve_batch_sizes(const SolverConfig& cfg, const Dims& dims) {
    BatchResolution res;
    const std::size_t requested = cfg.batch != 0 ? cfg.batch : 2 * cfg.ranks.max_rank();
    for (Mode m : kModes) {
        const auto n = index_of(m);
        const std::size_t jn = fiber_count(dims, m);
        std::size_t b = std::min(requested, jn);
        if (cfg.estimator.type == EstimatorType::Saga) b = largest_divisor_at_most(jn, b);
        if (b != requested)
            res.notes.push_back("batch size for mode " + std::to_string(n + 1) + " adjusted from " +
                                std::to_string(requested) + " to " + std::to_string(b) + " (J_" +
                                std::to_string(n + 1) + " = " + std::to_string(jn) + ")");
        res.sizes[n] = b;
    }
    return res;
}

/// Iterations in one epoch: sum_n ceil(J_n / B_n).
inline std::size_t iterations_per_epoch(const Dims& dims, const std::array<std::size_t, 3>& batch) {
    std::size_t total = 0;
    for (Mode m : kModes) {
        const std::size_t jn = fiber_count(dims, m);
        total += (jn + batch[index_of(m)] - 1) / batch[index_of(m)];
    }
    return total;
}

/// i.i.d. Uniform(0, 1) factors.
inline LL1Factors random_factors(const Dims& dims, const RankVector& ranks, CounterRng& rng) {
    LL1Factors f = LL1Factors::zeros(dims, ranks);
    for (Mode m : kModes) {
        Matrix& a = f.factor(m);
        for (Eigen::Index c = 0; c < a.cols(); ++c)
            for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = rng.uniform01();
    }
    return f;
}

inline LL1Factors initial_factors(const SolverConfig& cfg, const Dims& dims) {
    if (cfg.init) return *cfg.init;
    CounterRng rng(cfg.seed, Stream::Init);
    return random_factors(dims, cfg.ranks, rng);
}

/// Last t+2 values of each block's own update sequence, newest first.
class InertialHistory {
public:
    InertialHistory(const LL1Factors& start, std::size_t depth) : depth_(depth) {
        for (Mode m : kModes) buf_[index_of(m)].assign(depth + 2, start.factor(m));
    }

    std::size_t depth() const { return depth_; }

    /// A_n^{k - back}.
    const Matrix& iterate(Mode m, std::size_t back) const { return buf_[index_of(m)].at(back); }

    /// Records a new value of block m; the other blocks' histories are untouched.
    void push(Mode m, const Matrix& value) {
        auto& b = buf_[index_of(m)];
        b.pop_back();
        b.push_front(value);
    }

    /// A_n^k + sum_{i=1..t} coeffs[i-1] (A_n^{k+1-i} - A_n^{k-i}).
    Matrix extrapolate(Mode m, std::span<const double> coeffs) const {
        if (coeffs.size() != depth_)
            throw std::invalid_argument("expected " + std::to_string(depth_) + " inertial coefficients");
        const auto& b = buf_[index_of(m)];
        Matrix out = b[0];
        for (std::size_t i = 1; i <= depth_; ++i)
            if (coeffs[i - 1] != 0.0) out += coeffs[i - 1] * (b[i - 1] - b[i]);
        return out;
    }

private:
    std::size_t depth_;
    std::array<std::deque<Matrix>, 3> buf_;
};

struct TraceRow {
    std::size_t epoch = 0;
    std::size_t iteration = 0;  // cumulative iterations at the end of the epoch
    double phi = 0.0;
    double f = 0.0;
    double elapsed_seconds = 0.0;
    double step_norm = 0.0;  // ||A^{k+1} - A^k||_F of the last step
    std::optional<double> lyapunov;
    std::array<std::size_t, 3> mode_updates{0, 0, 0};  // within this epoch
};

struct RunTrace {
    ObjectiveValue initial;
    std::vector<TraceRow> rows;
    std::vector<std::string> notes;
};

struct RunResult {
    LL1Factors factors;
    RunTrace trace;
};

/// Quantities behind the parameter condition of the Lyapunov descent,
/// evaluated at the limits of the schedules.
struct FeasibilityReport {
    double b_lower = 0.0;         // liminf b_k
    std::vector<double> a_upper;  // limsup a_{k,j}, j = 1..t+1
    double delta = 0.0;           // b_lower - sum_j (j+1) a_upper_j
    double tail_margin = 0.0;     // (t+2) a_upper_{t+1} - gamma / 2
    double max_feasible_eta = 0.0;
    bool feasible = false;
};

struct FeasibilityInputs {
    std::size_t depth = 0;
    double alpha = 0.0;  // schedule limits
    double beta = 0.0;
    double eta = 0.1;  // upper bound of the step sizes
    double lipschitz = 1.0;
    double gamma = 0.0;
};

/// b = (1 - t alpha - 2 L eta - gamma eta) / (2 eta),
/// a_j = 3 L t beta^2 / 2 + gamma / 2 + alpha / (2 eta).
/// Feasible when delta > 0 and the tail margin is not negative.
inline FeasibilityReport feasibility_check(const FeasibilityInputs& in) {
    if (!(in.eta > 0.0)) throw std::invalid_argument("feasibility_check needs eta > 0");
    const double t = static_cast<double>(in.depth);
    const double L = in.lipschitz;
    FeasibilityReport rep;
    rep.b_lower = (1.0 - t * in.alpha - 2.0 * L * in.eta - in.gamma * in.eta) / (2.0 * in.eta);
    const double a = 1.5 * L * t * in.beta * in.beta + 0.5 * in.gamma + in.alpha / (2.0 * in.eta);
    rep.a_upper.assign(in.depth + 1, a);
    double weighted = 0.0;
    for (std::size_t j = 1; j <= in.depth + 1; ++j) weighted += static_cast<double>(j + 1) * rep.a_upper[j - 1];
    rep.delta = rep.b_lower - weighted;
    rep.tail_margin = (t + 2.0) * rep.a_upper.back() - 0.5 * in.gamma;
    rep.feasible = rep.delta > 0.0 && rep.tail_margin >= 0.0;

    // delta > 0  <=>  eta < (1 - (t + S) alpha) / (2L + gamma + S (3 L t beta^2 + gamma)),
    // S = sum_{j=1}^{t+1} (j + 1).
    const double S = (t + 1.0) * (t + 4.0) / 2.0;
    const double num = 1.0 - (t + S) * in.alpha;
    const double den = 2.0 * L + in.gamma + S * (3.0 * L * t * in.beta * in.beta + in.gamma);
    if (num <= 0.0)
        rep.max_feasible_eta = 0.0;
    else if (den <= 0.0)
        rep.max_feasible_eta = std::numeric_limits<double>::infinity();
    else
        rep.max_feasible_eta = num / den;
    return rep;
}

inline FeasibilityInputs feasibility_inputs(const SolverConfig& cfg, double lipschitz, double gamma) {
    FeasibilityInputs in;
    in.depth = cfg.depth;
    in.alpha = cfg.alpha.limit();
    in.beta = cfg.beta.limit();
    in.eta = cfg.step.kind == StepRule::Kind::Constant ? cfg.step.eta
                                                       : (lipschitz > 0.0 ? 1.0 / lipschitz : 1.0);
    in.lipschitz = lipschitz;
    in.gamma = gamma;
    return in;
}

/// Psi = Phi + sum_{i=1}^{t+1} sum_{j=i}^{t+1} (j+1) a_j s_i^2 where
/// s_i = ||A^{k+1-i} - A^{k-i}||_F (s_1 is the most recent step). The
/// variance term of the full Lyapunov function is not observable and is left out.
inline double lyapunov_surrogate(double phi, std::span<const double> step_norms, std::span<const double> a_upper) {
    const std::size_t levels = a_upper.size();
    if (step_norms.size() < levels) throw std::invalid_argument("need t+1 step norms for the Lyapunov surrogate");
    double psi = phi;
    for (std::size_t i = 1; i <= levels; ++i) {
        double w = 0.0;
        for (std::size_t j = i; j <= levels; ++j) w += static_cast<double>(j + 1) * a_upper[j - 1];
        psi += w * step_norms[i - 1] * step_norms[i - 1];
    }
    return psi;
}

namespace detail {

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline double max_lipschitz(const LL1Factors& f) {
    double L = 0.0;
    for (Mode m : kModes) L = std::max(L, lipschitz_bound(f, m));
    return L;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Stateful Midas iteration over one tensor. The tensor must outlive the solver.
class MidasSolver {
public:
    MidasSolver(SolverConfig cfg, const DenseTensor3& tensor)
        : cfg_(std::move(cfg)), tensor_(tensor), factors_(prepare_factors(cfg_, tensor)),
          batch_(resolve_batch_sizes(cfg_, tensor.dims())),
          estimator_(cfg_.estimator, tensor.dims(), batch_.sizes, cfg_.seed),
          history_(factors_, cfg_.depth), mode_rng_(cfg_.seed, Stream::ModeSelection),
          fiber_rng_(cfg_.seed, Stream::FiberSampling), recent_steps_(cfg_.depth + 1, 0.0) {
        estimator_.prepare(factors_, tensor_);
        trace_.initial = objective(factors_, tensor_, cfg_.reg);
        trace_.notes = batch_.notes;
    }

    const SolverConfig& config() const { return cfg_; }
    const LL1Factors& factors() const { return factors_; }
    const GradientEstimator& estimator() const { return estimator_; }
    const InertialHistory& history() const { return history_; }
    const RunTrace& trace() const { return trace_; }
    const std::array<std::size_t, 3>& batch_sizes() const { return batch_.sizes; }
    std::size_t iteration() const { return k_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t iterations_per_epoch() const { return midas::iterations_per_epoch(tensor_.dims(), batch_.sizes); }

    /// Point at which the next mode-m estimate would be taken.
    LL1Factors under_point(Mode m) const {
        return with_factor(factors_, m, history_.extrapolate(m, coefficients(cfg_.beta, m)));
    }

    struct StepInfo {
        Mode mode;
        double eta;
        double step_norm;
    };

    StepInfo step() {
        const Mode m = select_mode();
        const Draw draw = estimator_.sample(m, fiber_rng_);
        const Matrix tilde = history_.extrapolate(m, coefficients(cfg_.alpha, m));
        const LL1Factors under = with_factor(factors_, m, history_.extrapolate(m, coefficients(cfg_.beta, m)));
        const Matrix g = estimator_.estimate(under, tensor_, draw);
        const double eta =
            cfg_.step.kind == StepRule::Kind::Constant ? cfg_.step.eta : 1.0 / lipschitz_bound(factors_, m);
        if (!std::isfinite(eta) || !(eta > 0.0)) throw NumericalError(k_, m);
        Matrix next = prox(cfg_.reg, m, tilde - eta * g, eta);
        if (!detail::all_finite(next)) throw NumericalError(k_, m);
        const double sn = (next - factors_.factor(m)).norm();
        factors_.factor(m) = std::move(next);
        history_.push(m, factors_.factor(m));
        recent_steps_.pop_back();
        recent_steps_.push_front(sn);
        ++k_;
        ++epoch_updates_[index_of(m)];
        ++block_updates_[index_of(m)];
        return {m, eta, sn};
    }

    /// Runs one epoch and appends its trace row.
    const TraceRow& run_epoch() {
        const std::size_t n = iterations_per_epoch();
        double last = 0.0;
        for (std::size_t i = 0; i < n; ++i) last = step().step_norm;
        ++epoch_;
        TraceRow row;
        row.epoch = epoch_;
        row.iteration = k_;
        const ObjectiveValue obj = objective(factors_, tensor_, cfg_.reg);
        row.phi = obj.phi;
        row.f = obj.f;
        row.elapsed_seconds = clock_.seconds();
        row.step_norm = last;
        row.mode_updates = epoch_updates_;
        epoch_updates_ = {0, 0, 0};
        if (cfg_.gamma_diag) {
            const auto rep = feasibility_check(feasibility_inputs(cfg_, detail::max_lipschitz(factors_), *cfg_.gamma_diag));
            const std::vector<double> steps(recent_steps_.begin(), recent_steps_.end());
            row.lyapunov = lyapunov_surrogate(obj.phi, steps, rep.a_upper);
        }
        trace_.rows.push_back(row);
        return trace_.rows.back();
    }

    /// Runs the remaining epochs of the budget, stopping early once phi < abs_tol.
    RunResult run() {
        while (epoch_ < cfg_.epochs) {
            const TraceRow& row = run_epoch();
            if (row.phi < cfg_.abs_tol) break;
        }
        return {factors_, trace_};
    }

private:
    static LL1Factors prepare_factors(const SolverConfig& cfg, const DenseTensor3& t) {
        cfg.validate(t.dims());
        return initial_factors(cfg, t.dims());
    }

    Mode select_mode() {
        if (cfg_.mode_policy == ModePolicy::Cyclic) return kModes[k_ % 3];
        return kModes[mode_rng_.uniform_index(3)];
    }

    std::vector<double> coefficients(const Schedule& s, Mode m) const {
        std::vector<double> c(cfg_.depth);
        const auto k = static_cast<long long>(block_updates_[index_of(m)]);
        for (std::size_t i = 1; i <= cfg_.depth; ++i) c[i - 1] = s.at(k + 1 - static_cast<long long>(i));
        return c;
    }

    SolverConfig cfg_;
    const DenseTensor3& tensor_;
    LL1Factors factors_;
    BatchResolution batch_;
    GradientEstimator estimator_;
    InertialHistory history_;
    CounterRng mode_rng_;
    CounterRng fiber_rng_;
    std::deque<double> recent_steps_;
    RunTrace trace_;
    std::size_t k_ = 0;
    std::size_t epoch_ = 0;
    std::array<std::size_t, 3> epoch_updates_{0, 0, 0};
    std::array<std::size_t, 3> block_updates_{0, 0, 0};
    detail::Stopwatch clock_;
};

inline RunResult run(const SolverConfig& cfg, const DenseTensor3& t) {
    MidasSolver solver(cfg, t);
    return solver.run();
}

/// Cyclic proximal gradient with eta_n = 1 / lipschitz_bound. One epoch is one
/// sweep over the three modes.
inline RunResult palm_baseline(const SolverConfig& cfg, const DenseTensor3& t) {
    cfg.validate(t.dims());
    detail::Stopwatch clock;
    RunResult res{initial_factors(cfg, t.dims()), {}};
    LL1Factors& f = res.factors;
    res.trace.initial = objective(f, t, cfg.reg);
    double prev_phi = res.trace.initial.phi;
    std::size_t k = 0;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        double last = 0.0;
        for (Mode m : kModes) {
            const double eta = 1.0 / lipschitz_bound(f, m);
            if (!std::isfinite(eta)) throw NumericalError(k, m);
            Matrix next = prox(cfg.reg, m, f.factor(m) - eta * full_gradient(f, t, m), eta);
            if (!detail::all_finite(next)) throw NumericalError(k, m);
            last = (next - f.factor(m)).norm();
            f.factor(m) = std::move(next);
            ++k;
        }
        TraceRow row;
        row.epoch = e;
        row.iteration = k;
        const ObjectiveValue obj = objective(f, t, cfg.reg);
        row.phi = obj.phi;
        row.f = obj.f;
        row.elapsed_seconds = clock.seconds();
        row.step_norm = last;
        row.mode_updates = {1, 1, 1};
        res.trace.rows.push_back(row);
        // Majorization with a 1/L step cannot increase Phi beyond rounding.
        assert(obj.phi <= prev_phi + 1e-10 * std::max(1.0, std::abs(prev_phi)));
        prev_phi = obj.phi;
        if (obj.phi < cfg.abs_tol) break;
    }
    return res;
}

/// Cyclic multiplicative updates A_n <- A_n * (X_(n)^T H_n) / (A_n H_n^T H_n + eps).
/// Needs a nonnegative tensor and strictly positive initial factors.
inline RunResult als_mu_baseline(const SolverConfig& cfg, const DenseTensor3& t, double eps = 1e-12) {
    cfg.validate(t.dims());
    for (std::size_t k = 0; k < t.size(); ++k)
        if (t.data()[k] < 0.0)
            throw std::invalid_argument("ALS-MU needs a nonnegative tensor (entry " + std::to_string(k) + " is negative)");
    detail::Stopwatch clock;
    RunResult res{initial_factors(cfg, t.dims()), {}};
    LL1Factors& f = res.factors;
    for (Mode m : kModes)
        if (f.factor(m).minCoeff() < 0.0) throw std::invalid_argument("ALS-MU needs nonnegative initial factors");
    res.trace.initial = objective(f, t, cfg.reg);
    std::size_t k = 0;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        double last = 0.0;
        for (Mode m : kModes) {
            const Matrix num = mttkrp(t, f, m);
            const Matrix den = (f.factor(m) * gram_H(f, m)).array() + eps;
            Matrix next = f.factor(m).cwiseProduct(num.cwiseQuotient(den));
            if (!detail::all_finite(next)) throw NumericalError(k, m);
            last = (next - f.factor(m)).norm();
            f.factor(m) = std::move(next);
            ++k;
        }
        TraceRow row;
        row.epoch = e;
        row.iteration = k;
        const ObjectiveValue obj = objective(f, t, cfg.reg);
        row.phi = obj.phi;
        row.f = obj.f;
        row.elapsed_seconds = clock.seconds();
        row.step_norm = last;
        row.mode_updates = {1, 1, 1};
        res.trace.rows.push_back(row);
        if (obj.phi < cfg.abs_tol) break;
    }
    return res;
}

inline double relative_residual(const LL1Factors& f, const DenseTensor3& t) {
    const double xn = t.squared_norm();
    return xn > 0.0 ? std::sqrt(residual_squared_norm(f, t) / xn) : std::sqrt(residual_squared_norm(f, t));
}

}  // namespace midas
