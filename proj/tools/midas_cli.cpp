// midas_cli: decompose, synth, metrics and bench front end.
//
// Exit codes: 0 success, 1 usage / input / I/O error, 3 numerical abort.

#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "midas/midas.hpp"

namespace fs = std::filesystem;
using namespace midas;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNumerical = 3;

DenseTensor3 load_tensor(const fs::path& p) {
    if (p.extension() == ".csv") {
        std::ifstream in(p);
        if (!in) throw std::runtime_error("cannot open " + p.string());
        return read_csv_tensor(in);
    }
    return read_tensor(p);
}

void warn_infeasible(const SolverConfig& cfg, const DenseTensor3& x) {
    const LL1Factors init = initial_factors(cfg, x.dims());
    double L = 0.0;
    for (Mode m : kModes) L = std::max(L, lipschitz_bound(init, m));
    const auto rep = feasibility_check(feasibility_inputs(cfg, L, cfg.gamma_diag.value_or(0.0)));
    if (!rep.feasible)
        std::cerr << "warning: step and inertia parameters fail the descent condition at the initial point"
                  << " (delta = " << format_double(rep.delta)
                  << ", largest feasible eta = " << format_double(rep.max_feasible_eta) << "); running anyway\n";
}

struct DecomposeArgs {
    std::string tensor, config, out;
    std::optional<std::uint64_t> seed;
    bool no_timing = false;
};

int cmd_decompose(const DecomposeArgs& a) {
    const DenseTensor3 x = load_tensor(a.tensor);
    SolverConfig cfg = a.config.empty() ? SolverConfig{} : read_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    const fs::path out(a.out);
    fs::create_directories(out);
    write_file_bytes(out / "config.resolved.txt", echo_config(cfg));

    MidasSolver solver(cfg, x);
    for (const auto& note : solver.trace().notes) std::cerr << "warning: " << note << "\n";
    warn_infeasible(cfg, x);
    const RunResult res = solver.run();

    write_factors(out / "factors", res.factors);
    write_file_bytes(out / "trace.csv", trace_csv(res.trace, !a.no_timing));
    const MetricReport rep = metric_report(x, reconstruct(res.factors));
    std::string metrics = format_metric_report(rep);
    metrics += "initial_phi=" + format_double(res.trace.initial.phi) + "\n";
    metrics += "initial_f=" + format_double(res.trace.initial.f) + "\n";
    const ObjectiveValue fin = objective(res.factors, x, cfg.reg);
    metrics += "final_phi=" + format_double(fin.phi) + "\n";
    metrics += "final_f=" + format_double(fin.f) + "\n";
    metrics += "epochs_run=" + std::to_string(res.trace.rows.size()) + "\n";
    write_file_bytes(out / "metrics.txt", metrics);
    std::cout << metrics;
    return 0;
}

Dims parse_dims(const std::string& s) {
    std::vector<std::size_t> v;
    std::stringstream ss(s);
    for (std::string c; std::getline(ss, c, ',');) v.push_back(static_cast<std::size_t>(parse_u64(c, "dimension")));
    if (v.size() != 3) throw FormatError("--dims takes three comma-separated values");
    return {v[0], v[1], v[2]};
}

struct SynthArgs {
    std::string dims, ranks, snr = "inf", out;
    std::size_t R = 0;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    SynthSpec spec;
    spec.dims = parse_dims(a.dims);
    spec.ranks = parse_ranks(a.ranks);
    if (a.R != 0) {
        if (spec.ranks.terms() == 1 && a.R > 1)
            spec.ranks = RankVector(std::vector<std::size_t>(a.R, spec.ranks.rank(0)));
        else if (spec.ranks.terms() != a.R)
            throw FormatError("--R does not match the number of ranks");
    }
    spec.snr_db = (a.snr == "inf" || a.snr == "+inf") ? std::numeric_limits<double>::infinity() : parse_double(a.snr, "snr");
    spec.seed = a.seed;
    const SynthData data = synthesize(spec);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_tensor(out, data.tensor);
    write_factors(fs::path(out.string() + ".truth"), data.truth);
    return 0;
}

struct MetricsArgs {
    std::string tensor, factors;
    bool csv = false;
};

int cmd_metrics(const MetricsArgs& a) {
    const DenseTensor3 x = load_tensor(a.tensor);
    const LL1Factors f = read_factors(a.factors);
    f.validate(&x.dims());
    const MetricReport rep = metric_report(x, reconstruct(f));
    std::cout << (a.csv ? metric_report_csv(rep) : format_metric_report(rep));
    return 0;
}

struct BenchArgs {
    std::string tensor, grid, out;
    std::optional<std::uint64_t> seed;
    bool no_timing = false;
};

// Grid file: key=value lines. `estimators`, `t` and `baselines` are
// comma lists; `baseline_max_iter` caps baseline sweeps; every other key is
// a solver config key shared by all cells.
struct Grid {
    std::vector<EstimatorType> estimators;
    std::vector<std::size_t> depths;
    std::vector<std::string> baselines;
    std::optional<std::size_t> baseline_max_iter;
    SolverConfig base;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string c; std::getline(ss, c, ',');)
        if (!trim(c).empty()) out.push_back(trim(c));
    return out;
}

Grid parse_grid(const std::string& text) {
    Grid g;
    std::string rest;
    std::stringstream ss(text);
    for (std::string line; std::getline(ss, line);) {
        std::string body = line;
        if (const auto h = body.find('#'); h != std::string::npos) body.resize(h);
        const auto eq = body.find('=');
        const std::string key = eq == std::string::npos ? trim(body) : trim(body.substr(0, eq));
        const std::string val = eq == std::string::npos ? std::string() : trim(body.substr(eq + 1));
        if (key == "estimators") {
            for (const auto& e : split_list(val)) g.estimators.push_back(parse_estimator_type(e));
        } else if (key == "t") {
            for (const auto& e : split_list(val)) g.depths.push_back(static_cast<std::size_t>(parse_u64(e, "t")));
        } else if (key == "baselines") {
            for (const auto& e : split_list(val)) {
                if (e != "palm" && e != "als_mu") throw FormatError("unknown baseline '" + e + "' (palm, als_mu)");
                g.baselines.push_back(e);
            }
        } else if (key == "baseline_max_iter") {
            g.baseline_max_iter = static_cast<std::size_t>(parse_u64(val, "baseline_max_iter"));
        } else {
            rest += line + "\n";
        }
    }
    g.base = parse_config(rest);
    if (!g.estimators.empty() && g.depths.empty()) g.depths.push_back(g.base.depth);
    return g;
}

int cmd_bench(const BenchArgs& a) {
    const DenseTensor3 x = load_tensor(a.tensor);
    Grid grid = parse_grid(read_file_bytes(a.grid));
    if (a.seed) grid.base.seed = *a.seed;
    const fs::path out(a.out);
    fs::create_directories(out);

    struct Cell {
        std::string name, estimator, baseline;
        std::size_t depth = 0;
        SolverConfig cfg;
    };
    std::vector<Cell> cells;
    for (EstimatorType e : grid.estimators)
        for (std::size_t t : grid.depths) {
            Cell c{to_string(e) + "_t" + std::to_string(t), to_string(e), "", t, grid.base};
            c.cfg.estimator.type = e;
            c.cfg.depth = t;
            cells.push_back(std::move(c));
        }
    for (const auto& b : grid.baselines) {
        Cell c{b, "", b, 0, grid.base};
        if (grid.baseline_max_iter) c.cfg.epochs = std::min(c.cfg.epochs, *grid.baseline_max_iter);
        cells.push_back(std::move(c));
    }

    std::string summary = "cell,estimator,t,status,epochs_run,final_f,final_phi,psnr,wall_s,message\n";
    int failures = 0;
    for (const auto& c : cells) {
        const fs::path dir = out / c.name;
        fs::create_directories(dir);
        std::string row = c.name + "," + c.estimator + "," + (c.baseline.empty() ? std::to_string(c.depth) : "") + ",";
        try {
            detail::Stopwatch clock;
            RunResult res;
            if (c.baseline == "palm")
                res = palm_baseline(c.cfg, x);
            else if (c.baseline == "als_mu")
                res = als_mu_baseline(c.cfg, x);
            else {
                MidasSolver solver(c.cfg, x);
                for (const auto& note : solver.trace().notes) std::cerr << "warning: [" << c.name << "] " << note << "\n";
                res = solver.run();
            }
            const double wall = a.no_timing ? 0.0 : clock.seconds();
            write_file_bytes(dir / "trace.csv", trace_csv(res.trace, !a.no_timing));
            write_factors(dir / "factors", res.factors);
            const ObjectiveValue last = res.trace.rows.empty() ? res.trace.initial
                                                               : ObjectiveValue{res.trace.rows.back().f, 0.0,
                                                                                res.trace.rows.back().phi};
            row += "ok," + std::to_string(res.trace.rows.size()) + "," + format_double(last.f) + "," +
                   format_double(last.phi) + "," + format_double(psnr(x, reconstruct(res.factors))) + "," +
                   format_double(wall) + ",";
        } catch (const std::exception& e) {
            ++failures;
            std::string msg = e.what();
            for (char& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            row += "failed,,,,,," + msg;
            std::cerr << "error: [" << c.name << "] " << e.what() << "\n";
        }
        summary += row + "\n";
    }
    write_file_bytes(out / "summary.csv", summary);
    std::cout << summary;
    return failures == 0 ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic inertial rank-(L,L,1) block-term decomposition"};
    app.require_subcommand(1);

    DecomposeArgs dec;
    auto* d = app.add_subcommand("decompose", "Fit LL1 factors to a tensor");
    d->add_option("--tensor", dec.tensor, "tensor file (.dten binary or .csv coordinates)")->required();
    d->add_option("--config", dec.config, "key=value run configuration");
    d->add_option("--out", dec.out, "output directory")->required();
    d->add_option("--seed", dec.seed, "override the configured seed");
    d->add_flag("--no-timing", dec.no_timing, "write 0 for elapsed_s");

    SynthArgs syn;
    auto* s = app.add_subcommand("synth", "Generate an exact-rank tensor with optional noise");
    s->add_option("--dims", syn.dims, "I1,I2,I3")->required();
    s->add_option("--ranks", syn.ranks, "L_1,...,L_R")->required();
    s->add_option("--R", syn.R, "number of terms (replicates a single rank)");
    s->add_option("--snr", syn.snr, "signal-to-noise ratio in dB, or inf");
    s->add_option("--seed", syn.seed, "random seed");
    s->add_option("--out", syn.out, "output tensor file; truth factors go to <out>.truth/")->required();

    MetricsArgs met;
    auto* m = app.add_subcommand("metrics", "Compare a tensor with the reconstruction of stored factors");
    m->add_option("--tensor", met.tensor, "reference tensor file")->required();
    m->add_option("--factors", met.factors, "factor directory")->required();
    m->add_flag("--csv", met.csv, "machine-readable output");

    BenchArgs ben;
    auto* b = app.add_subcommand("bench", "Run an estimator x depth grid plus baselines");
    b->add_option("--tensor", ben.tensor, "tensor file (.dten binary or .csv coordinates)")->required();
    b->add_option("--grid", ben.grid, "grid file")->required();
    b->add_option("--out", ben.out, "output directory")->required();
    b->add_option("--seed", ben.seed, "override the grid seed");
    b->add_flag("--no-timing", ben.no_timing, "write 0 for all timing columns");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*d) return cmd_decompose(dec);
        if (*s) return cmd_synth(syn);
        if (*m) return cmd_metrics(met);
        if (*b) return cmd_bench(ben);
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
