#pragma once

// File formats:
//   tensor  "DTENSOR 1 <I1> <I2> <I3>\n" + I1*I2*I3 little-endian float64, mode-1 fastest
//   matrix  the tensor format with dims (rows, cols, 1)
//   factors directory with A1.dten, A2.dten, A3.dten and ranks.txt
//   config  key=value lines, '#' starts a comment
// Numbers are written with std::to_chars (shortest round-trip, locale independent).

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "midas/ll1.hpp"
#include "midas/metrics.hpp"
#include "midas/prox.hpp"
#include "midas/rng.hpp"
#include "midas/solver.hpp"
#include "midas/tensor.hpp"

namespace midas {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- numbers

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view s, std::string_view what) {
    const std::string t = trim(s);
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (t.empty() || res.ec != std::errc() || res.ptr != last)
        throw FormatError("cannot parse " + std::string(what) + " from '" + t + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    const std::string t = trim(s);
    std::uint64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw FormatError("cannot parse " + std::string(what) + " from '" + t + "'");
    return v;
}

// ---------------------------------------------------------------- tensor files

inline constexpr std::string_view kTensorMagic = "DTENSOR";

inline std::string encode_tensor(const DenseTensor3& t) {
    const Dims& d = t.dims();
    std::string out = std::string(kTensorMagic) + " 1 " + std::to_string(d[0]) + " " + std::to_string(d[1]) + " " +
                      std::to_string(d[2]) + "\n";
    const std::size_t header = out.size();
    out.resize(header + 8 * t.size());
    const auto data = t.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(data[k]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(out.data() + header + 8 * k, &bits, 8);
    }
    return out;
}

/// Parses a tensor file image. Errors name the byte offset of the problem.
inline DenseTensor3 decode_tensor(std::string_view bytes) {
    const auto fail = [](std::size_t offset, const std::string& msg) -> FormatError {
        return FormatError("tensor file: " + msg + " at byte offset " + std::to_string(offset));
    };
    const std::size_t eol = bytes.find('\n');
    if (eol == std::string_view::npos) throw fail(bytes.size(), "header line is not terminated");
    const std::string_view header = bytes.substr(0, eol);

    std::vector<std::pair<std::size_t, std::string_view>> tokens;
    for (std::size_t i = 0; i < header.size();) {
        if (header[i] == ' ') {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < header.size() && header[j] != ' ') ++j;
        tokens.emplace_back(i, header.substr(i, j - i));
        i = j;
    }
    if (tokens.empty() || tokens[0].second != kTensorMagic) throw fail(0, "missing DTENSOR magic");
    if (tokens.size() < 2 || tokens[1].second != "1")
        throw fail(tokens.size() < 2 ? eol : tokens[1].first, "unsupported format version");
    if (tokens.size() != 5) throw fail(tokens.size() < 5 ? eol : tokens[5].first, "expected exactly three dimensions");
    Dims dims{};
    for (std::size_t n = 0; n < 3; ++n) {
        const auto [off, tok] = tokens[2 + n];
        std::size_t v = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            throw fail(off + static_cast<std::size_t>(res.ptr - tok.data()), "invalid dimension '" + std::string(tok) + "'");
        if (v == 0) throw fail(off, "dimension must be positive");
        dims[n] = v;
    }
    std::size_t count = 0;
    if (__builtin_mul_overflow(dims[0], dims[1], &count) || __builtin_mul_overflow(count, dims[2], &count) ||
        count > std::numeric_limits<std::size_t>::max() / 8)
        throw fail(tokens[2].first, "dimensions overflow");
    const std::size_t start = eol + 1;
    const std::size_t expected = 8 * count;
    const std::size_t got = bytes.size() - start;
    if (got < expected)
        throw fail(bytes.size(), "payload truncated: " + std::to_string(got) + " bytes, expected " + std::to_string(expected));
    if (got > expected) throw fail(start + expected, "trailing bytes after payload");
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes.data() + start + 8 * k, 8);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        values[k] = std::bit_cast<double>(bits);
        if (!std::isfinite(values[k])) throw fail(start + 8 * k, "non-finite value");
    }
    return DenseTensor3(dims, std::move(values));
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& p, std::string_view bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline void write_tensor(const std::filesystem::path& p, const DenseTensor3& t) { write_file_bytes(p, encode_tensor(t)); }

inline DenseTensor3 read_tensor(const std::filesystem::path& p) { return decode_tensor(read_file_bytes(p)); }

inline DenseTensor3 matrix_as_tensor(const Matrix& m) {
    const Dims d{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1};
    return DenseTensor3(d, std::vector<double>(m.data(), m.data() + m.size()));
}

inline void write_matrix(const std::filesystem::path& p, const Matrix& m) {
    if (m.size() == 0) throw std::invalid_argument("cannot store an empty matrix");
    write_tensor(p, matrix_as_tensor(m));
}

inline Matrix read_matrix(const std::filesystem::path& p) {
    const DenseTensor3 t = read_tensor(p);
    if (t.dims()[2] != 1) throw FormatError(p.string() + ": a matrix file needs third dimension 1");
    return t.slice(0);
}

/// Sparse coordinate import: lines "i1,i2,i3,value" with 1-based indices.
/// Missing entries are 0. Without explicit dims the extent is the largest index seen.
inline DenseTensor3 read_csv_tensor(std::istream& in, std::optional<Dims> dims = std::nullopt) {
    struct Entry {
        std::array<std::size_t, 3> idx;
        double v;
    };
    std::vector<Entry> entries;
    Dims extent{0, 0, 0};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(t);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() != 4) {
            if (entries.empty() && lineno == 1) continue;  // header row
            throw FormatError("csv line " + std::to_string(lineno) + ": expected i1,i2,i3,value");
        }
        Entry e{};
        try {
            for (std::size_t n = 0; n < 3; ++n) {
                const auto v = parse_u64(cells[n], "index");
                if (v == 0) throw FormatError("indices are 1-based");
                e.idx[n] = static_cast<std::size_t>(v - 1);
                extent[n] = std::max(extent[n], e.idx[n] + 1);
            }
            e.v = parse_double(cells[3], "value");
        } catch (const FormatError& err) {
            if (entries.empty() && lineno == 1) continue;
            throw FormatError("csv line " + std::to_string(lineno) + ": " + err.what());
        }
        entries.push_back(e);
    }
    const Dims d = dims ? *dims : extent;
    if (d[0] == 0 || d[1] == 0 || d[2] == 0) throw FormatError("csv tensor has no entries");
    DenseTensor3 out(d);
    for (const auto& e : entries) {
        if (e.idx[0] >= d[0] || e.idx[1] >= d[1] || e.idx[2] >= d[2])
            throw FormatError("csv entry outside the declared dimensions");
        out(e.idx[0], e.idx[1], e.idx[2]) = e.v;
    }
    return out;
}

// ---------------------------------------------------------------- factors

inline std::string format_ranks(const RankVector& r) {
    std::string s;
    for (std::size_t i = 0; i < r.terms(); ++i) s += (i ? "," : "") + std::to_string(r.rank(i));
    return s;
}

inline RankVector parse_ranks(std::string_view text) {
    std::vector<std::size_t> out;
    std::stringstream ss{std::string(text)};
    for (std::string c; std::getline(ss, c, ',');) out.push_back(static_cast<std::size_t>(parse_u64(c, "rank")));
    if (out.empty()) throw FormatError("empty rank list");
    return RankVector(out);
}

inline void write_factors(const std::filesystem::path& dir, const LL1Factors& f) {
    std::filesystem::create_directories(dir);
    for (Mode m : kModes) write_matrix(dir / ("A" + std::to_string(mode_number(m)) + ".dten"), f.factor(m));
    write_file_bytes(dir / "ranks.txt", format_ranks(f.ranks) + "\n");
}

inline LL1Factors read_factors(const std::filesystem::path& dir) {
    LL1Factors f{read_matrix(dir / "A1.dten"), read_matrix(dir / "A2.dten"), read_matrix(dir / "A3.dten"),
                 parse_ranks(trim(read_file_bytes(dir / "ranks.txt")))};
    f.validate();
    return f;
}

// ---------------------------------------------------------------- config

inline std::string format_regularizer_spec(const RegularizerSpec& r) {
    if (r.per_mode[0] == r.per_mode[1] && r.per_mode[1] == r.per_mode[2]) return to_string(r.per_mode[0]);
    return to_string(r.per_mode[0]) + "," + to_string(r.per_mode[1]) + "," + to_string(r.per_mode[2]);
}

inline Regularizer parse_regularizer(std::string_view text) {
    const std::string t = trim(text);
    if (t == "none") return Regularizer::none();
    if (t == "nonneg") return Regularizer::nonnegative();
    if (t.rfind("ridge:", 0) == 0) return Regularizer::ridge(parse_double(t.substr(6), "ridge lambda"));
    throw FormatError("unknown regularizer '" + t + "' (none, nonneg, ridge:<lambda>)");
}

inline RegularizerSpec parse_regularizer_spec(std::string_view text) {
    std::vector<std::string> parts;
    std::stringstream ss{std::string(text)};
    for (std::string c; std::getline(ss, c, ',');) parts.push_back(c);
    if (parts.size() == 1) return RegularizerSpec::uniform(parse_regularizer(parts[0]));
    if (parts.size() != 3) throw FormatError("reg takes one regularizer or three comma-separated ones");
    return {{parse_regularizer(parts[0]), parse_regularizer(parts[1]), parse_regularizer(parts[2])}};
}

/// Parses key=value text on top of the SolverConfig defaults. Unknown or
/// repeated keys are errors. `ranks` may be a single value when `R` is given.
inline SolverConfig parse_config(std::string_view text) {
    SolverConfig cfg;
    std::map<std::string, std::string> kv;
    std::stringstream ss{std::string(text)};
    std::size_t lineno = 0;
    for (std::string line; std::getline(ss, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
            throw FormatError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    static const std::vector<std::string> known{"estimator", "t",      "alpha0", "beta0",       "eta",        "B",
                                                "epochs",    "seed",   "ranks",  "R",           "reg",        "mode_policy",
                                                "sarah_q",   "gamma_diag", "abs_tol"};
    for (const auto& [k, v] : kv)
        if (std::find(known.begin(), known.end(), k) == known.end()) throw FormatError("unknown config key '" + k + "'");

    const auto get = [&](const char* k) -> const std::string* {
        const auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("estimator")) cfg.estimator.type = parse_estimator_type(*v);
    if (auto v = get("sarah_q")) cfg.estimator.sarah_q = static_cast<std::size_t>(parse_u64(*v, "sarah_q"));
    if (auto v = get("t")) cfg.depth = static_cast<std::size_t>(parse_u64(*v, "t"));
    if (auto v = get("alpha0")) cfg.alpha = Schedule::ramp(parse_double(*v, "alpha0"));
    if (auto v = get("beta0")) cfg.beta = Schedule::ramp(parse_double(*v, "beta0"));
    if (auto v = get("eta")) {
        if (*v == "lipschitz")
            cfg.step = StepRule::inverse_lipschitz();
        else
            cfg.step = StepRule::constant(parse_double(*v, "eta"));
    }
    if (auto v = get("B")) cfg.batch = static_cast<std::size_t>(parse_u64(*v, "B"));
    if (auto v = get("epochs")) cfg.epochs = static_cast<std::size_t>(parse_u64(*v, "epochs"));
    if (auto v = get("seed")) cfg.seed = parse_u64(*v, "seed");
    if (auto v = get("ranks")) cfg.ranks = parse_ranks(*v);
    if (auto v = get("R")) {
        const auto r = static_cast<std::size_t>(parse_u64(*v, "R"));
        if (r == 0) throw FormatError("R must be positive");
        if (cfg.ranks.terms() == 1 && r > 1)
            cfg.ranks = RankVector(std::vector<std::size_t>(r, cfg.ranks.rank(0)));
        else if (cfg.ranks.terms() != r)
            throw FormatError("R = " + *v + " does not match the " + std::to_string(cfg.ranks.terms()) + " ranks given");
    }
    if (auto v = get("reg")) cfg.reg = parse_regularizer_spec(*v);
    if (auto v = get("mode_policy")) {
        if (*v == "uniform")
            cfg.mode_policy = ModePolicy::UniformRandom;
        else if (*v == "cyclic")
            cfg.mode_policy = ModePolicy::Cyclic;
        else
            throw FormatError("mode_policy must be uniform or cyclic");
    }
    if (auto v = get("gamma_diag")) cfg.gamma_diag = parse_double(*v, "gamma_diag");
    if (auto v = get("abs_tol")) cfg.abs_tol = parse_double(*v, "abs_tol");
    return cfg;
}

inline SolverConfig read_config(const std::filesystem::path& p) { return parse_config(read_file_bytes(p)); }

/// Every key with its resolved value; parse_config(echo_config(c)) == c.
inline std::string echo_config(const SolverConfig& cfg) {
    if (cfg.alpha.kind != Schedule::Kind::Ramp || cfg.beta.kind != Schedule::Kind::Ramp)
        throw std::invalid_argument("only ramp schedules have a config representation");
    std::ostringstream o;
    o << "estimator=" << to_string(cfg.estimator.type) << "\n";
    o << "sarah_q=" << cfg.estimator.sarah_q << "\n";
    o << "t=" << cfg.depth << "\n";
    o << "alpha0=" << format_double(cfg.alpha.scale) << "\n";
    o << "beta0=" << format_double(cfg.beta.scale) << "\n";
    o << "eta=" << (cfg.step.kind == StepRule::Kind::InverseLipschitz ? "lipschitz" : format_double(cfg.step.eta))
      << "\n";
    o << "B=" << cfg.batch << "\n";
    o << "epochs=" << cfg.epochs << "\n";
    o << "seed=" << cfg.seed << "\n";
    o << "ranks=" << format_ranks(cfg.ranks) << "\n";
    o << "R=" << cfg.ranks.terms() << "\n";
    o << "reg=" << format_regularizer_spec(cfg.reg) << "\n";
    o << "mode_policy=" << (cfg.mode_policy == ModePolicy::Cyclic ? "cyclic" : "uniform") << "\n";
    if (cfg.gamma_diag) o << "gamma_diag=" << format_double(*cfg.gamma_diag) << "\n";
    o << "abs_tol=" << format_double(cfg.abs_tol) << "\n";
    return o.str();
}

// ---------------------------------------------------------------- trace and metrics

/// `with_timing = false` writes 0 for elapsed_s so runs compare bitwise.
inline std::string trace_csv(const RunTrace& trace, bool with_timing = true) {
    std::ostringstream o;
    o << "epoch,iter,phi,f,elapsed_s,step_norm,lyapunov_surrogate\n";
    for (const auto& r : trace.rows) {
        o << r.epoch << "," << r.iteration << "," << format_double(r.phi) << "," << format_double(r.f) << ","
          << format_double(with_timing ? r.elapsed_seconds : 0.0) << "," << format_double(r.step_norm) << ","
          << (r.lyapunov ? format_double(*r.lyapunov) : std::string()) << "\n";
    }
    return o.str();
}

inline std::string format_metric_report(const MetricReport& r) {
    std::ostringstream o;
    o << "psnr=" << format_double(r.psnr) << " (ideal inf)\n";
    o << "rmse=" << format_double(r.rmse) << " (ideal 0)\n";
    o << "sam=" << format_double(r.sam) << " (ideal 0)\n";
    o << "cc=" << format_double(r.cc) << " (ideal 1)\n";
    o << "sam_skipped_fibers=" << r.sam_skipped << "\n";
    o << "cc_skipped_bands=" << r.cc_skipped << "\n";
    return o.str();
}

inline std::string metric_report_csv(const MetricReport& r) {
    return "psnr,rmse,sam,cc,sam_skipped,cc_skipped\n" + format_double(r.psnr) + "," + format_double(r.rmse) + "," +
           format_double(r.sam) + "," + format_double(r.cc) + "," + std::to_string(r.sam_skipped) + "," +
           std::to_string(r.cc_skipped) + "\n";
}

// ---------------------------------------------------------------- synthetic data

struct SynthSpec {
    Dims dims{};
    RankVector ranks{std::vector<std::size_t>{1}};
    double snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
};

struct SynthData {
    DenseTensor3 tensor;
    LL1Factors truth;
};

/// Uniform(0, 1) factors and Gaussian noise rescaled so that
/// ||X_clean||^2 / ||noise||^2 = 10^(snr_db / 10) exactly.
inline SynthData synthesize(const SynthSpec& spec) {
    if (spec.dims[0] == 0 || spec.dims[1] == 0 || spec.dims[2] == 0)
        throw std::invalid_argument("synthetic dimensions must be positive");
    if (std::isnan(spec.snr_db)) throw std::invalid_argument("SNR must be a number or +inf");
    CounterRng frng(spec.seed, Stream::SynthFactors);
    LL1Factors truth = random_factors(spec.dims, spec.ranks, frng);
    DenseTensor3 x = reconstruct(truth);
    if (std::isfinite(spec.snr_db)) {
        CounterRng nrng(spec.seed, Stream::Noise);
        std::vector<double> noise(x.size());
        double nn = 0.0;
        for (double& v : noise) {
            v = nrng.normal();
            nn += v * v;
        }
        const double scale = std::sqrt(x.squared_norm() / (nn * std::pow(10.0, spec.snr_db / 10.0)));
        auto d = x.data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * noise[k];
    }
    return {std::move(x), std::move(truth)};
}

}  // namespace midas
