#pragma once

// Stochastic estimators of the block gradient grad_{A_n} f over fiber batches.
//
// Every estimator is evaluated at the extrapolated "under" point. Its
// mean-square error given the past is bounded by a vanishing sequence plus a
// multiple of the last t+1 squared iterate steps; estimator_mse_probe measures
// that error by Monte Carlo.
//
// SAGA keeps one stored gradient per fixed fiber bin (J_n / B bins per mode)
// instead of one per fiber. SARAH uses the recursive difference
//   v <- g_batch(current) - g_batch(previous) + v
// with a full-gradient restart every q mode-n updates.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "midas/ll1.hpp"
#include "midas/rng.hpp"
#include "midas/tensor.hpp"

namespace midas {

/// Fiber-sampled gradient (1 / (I_n |F|)) (A_n H_F^T H_F - X_F^T H_F).
/// With F = all fibers this equals full_gradient, because I_n J_n = I1 I2 I3.
inline Matrix sgd_estimate(const LL1Factors& under, const DenseTensor3& t, const FiberBatch& batch) {
    const Mode m = batch.mode();
    const Matrix h = build_H_rows(under, m, batch.indices());
    const Matrix x = gather_fiber_rows(t, batch);
    const double scale = 1.0 / (static_cast<double>(t.dim(m)) * static_cast<double>(batch.size()));
    const Matrix hth = h.transpose() * h;
    return scale * (under.factor(m) * hth - x.transpose() * h);
}

enum class EstimatorType { Sgd, Saga, Sarah };

struct EstimatorKind {
    EstimatorType type = EstimatorType::Saga;
    std::size_t sarah_q = 0;  // restart period in mode-n updates; 0 = one epoch's worth

    bool operator==(const EstimatorKind&) const = default;
};

inline std::string to_string(EstimatorType t) {
    switch (t) {
        case EstimatorType::Sgd: return "sgd";
        case EstimatorType::Saga: return "saga";
        case EstimatorType::Sarah: return "sarah";
    }
    return "sgd";
}

inline EstimatorType parse_estimator_type(const std::string& s) {
    if (s == "sgd" || s == "SGD") return EstimatorType::Sgd;
    if (s == "saga" || s == "SAGA") return EstimatorType::Saga;
    if (s == "sarah" || s == "SARAH") return EstimatorType::Sarah;
    throw std::invalid_argument("unknown estimator '" + s + "' (expected sgd, saga or sarah)");
}

/// Stored-gradient table over fixed disjoint fiber bins.
class SagaState {
public:
    SagaState() = default;

    /// Bins come from a seeded permutation of each mode's fibers. Each batch
    /// size must divide J_n.
    SagaState(const Dims& dims, const std::array<std::size_t, 3>& batch, std::uint64_t seed) : dims_(dims) {
        for (Mode m : kModes) {
            const auto n = index_of(m);
            const std::size_t jn = fiber_count(dims, m);
            if (batch[n] == 0 || jn % batch[n] != 0)
                throw std::invalid_argument("SAGA batch size " + std::to_string(batch[n]) + " does not divide J_" +
                                            std::to_string(n + 1) + " = " + std::to_string(jn));
            CounterRng rng(seed, Stream::Bins, n);
            const auto perm = rng.permutation(jn);
            const std::size_t nb = jn / batch[n];
            bins_[n].resize(nb);
            for (std::size_t b = 0; b < nb; ++b) {
                bins_[n][b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * batch[n]),
                                   perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch[n]));
                std::sort(bins_[n][b].begin(), bins_[n][b].end());
            }
        }
    }

    std::size_t bin_count(Mode m) const { return bins_[index_of(m)].size(); }
    const std::vector<std::size_t>& bin(Mode m, std::size_t b) const { return bins_[index_of(m)].at(b); }
    FiberBatch bin_batch(Mode m, std::size_t b) const { return FiberBatch(m, bin(m, b), dims_); }
    bool warm() const { return warm_; }

    const Matrix& stored(Mode m, std::size_t b) const { return table_[index_of(m)].at(b); }
    const Matrix& running_mean(Mode m) const { return mean_[index_of(m)]; }

    /// Fills every bin with its gradient at `point`.
    void warm_start(const LL1Factors& point, const DenseTensor3& t) {
        for (Mode m : kModes) {
            const auto n = index_of(m);
            table_[n].clear();
            for (std::size_t b = 0; b < bins_[n].size(); ++b) table_[n].push_back(sgd_estimate(point, t, bin_batch(m, b)));
            recompute_mean(m);
            updates_[n] = 0;
        }
        warm_ = true;
    }

    struct Evaluation {
        Matrix estimate;
        Matrix fresh;
    };

    /// fresh - stored[bin] + mean, without touching the table.
    Evaluation evaluate(const LL1Factors& under, const DenseTensor3& t, Mode m, std::size_t b) const {
        if (!warm_) throw std::logic_error("SAGA table used before warm_start");
        Matrix fresh = sgd_estimate(under, t, bin_batch(m, b));
        Matrix est = (fresh - stored(m, b)) + running_mean(m);
        return {std::move(est), std::move(fresh)};
    }

    /// Stores `fresh` for bin b and updates the running mean.
    void commit(Mode m, std::size_t b, Matrix fresh) {
        const auto n = index_of(m);
        const double nb = static_cast<double>(bins_[n].size());
        mean_[n] += (fresh - table_[n][b]) / nb;
        table_[n][b] = std::move(fresh);
        // Incremental updates drift; resync once per sweep of the table.
        if (++updates_[n] % bins_[n].size() == 0) recompute_mean(m);
        assert(mean_consistency_error(m) <= 1e-10 * (1.0 + mean_[n].norm()));
    }

    Matrix estimate(const LL1Factors& under, const DenseTensor3& t, Mode m, std::size_t b) {
        auto ev = evaluate(under, t, m, b);
        commit(m, b, std::move(ev.fresh));
        return std::move(ev.estimate);
    }

    /// ||running_mean - mean(table)||_F.
    double mean_consistency_error(Mode m) const {
        const auto n = index_of(m);
        Matrix exact = Matrix::Zero(mean_[n].rows(), mean_[n].cols());
        for (const auto& g : table_[n]) exact += g;
        exact /= static_cast<double>(table_[n].size());
        return (exact - mean_[n]).norm();
    }

private:
    void recompute_mean(Mode m) {
        const auto n = index_of(m);
        Matrix s = Matrix::Zero(table_[n].front().rows(), table_[n].front().cols());
        for (const auto& g : table_[n]) s += g;
        mean_[n] = s / static_cast<double>(table_[n].size());
    }

    Dims dims_{1, 1, 1};
    std::array<std::vector<std::vector<std::size_t>>, 3> bins_;
    std::array<std::vector<Matrix>, 3> table_;
    std::array<Matrix, 3> mean_;
    std::array<std::size_t, 3> updates_{0, 0, 0};
    bool warm_ = false;
};

/// Recursive SARAH direction per mode with periodic full-gradient restarts.
class SarahState {
public:
    SarahState() = default;
    explicit SarahState(const std::array<std::size_t, 3>& restart_period) : q_(restart_period) {
        for (auto q : q_)
            if (q == 0) throw std::invalid_argument("SARAH restart period must be >= 1");
    }

    std::size_t counter(Mode m) const { return counter_[index_of(m)]; }
    std::size_t restart_period(Mode m) const { return q_[index_of(m)]; }
    const Matrix& direction(Mode m) const { return v_[index_of(m)]; }

    Matrix evaluate(const LL1Factors& under, const DenseTensor3& t, const FiberBatch& batch) const {
        const auto n = index_of(batch.mode());
        if (counter_[n] == 0 || !prev_[n]) return full_gradient(under, t, batch.mode());
        return (sgd_estimate(under, t, batch) - sgd_estimate(*prev_[n], t, batch)) + v_[n];
    }

    void commit(Mode m, const LL1Factors& under, Matrix direction) {
        const auto n = index_of(m);
        v_[n] = std::move(direction);
        prev_[n] = under;
        counter_[n] = (counter_[n] + 1) % q_[n];
    }

    Matrix estimate(const LL1Factors& under, const DenseTensor3& t, const FiberBatch& batch) {
        Matrix v = evaluate(under, t, batch);
        commit(batch.mode(), under, v);
        return v;
    }

private:
    std::array<std::size_t, 3> q_{1, 1, 1};
    std::array<Matrix, 3> v_;
    std::array<std::optional<LL1Factors>, 3> prev_;
    std::array<std::size_t, 3> counter_{0, 0, 0};
};

/// One random draw for a mode-n estimate: a fiber batch, plus the bin id for SAGA.
struct Draw {
    FiberBatch batch;
    std::size_t bin = 0;
};

/// Owns the persistent state of one estimator for a whole run.
class GradientEstimator {
public:
    GradientEstimator(EstimatorKind kind, const Dims& dims, const std::array<std::size_t, 3>& batch,
                      std::uint64_t seed)
        : kind_(kind), dims_(dims), batch_(batch) {
        for (Mode m : kModes) {
            const auto n = index_of(m);
            if (batch_[n] == 0 || batch_[n] > fiber_count(dims, m))
                throw std::invalid_argument("batch size for mode " + std::to_string(n + 1) + " must be in [1, J_n]");
        }
        if (kind.type == EstimatorType::Saga) saga_.emplace(dims, batch, seed);
        if (kind.type == EstimatorType::Sarah) {
            std::array<std::size_t, 3> q{};
            for (Mode m : kModes) {
                const auto n = index_of(m);
                q[n] = kind.sarah_q != 0 ? kind.sarah_q : (fiber_count(dims, m) + batch_[n] - 1) / batch_[n];
            }
            sarah_.emplace(q);
        }
    }

    const EstimatorKind& kind() const { return kind_; }
    const std::array<std::size_t, 3>& batch_sizes() const { return batch_; }
    const SagaState* saga() const { return saga_ ? &*saga_ : nullptr; }
    const SarahState* sarah() const { return sarah_ ? &*sarah_ : nullptr; }

    /// SAGA needs its table filled before the first estimate.
    void prepare(const LL1Factors& start, const DenseTensor3& t) {
        if (saga_) saga_->warm_start(start, t);
    }

    /// SAGA: uniform bin (with replacement across calls). Otherwise B distinct
    /// fibers drawn uniformly without replacement.
    Draw sample(Mode m, CounterRng& rng) const {
        const auto n = index_of(m);
        if (saga_) {
            const std::size_t b = rng.uniform_index(saga_->bin_count(m));
            return {saga_->bin_batch(m, b), b};
        }
        return {FiberBatch(m, rng.sample_without_replacement(fiber_count(dims_, m), batch_[n]), dims_), 0};
    }

    /// The estimate this draw would produce, leaving the state untouched.
    Matrix evaluate(const LL1Factors& under, const DenseTensor3& t, const Draw& d) const {
        switch (kind_.type) {
            case EstimatorType::Sgd: return sgd_estimate(under, t, d.batch);
            case EstimatorType::Saga: return saga_->evaluate(under, t, d.batch.mode(), d.bin).estimate;
            case EstimatorType::Sarah: return sarah_->evaluate(under, t, d.batch);
        }
        return {};
    }

    Matrix estimate(const LL1Factors& under, const DenseTensor3& t, const Draw& d) {
        switch (kind_.type) {
            case EstimatorType::Sgd: return sgd_estimate(under, t, d.batch);
            case EstimatorType::Saga: return saga_->estimate(under, t, d.batch.mode(), d.bin);
            case EstimatorType::Sarah: return sarah_->estimate(under, t, d.batch);
        }
        return {};
    }

private:
    EstimatorKind kind_;
    Dims dims_;
    std::array<std::size_t, 3> batch_;
    std::optional<SagaState> saga_;
    std::optional<SarahState> sarah_;
};

struct MseProbe {
    double mse = 0.0;        // mean of ||g - grad f||_F^2 over draws
    double std_error = 0.0;  // standard error of that mean
    std::size_t draws = 0;
};

/// Monte-Carlo estimate of E||g - grad_{A_n} f||_F^2 at `under`, conditional
/// on the estimator's current state. The state is not modified.
inline MseProbe estimator_mse_probe(const GradientEstimator& est, const LL1Factors& under, const DenseTensor3& t,
                                    Mode m, std::size_t n_draws, std::uint64_t seed) {
    if (n_draws == 0) throw std::invalid_argument("n_draws must be >= 1");
    const Matrix exact = full_gradient(under, t, m);
    CounterRng rng(seed, Stream::Probe, index_of(m));
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < n_draws; ++k) {
        const Draw d = est.sample(m, rng);
        const double e = (est.evaluate(under, t, d) - exact).squaredNorm();
        sum += e;
        sum_sq += e * e;
    }
    const double nd = static_cast<double>(n_draws);
    MseProbe p;
    p.draws = n_draws;
    p.mse = sum / nd;
    if (n_draws > 1) {
        const double var = std::max(0.0, (sum_sq - nd * p.mse * p.mse) / (nd - 1.0));
        p.std_error = std::sqrt(var / nd);
    }
    return p;
}

}  // namespace midas
