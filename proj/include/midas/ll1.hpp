#pragma once

// Rank-(L_r, L_r, 1) block-term model:
//   X ~ sum_r (A_{1,r} A_{2,r}^T) o c_r
// with A1 = [A_{1,1} .. A_{1,R}] (I1 x L), A2 likewise (I2 x L) and
// A3 = [c_1 .. c_R] (I3 x R), L = sum_r L_r.
//
// Mode-n subproblem: X_(n) ~ H_n A_n^T with
//   H_1 = [c_1 (x) A_{2,1}, ..., c_R (x) A_{2,R}]        (J_1 x L)
//   H_2 = [c_1 (x) A_{1,1}, ..., c_R (x) A_{1,R}]        (J_2 x L)
//   H_3 = [(A_{2,r} (.) A_{1,r}) 1_{L_r}]_r               (J_3 x R)
// The smooth part is f = ||X - Xbar||_F^2 / (2 I1 I2 I3) and its block
// gradient is (A_n H_n^T H_n - X_(n)^T H_n) / (I1 I2 I3).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "midas/parallel.hpp"
#include "midas/prox.hpp"
#include "midas/tensor.hpp"

namespace midas {

class RankVector {
public:
    RankVector() = default;
    explicit RankVector(std::vector<std::size_t> ranks) : ranks_(std::move(ranks)) {
        if (ranks_.empty()) throw std::invalid_argument("rank vector must have at least one term");
        for (auto l : ranks_)
            if (l == 0) throw std::invalid_argument("every L_r must be >= 1");
        offsets_.resize(ranks_.size() + 1, 0);
        std::partial_sum(ranks_.begin(), ranks_.end(), offsets_.begin() + 1);
        owner_.reserve(total());
        for (std::size_t r = 0; r < ranks_.size(); ++r) owner_.insert(owner_.end(), ranks_[r], r);
    }

    std::size_t terms() const { return ranks_.size(); }
    std::size_t total() const { return offsets_.empty() ? 0 : offsets_.back(); }
    std::size_t rank(std::size_t r) const { return ranks_.at(r); }
    std::size_t offset(std::size_t r) const { return offsets_.at(r); }
    /// Term that column l of A1/A2 belongs to.
    std::size_t term_of(std::size_t l) const { return owner_.at(l); }
    std::size_t max_rank() const { return *std::max_element(ranks_.begin(), ranks_.end()); }
    const std::vector<std::size_t>& values() const { return ranks_; }

    bool operator==(const RankVector& o) const { return ranks_ == o.ranks_; }

private:
    std::vector<std::size_t> ranks_;
    std::vector<std::size_t> offsets_;
    std::vector<std::size_t> owner_;
};

struct LL1Factors {
    Matrix a1;  // I1 x L
    Matrix a2;  // I2 x L
    Matrix a3;  // I3 x R
    RankVector ranks;

    const Matrix& factor(Mode m) const {
        switch (m) {
            case Mode::First: return a1;
            case Mode::Second: return a2;
            default: return a3;
        }
    }
    Matrix& factor(Mode m) {
        switch (m) {
            case Mode::First: return a1;
            case Mode::Second: return a2;
            default: return a3;
        }
    }

    Dims dims() const {
        return {static_cast<std::size_t>(a1.rows()), static_cast<std::size_t>(a2.rows()),
                static_cast<std::size_t>(a3.rows())};
    }

    /// Throws unless the block widths agree with `ranks` (and with `dims`, if given).
    void validate(const Dims* dims = nullptr) const {
        const auto L = static_cast<Eigen::Index>(ranks.total());
        const auto R = static_cast<Eigen::Index>(ranks.terms());
        if (L == 0) throw std::invalid_argument("factors have an empty rank vector");
        if (a1.cols() != L || a2.cols() != L || a3.cols() != R)
            throw std::invalid_argument("factor widths (" + std::to_string(a1.cols()) + ", " +
                                        std::to_string(a2.cols()) + ", " + std::to_string(a3.cols()) +
                                        ") do not match L_total=" + std::to_string(L) +
                                        ", R=" + std::to_string(R));
        if (a1.rows() == 0 || a2.rows() == 0 || a3.rows() == 0)
            throw std::invalid_argument("factors must have positive row counts");
        if (dims != nullptr && this->dims() != *dims)
            throw std::invalid_argument("factor row counts do not match tensor dims");
    }

    static LL1Factors zeros(const Dims& d, const RankVector& ranks) {
        const auto L = static_cast<Eigen::Index>(ranks.total());
        return {Matrix::Zero(static_cast<Eigen::Index>(d[0]), L), Matrix::Zero(static_cast<Eigen::Index>(d[1]), L),
                Matrix::Zero(static_cast<Eigen::Index>(d[2]), static_cast<Eigen::Index>(ranks.terms())), ranks};
    }

    bool operator==(const LL1Factors& o) const {
        return ranks == o.ranks && a1 == o.a1 && a2 == o.a2 && a3 == o.a3;
    }
};

/// Copy of `f` with factor `m` replaced.
inline LL1Factors with_factor(const LL1Factors& f, Mode m, const Matrix& value) {
    LL1Factors out = f;
    out.factor(m) = value;
    return out;
}

/// Number of columns of H_n (and of A_n).
inline std::size_t h_width(const LL1Factors& f, Mode m) {
    return m == Mode::Third ? f.ranks.terms() : f.ranks.total();
}

namespace detail {

/// Weights w_l = A3(i3, term_of(l)) for one frontal slice.
inline Vector slice_weights(const LL1Factors& f, std::size_t i3) {
    Vector w(static_cast<Eigen::Index>(f.ranks.total()));
    for (std::size_t l = 0; l < f.ranks.total(); ++l)
        w(static_cast<Eigen::Index>(l)) = f.a3(static_cast<Eigen::Index>(i3), static_cast<Eigen::Index>(f.ranks.term_of(l)));
    return w;
}

}  // namespace detail

inline DenseTensor3 reconstruct(const LL1Factors& f) {
    f.validate();
    const Dims d = f.dims();
    DenseTensor3 out(d);
    parallel_for(d[2], [&](std::size_t i3) {
        const Vector w = detail::slice_weights(f, i3);
        out.slice(i3).noalias() = (f.a1 * w.asDiagonal()) * f.a2.transpose();
    }, 1);
    return out;
}

/// Rows `fibers` of H_n, without materializing the rest.
inline Matrix build_H_rows(const LL1Factors& f, Mode m, const std::vector<std::size_t>& fibers) {
    const Dims d = f.dims();
    const std::size_t width = h_width(f, m);
    Matrix h(static_cast<Eigen::Index>(fibers.size()), static_cast<Eigen::Index>(width));
    for (std::size_t b = 0; b < fibers.size(); ++b) {
        const auto [a, c] = fiber_coords(d, m, fibers[b]);
        const auto row = static_cast<Eigen::Index>(b);
        const auto ia = static_cast<Eigen::Index>(a);
        const auto ic = static_cast<Eigen::Index>(c);
        if (m == Mode::Third) {
            // a = i1, c = i2
            for (std::size_t r = 0; r < f.ranks.terms(); ++r) {
                const auto off = static_cast<Eigen::Index>(f.ranks.offset(r));
                const auto len = static_cast<Eigen::Index>(f.ranks.rank(r));
                h(row, static_cast<Eigen::Index>(r)) =
                    f.a1.row(ia).segment(off, len).dot(f.a2.row(ic).segment(off, len));
            }
        } else {
            // a = i2 (mode 1) or i1 (mode 2); c = i3
            const Matrix& inner = (m == Mode::First) ? f.a2 : f.a1;
            for (std::size_t l = 0; l < width; ++l)
                h(row, static_cast<Eigen::Index>(l)) =
                    f.a3(ic, static_cast<Eigen::Index>(f.ranks.term_of(l))) * inner(ia, static_cast<Eigen::Index>(l));
        }
    }
    return h;
}

/// Full H_n (J_n x width). Row order matches unfold(., m).
inline Matrix build_H(const LL1Factors& f, Mode m) {
    f.validate();
    std::vector<std::size_t> all(fiber_count(f.dims(), m));
    std::iota(all.begin(), all.end(), std::size_t{0});
    return build_H_rows(f, m, all);
}

/// H_n^T H_n from factor Grams, without forming H_n.
inline Matrix gram_H(const LL1Factors& f, Mode m) {
    f.validate();
    const auto& rk = f.ranks;
    if (m == Mode::Third) {
        const Matrix g1 = f.a1.transpose() * f.a1;
        const Matrix g2 = f.a2.transpose() * f.a2;
        const Matrix had = g1.cwiseProduct(g2);
        const auto R = static_cast<Eigen::Index>(rk.terms());
        Matrix g(R, R);
        for (Eigen::Index r = 0; r < R; ++r)
            for (Eigen::Index s = 0; s < R; ++s)
                g(r, s) = had.block(static_cast<Eigen::Index>(rk.offset(static_cast<std::size_t>(r))),
                                    static_cast<Eigen::Index>(rk.offset(static_cast<std::size_t>(s))),
                                    static_cast<Eigen::Index>(rk.rank(static_cast<std::size_t>(r))),
                                    static_cast<Eigen::Index>(rk.rank(static_cast<std::size_t>(s))))
                              .sum();
        return g;
    }
    const Matrix& inner = (m == Mode::First) ? f.a2 : f.a1;
    const Matrix gi = inner.transpose() * inner;
    const Matrix gc = f.a3.transpose() * f.a3;
    Matrix g = gi;
    for (Eigen::Index p = 0; p < g.rows(); ++p)
        for (Eigen::Index q = 0; q < g.cols(); ++q)
            g(p, q) *= gc(static_cast<Eigen::Index>(rk.term_of(static_cast<std::size_t>(p))),
                          static_cast<Eigen::Index>(rk.term_of(static_cast<std::size_t>(q))));
    return g;
}

/// MTTKRP: X_(n)^T H_n (I_n x width), computed slice by slice.
inline Matrix mttkrp(const DenseTensor3& t, const LL1Factors& f, Mode m) {
    const Dims d = t.dims();
    f.validate(&d);
    const std::size_t width = h_width(f, m);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(d[index_of(m)]), static_cast<Eigen::Index>(width));
    switch (m) {
        case Mode::First:
            for (std::size_t i3 = 0; i3 < d[2]; ++i3)
                out.noalias() += (t.slice(i3) * f.a2) * detail::slice_weights(f, i3).asDiagonal();
            break;
        case Mode::Second:
            for (std::size_t i3 = 0; i3 < d[2]; ++i3)
                out.noalias() += (t.slice(i3).transpose() * f.a1) * detail::slice_weights(f, i3).asDiagonal();
            break;
        case Mode::Third:
            parallel_for(d[2], [&](std::size_t i3) {
                const Matrix p = t.slice(i3) * f.a2;
                for (std::size_t r = 0; r < f.ranks.terms(); ++r) {
                    double s = 0.0;
                    for (std::size_t l = f.ranks.offset(r); l < f.ranks.offset(r) + f.ranks.rank(r); ++l)
                        s += f.a1.col(static_cast<Eigen::Index>(l)).dot(p.col(static_cast<Eigen::Index>(l)));
                    out(static_cast<Eigen::Index>(i3), static_cast<Eigen::Index>(r)) = s;
                }
            }, 1);
            break;
    }
    return out;
}

/// Exact gradient of f with respect to A_n. Column block r of the result is
/// the partition-wise gradient for A_{n,r}.
inline Matrix full_gradient(const LL1Factors& f, const DenseTensor3& t, Mode m) {
    const double scale = 1.0 / static_cast<double>(total_size(t.dims()));
    return scale * (f.factor(m) * gram_H(f, m) - mttkrp(t, f, m));
}

struct ObjectiveValue {
    double f = 0.0;
    double h = 0.0;
    double phi = 0.0;
};

inline double residual_squared_norm(const LL1Factors& f, const DenseTensor3& t) {
    const Dims d = t.dims();
    f.validate(&d);
    std::vector<double> partial(d[2], 0.0);
    parallel_for(d[2], [&](std::size_t i3) {
        const Vector w = detail::slice_weights(f, i3);
        const Matrix diff = t.slice(i3) - (f.a1 * w.asDiagonal()) * f.a2.transpose();
        partial[i3] = diff.squaredNorm();
    }, 1);
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
}

/// Phi = f + sum_n h_n. An infeasible indicator makes h and phi +inf.
inline ObjectiveValue objective(const LL1Factors& f, const DenseTensor3& t, const RegularizerSpec& reg) {
    ObjectiveValue v;
    v.f = residual_squared_norm(f, t) / (2.0 * static_cast<double>(total_size(t.dims())));
    for (Mode m : kModes) v.h += regularizer_value(reg[m], f.factor(m));
    v.phi = v.f + v.h;
    return v;
}

struct PowerIterationResult {
    double eigenvalue = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Largest eigenvalue of a symmetric PSD matrix. Starts from the normalized
/// all-ones vector; stops when ||G v - lambda v|| <= rel_tol * lambda.
inline PowerIterationResult power_iteration(const Matrix& g, double rel_tol = 1e-6, std::size_t max_iter = 1000) {
    PowerIterationResult res;
    if (g.rows() == 0) return res;
    Vector v = Vector::Ones(g.rows()) / std::sqrt(static_cast<double>(g.rows()));
    for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
        Vector w = g * v;
        const double lambda = v.dot(w);
        const double wn = w.norm();
        if (wn == 0.0) {
            res.eigenvalue = 0.0;
            res.converged = true;
            return res;
        }
        res.eigenvalue = lambda;
        if ((w - lambda * v).norm() <= rel_tol * std::abs(lambda)) {
            res.converged = true;
            return res;
        }
        v = w / wn;
    }
    res.iterations = max_iter;
    return res;
}

/// Block Lipschitz constant of grad_{A_n} f: lambda_max(H_n^T H_n) / (I1 I2 I3).
inline double lipschitz_bound(const LL1Factors& f, Mode m) {
    const Dims d = f.dims();
    return power_iteration(gram_H(f, m)).eigenvalue / static_cast<double>(total_size(d));
}

}  // namespace midas
