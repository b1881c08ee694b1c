#pragma once

// Dense third-order tensors, mode-n unfoldings and fiber access.
//
// Unfolding convention: X_(n) is a J_n x I_n matrix (rows index fibers, columns
// index mode n). This is the transpose of the Kolda-Bader layout used by most
// tensor toolboxes; transpose when exchanging unfoldings with them.
//
// Row index of entry (i1, i2, i3) in X_(n), written 1-based:
//   j = 1 + sum_{k != n} (i_k - 1) * Jbar_k,   Jbar_k = prod_{m < k, m != n} I_m
// i.e. the lower-numbered remaining mode varies fastest. Everything below is
// 0-based.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "midas/parallel.hpp"

namespace midas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Dims = std::array<std::size_t, 3>;

enum class Mode : std::uint8_t { First = 0, Second = 1, Third = 2 };

inline constexpr std::array<Mode, 3> kModes{Mode::First, Mode::Second, Mode::Third};

constexpr std::size_t index_of(Mode m) { return static_cast<std::size_t>(m); }

/// 1-based mode number {1,2,3} to Mode.
inline Mode mode_from_number(int n) {
    if (n < 1 || n > 3) throw std::invalid_argument("mode must be 1, 2 or 3, got " + std::to_string(n));
    return static_cast<Mode>(n - 1);
}

constexpr int mode_number(Mode m) { return static_cast<int>(m) + 1; }

/// The two remaining modes of `m`, lower first.
constexpr std::pair<std::size_t, std::size_t> other_modes(Mode m) {
    switch (m) {
        case Mode::First: return {1, 2};
        case Mode::Second: return {0, 2};
        default: return {0, 1};
    }
}

inline std::size_t total_size(const Dims& d) { return d[0] * d[1] * d[2]; }

/// J_n: number of mode-n fibers.
inline std::size_t fiber_count(const Dims& d, Mode m) { return total_size(d) / d[index_of(m)]; }

/// Remaining-mode indices (lower mode first) of fiber j of mode m.
inline std::pair<std::size_t, std::size_t> fiber_coords(const Dims& d, Mode m, std::size_t j) {
    const auto [lo, hi] = other_modes(m);
    (void)hi;
    return {j % d[lo], j / d[lo]};
}

class DenseTensor3 {
public:
    DenseTensor3() = default;

    explicit DenseTensor3(const Dims& dims) : dims_(dims), data_(checked_size(dims), 0.0) {}

    DenseTensor3(const Dims& dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
        if (data_.size() != checked_size(dims))
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match dims product " + std::to_string(total_size(dims)));
        for (std::size_t k = 0; k < data_.size(); ++k)
            if (!std::isfinite(data_[k]))
                throw std::invalid_argument("non-finite tensor entry at flat index " + std::to_string(k));
    }

    const Dims& dims() const { return dims_; }
    std::size_t dim(Mode m) const { return dims_[index_of(m)]; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i1, std::size_t i2, std::size_t i3) {
        return data_[i1 + dims_[0] * (i2 + dims_[1] * i3)];
    }
    double operator()(std::size_t i1, std::size_t i2, std::size_t i3) const {
        return data_[i1 + dims_[0] * (i2 + dims_[1] * i3)];
    }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    /// Frontal slice X(:, :, i3) as an I1 x I2 column-major view.
    Eigen::Map<const Matrix> slice(std::size_t i3) const {
        return {data_.data() + i3 * dims_[0] * dims_[1], static_cast<Eigen::Index>(dims_[0]),
                static_cast<Eigen::Index>(dims_[1])};
    }
    Eigen::Map<Matrix> slice(std::size_t i3) {
        return {data_.data() + i3 * dims_[0] * dims_[1], static_cast<Eigen::Index>(dims_[0]),
                static_cast<Eigen::Index>(dims_[1])};
    }

    double squared_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s;
    }

    bool operator==(const DenseTensor3&) const = default;

private:
    static std::size_t checked_size(const Dims& d) {
        if (d[0] == 0 || d[1] == 0 || d[2] == 0) throw std::invalid_argument("tensor dimensions must be positive");
        return total_size(d);
    }

    Dims dims_{0, 0, 0};
    std::vector<double> data_;
};

struct UnfoldedMatrix {
    Mode mode = Mode::First;
    Matrix data;  // J_n x I_n
};

inline UnfoldedMatrix unfold(const DenseTensor3& t, Mode m) {
    const Dims& d = t.dims();
    const auto n = index_of(m);
    const auto [lo, hi] = other_modes(m);
    const std::size_t rows = fiber_count(d, m);
    UnfoldedMatrix out{m, Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d[n]))};
    std::array<std::size_t, 3> idx{};
    for (idx[2] = 0; idx[2] < d[2]; ++idx[2])
        for (idx[1] = 0; idx[1] < d[1]; ++idx[1])
            for (idx[0] = 0; idx[0] < d[0]; ++idx[0]) {
                const std::size_t j = idx[lo] + d[lo] * idx[hi];
                out.data(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(idx[n])) = t(idx[0], idx[1], idx[2]);
            }
    return out;
}

inline DenseTensor3 fold(const UnfoldedMatrix& u, const Dims& dims) {
    const auto n = index_of(u.mode);
    if (static_cast<std::size_t>(u.data.cols()) != dims[n] ||
        static_cast<std::size_t>(u.data.rows()) != fiber_count(dims, u.mode))
        throw std::invalid_argument("fold: unfolding of shape " + std::to_string(u.data.rows()) + "x" +
                                    std::to_string(u.data.cols()) + " does not match dims for mode " +
                                    std::to_string(mode_number(u.mode)));
    DenseTensor3 t(dims);
    const auto [lo, hi] = other_modes(u.mode);
    std::array<std::size_t, 3> idx{};
    for (idx[2] = 0; idx[2] < dims[2]; ++idx[2])
        for (idx[1] = 0; idx[1] < dims[1]; ++idx[1])
            for (idx[0] = 0; idx[0] < dims[0]; ++idx[0]) {
                const std::size_t j = idx[lo] + dims[lo] * idx[hi];
                t(idx[0], idx[1], idx[2]) =
                    u.data(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(idx[n]));
            }
    return t;
}

/// A set of distinct mode-n fiber indices (0-based rows of X_(n)).
class FiberBatch {
public:
    FiberBatch(Mode mode, std::vector<std::size_t> indices, const Dims& dims)
        : mode_(mode), indices_(std::move(indices)) {
        if (indices_.empty()) throw std::invalid_argument("fiber batch must be non-empty");
        const std::size_t jn = fiber_count(dims, mode);
        std::vector<std::size_t> sorted = indices_;
        std::sort(sorted.begin(), sorted.end());
        if (sorted.back() >= jn)
            throw std::out_of_range("fiber index " + std::to_string(sorted.back()) + " out of range for J_" +
                                    std::to_string(mode_number(mode)) + " = " + std::to_string(jn));
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw std::invalid_argument("fiber batch indices must be distinct");
    }

    /// Every fiber of the mode, in order.
    static FiberBatch all(Mode mode, const Dims& dims) {
        std::vector<std::size_t> idx(fiber_count(dims, mode));
        for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
        return FiberBatch(mode, std::move(idx), dims);
    }

    Mode mode() const { return mode_; }
    const std::vector<std::size_t>& indices() const { return indices_; }
    std::size_t size() const { return indices_.size(); }

private:
    Mode mode_;
    std::vector<std::size_t> indices_;
};

/// Rows `batch.indices()` of X_(n), read straight from the tensor.
inline Matrix gather_fiber_rows(const DenseTensor3& t, const FiberBatch& batch) {
    const Dims& d = t.dims();
    const Mode m = batch.mode();
    const std::size_t in = d[index_of(m)];
    const std::size_t jn = fiber_count(d, m);
    Matrix out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(in));
    const auto data = t.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t j = batch.indices()[b];
        if (j >= jn) throw std::out_of_range("fiber index out of range");
        const auto [a, c] = fiber_coords(d, m, j);
        const auto row = static_cast<Eigen::Index>(b);
        switch (m) {
            case Mode::First: {
                const double* src = data.data() + d[0] * (a + d[1] * c);
                for (std::size_t i = 0; i < in; ++i) out(row, static_cast<Eigen::Index>(i)) = src[i];
                break;
            }
            case Mode::Second:
                for (std::size_t i = 0; i < in; ++i) out(row, static_cast<Eigen::Index>(i)) = t(a, i, c);
                break;
            case Mode::Third:
                for (std::size_t i = 0; i < in; ++i) out(row, static_cast<Eigen::Index>(i)) = t(a, c, i);
                break;
        }
    }
    return out;
}

/// Column-wise Kronecker product; row (ia * rows(B) + ib) holds A(ia,l) * B(ib,l).
inline Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()) + ")");
    Matrix out(a.rows() * b.rows(), a.cols());
    for (Eigen::Index l = 0; l < a.cols(); ++l)
        for (Eigen::Index ia = 0; ia < a.rows(); ++ia)
            out.col(l).segment(ia * b.rows(), b.rows()) = a(ia, l) * b.col(l);
    return out;
}

}  // namespace midas
