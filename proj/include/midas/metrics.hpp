#pragma once

// Reconstruction-quality metrics. Mode 3 is treated as the spectral mode:
// SAM averages over the I1*I2 mode-3 fibers, CC over the I3 band slices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>

#include "midas/tensor.hpp"

namespace midas {

struct MetricReport {
    double psnr = 0.0;  // dB, +inf when the tensors coincide
    double rmse = 0.0;
    double sam = 0.0;  // radians
    double cc = 0.0;
    std::size_t sam_skipped = 0;  // fibers with a zero norm on either side
    std::size_t cc_skipped = 0;   // bands with zero variance on either side

    static constexpr double ideal_psnr = std::numeric_limits<double>::infinity();
    static constexpr double ideal_rmse = 0.0;
    static constexpr double ideal_sam = 0.0;
    static constexpr double ideal_cc = 1.0;
};

namespace detail {

inline void require_same_dims(const DenseTensor3& x, const DenseTensor3& xhat) {
    if (x.dims() != xhat.dims()) throw std::invalid_argument("metric inputs have different dimensions");
}

inline double squared_distance(const DenseTensor3& x, const DenseTensor3& xhat) {
    const auto a = x.data();
    const auto b = xhat.data();
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = b[k] - a[k];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// 10 log10(max(X)^2 N / ||Xhat - X||^2).
inline double psnr(const DenseTensor3& x, const DenseTensor3& xhat) {
    detail::require_same_dims(x, xhat);
    const double err = detail::squared_distance(x, xhat);
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    const auto d = x.data();
    const double xmax = d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
    return 10.0 * std::log10(xmax * xmax * static_cast<double>(x.size()) / err);
}

inline double rmse(const DenseTensor3& x, const DenseTensor3& xhat) {
    detail::require_same_dims(x, xhat);
    return std::sqrt(detail::squared_distance(x, xhat) / static_cast<double>(x.size()));
}

struct SamResult {
    double value = 0.0;
    std::size_t skipped = 0;
};

inline SamResult sam_detail(const DenseTensor3& x, const DenseTensor3& xhat) {
    detail::require_same_dims(x, xhat);
    const auto [i1, i2, i3] = x.dims();
    SamResult out;
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t b = 0; b < i2; ++b)
        for (std::size_t a = 0; a < i1; ++a) {
            double dot = 0.0, nx = 0.0, ny = 0.0;
            for (std::size_t c = 0; c < i3; ++c) {
                const double u = x(a, b, c), v = xhat(a, b, c);
                dot += u * v;
                nx += u * u;
                ny += v * v;
            }
            if (nx == 0.0 || ny == 0.0) {
                ++out.skipped;
                continue;
            }
            total += std::acos(std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0));
            ++counted;
        }
    out.value = counted ? total / static_cast<double>(counted) : 0.0;
    return out;
}

inline double sam(const DenseTensor3& x, const DenseTensor3& xhat) { return sam_detail(x, xhat).value; }

struct CcResult {
    double value = 0.0;
    std::size_t skipped = 0;
};

inline CcResult cc_detail(const DenseTensor3& x, const DenseTensor3& xhat) {
    detail::require_same_dims(x, xhat);
    const std::size_t bands = x.dims()[2];
    const double n = static_cast<double>(x.dims()[0] * x.dims()[1]);
    CcResult out;
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < bands; ++c) {
        const auto u = x.slice(c).array();
        const auto v = xhat.slice(c).array();
        if (u.minCoeff() == u.maxCoeff() || v.minCoeff() == v.maxCoeff()) {
            ++out.skipped;
            continue;
        }
        const double mu = u.sum() / n, mv = v.sum() / n;
        const double suv = ((u - mu) * (v - mv)).sum();
        const double suu = (u - mu).square().sum();
        const double svv = (v - mv).square().sum();
        total += suv / std::sqrt(suu * svv);
        ++counted;
    }
    out.value = counted ? total / static_cast<double>(counted) : 0.0;
    return out;
}

inline double cc(const DenseTensor3& x, const DenseTensor3& xhat) { return cc_detail(x, xhat).value; }

inline MetricReport metric_report(const DenseTensor3& x, const DenseTensor3& xhat) {
    MetricReport r;
    r.psnr = psnr(x, xhat);
    r.rmse = rmse(x, xhat);
    const SamResult s = sam_detail(x, xhat);
    r.sam = s.value;
    r.sam_skipped = s.skipped;
    const CcResult c = cc_detail(x, xhat);
    r.cc = c.value;
    r.cc_skipped = c.skipped;
    return r;
}

}  // namespace midas
