#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

#include "midas/tensor.hpp"

namespace midas {

enum class RegularizerKind { None, NonNegative, Ridge };

struct Regularizer {
    RegularizerKind kind = RegularizerKind::None;
    double lambda = 0.0;  // Ridge only

    static Regularizer none() { return {}; }
    static Regularizer nonnegative() { return {RegularizerKind::NonNegative, 0.0}; }
    static Regularizer ridge(double lambda) {
        if (!std::isfinite(lambda) || lambda < 0.0)
            throw std::invalid_argument("ridge lambda must be finite and >= 0");
        return {RegularizerKind::Ridge, lambda};
    }

    bool operator==(const Regularizer&) const = default;
};

/// Per-mode regularizers h_1, h_2, h_3.
struct RegularizerSpec {
    std::array<Regularizer, 3> per_mode{};

    static RegularizerSpec uniform(Regularizer r) { return {{r, r, r}}; }

    const Regularizer& operator[](Mode m) const { return per_mode[index_of(m)]; }
    Regularizer& operator[](Mode m) { return per_mode[index_of(m)]; }

    bool operator==(const RegularizerSpec&) const = default;
};

/// h_n(M). Returns +inf for an infeasible point of the nonnegativity indicator.
inline double regularizer_value(const Regularizer& r, const Matrix& m) {
    switch (r.kind) {
        case RegularizerKind::None: return 0.0;
        case RegularizerKind::NonNegative:
            return (m.size() == 0 || m.minCoeff() >= 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
        case RegularizerKind::Ridge: return 0.5 * r.lambda * m.squaredNorm();
    }
    return 0.0;
}

/// argmin_Z h(Z) + ||Z - M||_F^2 / (2 eta). Separable in the column blocks of
/// A_n, so all R blocks are handled in one call.
inline Matrix prox(const Regularizer& r, const Matrix& m, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("prox step must be positive");
    switch (r.kind) {
        case RegularizerKind::None: return m;
        case RegularizerKind::NonNegative: return m.cwiseMax(0.0);
        case RegularizerKind::Ridge: return m / (1.0 + eta * r.lambda);
    }
    return m;
}

inline Matrix prox(const RegularizerSpec& spec, Mode mode, const Matrix& m, double eta) {
    return prox(spec[mode], m, eta);
}

inline std::string to_string(const Regularizer& r) {
    switch (r.kind) {
        case RegularizerKind::None: return "none";
        case RegularizerKind::NonNegative: return "nonneg";
        case RegularizerKind::Ridge: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "ridge:%.17g", r.lambda);
            return buf;
        }
    }
    return "none";
}

}  // namespace midas
