#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "test_support.hpp"

using namespace midas;
using namespace midas::testing;

namespace {

// Row j of H_n from the entry-wise model, independent of build_H.
Matrix naive_H(const LL1Factors& f, Mode m) {
    const Dims d = f.dims();
    const std::size_t jn = fiber_count(d, m);
    Matrix h(static_cast<Eigen::Index>(jn), static_cast<Eigen::Index>(h_width(f, m)));
    for (std::size_t j = 0; j < jn; ++j) {
        const auto [p, q] = fiber_coords(d, m, j);
        for (std::size_t r = 0; r < f.ranks.terms(); ++r) {
            const std::size_t lo = f.ranks.offset(r), hi = lo + f.ranks.rank(r);
            const auto row = static_cast<Eigen::Index>(j);
            switch (m) {
                case Mode::First:  // (i2, i3)
                    for (std::size_t l = lo; l < hi; ++l) h(row, l) = f.a2(p, l) * f.a3(q, r);
                    break;
                case Mode::Second:  // (i1, i3)
                    for (std::size_t l = lo; l < hi; ++l) h(row, l) = f.a1(p, l) * f.a3(q, r);
                    break;
                case Mode::Third: {  // (i1, i2)
                    double s = 0.0;
                    for (std::size_t l = lo; l < hi; ++l) s += f.a1(p, l) * f.a2(q, l);
                    h(row, r) = s;
                    break;
                }
            }
        }
    }
    return h;
}

}  // namespace

TEST(RankVector, Validation) {
    EXPECT_THROW(RankVector(std::vector<std::size_t>{}), std::invalid_argument);
    EXPECT_THROW(RankVector(std::vector<std::size_t>{2, 0}), std::invalid_argument);
    const RankVector r({2, 1, 3});
    EXPECT_EQ(r.total(), 6u);
    EXPECT_EQ(r.offset(2), 3u);
    EXPECT_EQ(r.term_of(3), 2u);
    EXPECT_EQ(r.term_of(2), 1u);
    EXPECT_EQ(r.max_rank(), 3u);
}

TEST(LL1Factors, ValidateChecksWidthsAndDims) {
    LL1Factors f = LL1Factors::zeros({3, 4, 5}, RankVector({2, 1}));
    EXPECT_NO_THROW(f.validate());
    const Dims wrong{3, 4, 6};
    EXPECT_THROW(f.validate(&wrong), std::invalid_argument);
    f.a3 = Matrix::Zero(5, 3);
    EXPECT_THROW(f.validate(), std::invalid_argument);
}

TEST(Reconstruct, RankOneOuterProduct) {
    LL1Factors f = LL1Factors::zeros({2, 2, 2}, RankVector({1}));
    f.a1 << 1, 0;
    f.a2 << 1, 0;
    f.a3 << 1, 1;
    const DenseTensor3 t = reconstruct(f);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(t(a, b, c), (a == 0 && b == 0) ? 1.0 : 0.0);
}

TEST(Reconstruct, ZeroThirdFactorGivesZero) {
    LL1Factors f = random_ll1({3, 4, 2}, RankVector({2, 2}), 1);
    f.a3.setZero();
    EXPECT_EQ(reconstruct(f).squared_norm(), 0.0);
}

TEST(Reconstruct, MatchesTripleLoop) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const LL1Factors f = random_ll1({4, 5, 3}, RankVector({2, 2}), s);
        const DenseTensor3 a = reconstruct(f), b = naive_reconstruct(f);
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.data()[k], b.data()[k], 1e-12);
    }
}

TEST(BuildH, MatchesEntrywiseDefinition) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Instance in = random_instance(s);
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        for (Mode m : kModes) EXPECT_LE((build_H(f, m) - naive_H(f, m)).norm(), 1e-13);
    }
}

TEST(BuildH, AllOnesColumn) {
    LL1Factors f = LL1Factors::zeros({2, 2, 2}, RankVector({1}));
    f.a1.setOnes();
    f.a2.setOnes();
    f.a3.setOnes();
    EXPECT_EQ(build_H(f, Mode::First), Matrix::Ones(4, 1));
}

TEST(BuildH, ThirdModeWithUnitRankIsKronecker) {
    const LL1Factors f = random_ll1({3, 4, 2}, RankVector({1, 1}), 3);
    const Matrix h3 = build_H(f, Mode::Third);
    for (std::size_t r = 0; r < 2; ++r)
        for (Eigen::Index i2 = 0; i2 < 4; ++i2)
            for (Eigen::Index i1 = 0; i1 < 3; ++i1)
                EXPECT_DOUBLE_EQ(h3(i2 * 3 + i1, r), f.a2(i2, r) * f.a1(i1, r));
}

TEST(BuildH, UnfoldingFactorization) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Instance in = random_instance(100 + s);
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        const DenseTensor3 x = reconstruct(f);
        for (Mode m : kModes)
            EXPECT_LE((unfold(x, m).data - build_H(f, m) * f.factor(m).transpose()).norm(), 1e-10);
    }
}

TEST(BuildH, RowSubsetsMatchFullH) {
    const LL1Factors f = random_ll1({3, 4, 5}, RankVector({2, 1}), 8);
    for (Mode m : kModes) {
        const Matrix full = build_H(f, m);
        const std::vector<std::size_t> rows{fiber_count(f.dims(), m) - 1, 2, 0};
        const Matrix sub = build_H_rows(f, m, rows);
        for (std::size_t i = 0; i < rows.size(); ++i)
            EXPECT_EQ(sub.row(static_cast<Eigen::Index>(i)), full.row(static_cast<Eigen::Index>(rows[i])));
    }
}

TEST(GramH, BlockIdentityMatchesExplicitProduct) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Instance in = random_instance(200 + s);
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        for (Mode m : kModes) {
            const Matrix h = build_H(f, m);
            const Matrix g = gram_H(f, m);
            const Matrix ref = h.transpose() * h;
            EXPECT_LE((g - ref).norm(), 1e-12 * std::max(1.0, ref.norm()));
            EXPECT_LE((g - g.transpose()).norm(), 1e-12 * std::max(1.0, ref.norm()));
            Eigen::SelfAdjointEigenSolver<Matrix> es(g);
            EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * std::max(1.0, ref.norm()));
        }
    }
}

TEST(Mttkrp, MatchesUnfoldingProduct) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Instance in = random_instance(300 + s);
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        const DenseTensor3 x = random_tensor(in.dims, s);
        for (Mode m : kModes) {
            const Matrix ref = unfold(x, m).data.transpose() * build_H(f, m);
            EXPECT_LE((mttkrp(x, f, m) - ref).norm(), 1e-12 * std::max(1.0, ref.norm()));
        }
    }
}

TEST(Objective, ExactFitFeasibleIsZero) {
    const LL1Factors f = random_ll1({3, 3, 3}, RankVector({2}), 1);
    const ObjectiveValue v = objective(f, reconstruct(f), RegularizerSpec::uniform(Regularizer::nonnegative()));
    EXPECT_EQ(v.f, 0.0);
    EXPECT_EQ(v.phi, 0.0);
}

TEST(Objective, ZeroFactorsClosedForm) {
    const DenseTensor3 x = random_tensor({4, 5, 3}, 2);
    const LL1Factors f = LL1Factors::zeros(x.dims(), RankVector({2, 2}));
    const ObjectiveValue v = objective(f, x, RegularizerSpec::uniform(Regularizer::none()));
    EXPECT_NEAR(v.f, x.squared_norm() / (2.0 * 60.0), 1e-15);
}

TEST(Objective, MatchesTripleLoopAndHandlesRegularizers) {
    const DenseTensor3 x = random_tensor({4, 5, 3}, 3);
    LL1Factors f = random_ll1(x.dims(), RankVector({2, 2}), 3);
    const ObjectiveValue v = objective(f, x, RegularizerSpec::uniform(Regularizer::ridge(0.5)));
    EXPECT_NEAR(v.f, naive_f(f, x), 1e-12);
    const double ridge = 0.25 * (f.a1.squaredNorm() + f.a2.squaredNorm() + f.a3.squaredNorm());
    EXPECT_NEAR(v.h, ridge, 1e-12);
    EXPECT_EQ(v.phi, v.f + v.h);
    f.a2(0, 0) = -1.0;
    const ObjectiveValue w = objective(f, x, RegularizerSpec::uniform(Regularizer::nonnegative()));
    EXPECT_TRUE(std::isinf(w.phi));
    EXPECT_GE(w.f, 0.0);
}

TEST(FullGradient, CentralDifferences) {
    const DenseTensor3 x = random_tensor({4, 5, 3}, 4);
    const LL1Factors f = random_ll1(x.dims(), RankVector({2, 1}), 4);
    for (Mode m : kModes)
        EXPECT_LE(max_relative_error(full_gradient(f, x, m), finite_difference_gradient(f, x, m, 1e-6)), 1e-5);
}

TEST(FullGradient, DirectionalDerivative) {
    const DenseTensor3 x = random_tensor({3, 4, 5}, 5);
    const LL1Factors f = random_ll1(x.dims(), RankVector({1, 2}), 5);
    CounterRng rng(5, Stream::Probe);
    for (Mode m : kModes) {
        Matrix d = f.factor(m);
        for (Eigen::Index k = 0; k < d.size(); ++k) d.data()[k] = rng.normal();
        d /= d.norm();
        const double eps = 1e-6;
        const double fd = (naive_f(with_factor(f, m, f.factor(m) + eps * d), x) -
                           naive_f(with_factor(f, m, f.factor(m) - eps * d), x)) /
                          (2.0 * eps);
        const double an = full_gradient(f, x, m).cwiseProduct(d).sum();
        EXPECT_LE(std::abs(fd - an), 1e-5 * std::max(std::abs(an), 1e-8));
    }
}

TEST(FullGradient, VanishesAtExactFit) {
    const LL1Factors f = random_ll1({4, 3, 5}, RankVector({2, 1}), 6);
    const DenseTensor3 x = reconstruct(f);
    for (Mode m : kModes) EXPECT_LE(full_gradient(f, x, m).norm(), 1e-9);
}

TEST(Lipschitz, ScalarGram) {
    Matrix g(1, 1);
    g << 4.0;
    const auto p = power_iteration(g);
    EXPECT_DOUBLE_EQ(p.eigenvalue / 8.0, 0.5);
}

TEST(Lipschitz, ScaledOrthonormalColumns) {
    // H = sigma * Q with orthonormal Q gives H^T H = sigma^2 I.
    const double sigma = 3.0;
    const Matrix g = sigma * sigma * Matrix::Identity(4, 4);
    EXPECT_NEAR(power_iteration(g).eigenvalue, sigma * sigma, 1e-12);
}

TEST(Lipschitz, AgreesWithDenseEigensolver) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Instance in = random_instance(400 + s);
        const LL1Factors f = random_ll1(in.dims, in.ranks, s);
        for (Mode m : kModes) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(gram_H(f, m));
            const double ref = es.eigenvalues().maxCoeff() / static_cast<double>(total_size(in.dims));
            EXPECT_LE(std::abs(lipschitz_bound(f, m) - ref), 1e-6 * ref);
        }
    }
}
