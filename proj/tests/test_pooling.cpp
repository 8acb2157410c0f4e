#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dgtl/pooling.hpp"
#include "dgtl/rng.hpp"
#include "oracles.hpp"

using namespace dgtl;

namespace {

MatrixD random_map(SplitMix64& rng, int pixels, int channels, double lo = 0.1, double hi = 2.0) {
    MatrixD m(pixels, channels);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

const PoolingMethod kAvg{PoolKind::Avg, 3.0};
const PoolingMethod kMax{PoolKind::Max, 3.0};
const PoolingMethod kGem{PoolKind::GeM, 3.0};

}  // namespace

TEST(Pooling, ConstantMapPoolsToTheConstant) {
    const MatrixD map = MatrixD::Constant(9, 3, 5.0);
    for (const auto& method : {kAvg, kMax, kGem}) {
        const VectorD out = pool_forward(map, method);
        for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(out(c), 5.0, 1e-12) << to_string(method.kind);
    }
}

TEST(Pooling, HandComputedTwoByTwo) {
    MatrixD map(4, 1);
    map << 1, 2, 3, 4;
    EXPECT_DOUBLE_EQ(pool_forward(map, kAvg)(0), 2.5);
    EXPECT_DOUBLE_EQ(pool_forward(map, kMax)(0), 4.0);
    // ((1 + 8 + 27 + 64) / 4)^(1/3) = 25^(1/3)
    EXPECT_NEAR(pool_forward(map, kGem)(0), std::cbrt(25.0), 1e-14);
}

TEST(Pooling, GemWithUnitExponentIsAverage) {
    SplitMix64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const MatrixD map = random_map(rng, 12, 4);
        const VectorD gem = pool_forward(map, PoolingMethod{PoolKind::GeM, 1.0});
        const VectorD avg = pool_forward(map, kAvg);
        EXPECT_LE((gem - avg).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Pooling, GemIsMonotoneInExponentAndApproachesMax) {
    SplitMix64 rng(11);
    const MatrixD map = random_map(rng, 16, 3);
    VectorD prev = pool_forward(map, PoolingMethod{PoolKind::GeM, 0.5});
    for (double p : {1.0, 2.0, 3.0, 5.0, 8.0, 16.0, 32.0, 64.0}) {
        const VectorD cur = pool_forward(map, PoolingMethod{PoolKind::GeM, p});
        for (Eigen::Index c = 0; c < 3; ++c) EXPECT_GE(cur(c), prev(c) - 1e-12);
        prev = cur;
    }
    // max * n^(-1/p) <= GeM_p <= max, so the gap closes as p grows.
    const VectorD mx = pool_forward(map, kMax);
    const double bound64 = std::pow(16.0, -1.0 / 64.0);
    for (Eigen::Index c = 0; c < 3; ++c) {
        EXPECT_LE(prev(c), mx(c) * (1 + 1e-12));
        EXPECT_GE(prev(c), mx(c) * bound64 * (1 - 1e-12));
    }
    const VectorD far = pool_forward(map, PoolingMethod{PoolKind::GeM, 1024.0});
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_LE(std::abs(far(c) - mx(c)) / mx(c), 0.01);
}

TEST(Pooling, GemRejectsNegativeInput) {
    MatrixD map = MatrixD::Ones(4, 2);
    map(2, 1) = -0.5;
    EXPECT_THROW(pool_forward(map, kGem), DomainError);
    EXPECT_NO_THROW(pool_forward(map, kAvg));
    EXPECT_THROW(pool_forward(map, PoolingMethod{PoolKind::GeM, 0.0}), DomainError);
}

TEST(Pooling, SpatialPermutationInvariance) {
    SplitMix64 rng(5);
    MatrixD map = random_map(rng, 9, 2);
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    MatrixD shuffled(9, 2);
    for (int i = 0; i < 9; ++i) shuffled.row(i) = map.row(perm[i]);
    for (const auto& method : {kAvg, kMax, kGem})
        EXPECT_LE((pool_forward(map, method) - pool_forward(shuffled, method)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoolingBackward, AverageSplitsUniformly) {
    const MatrixD map = MatrixD::Ones(4, 1);
    const MatrixD g = pool_backward(map, kAvg, VectorD::Ones(1));
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g(i, 0), 0.25);
}

TEST(PoolingBackward, MaxIsOneHotAndTiesGoToFirstPosition) {
    MatrixD map(4, 2);
    map << 1, 7,
           9, 7,
           3, 2,
           9, 0;
    const MatrixD g = pool_backward(map, kMax, VectorD::Constant(2, 2.0));
    MatrixD expected = MatrixD::Zero(4, 2);
    expected(1, 0) = 2.0;  // tie between rows 1 and 3
    expected(0, 1) = 2.0;  // tie between rows 0 and 1
    EXPECT_EQ(g, expected);
}

TEST(PoolingBackward, ChannelMismatchIsShapeError) {
    EXPECT_THROW(pool_backward(MatrixD::Ones(4, 3), kAvg, VectorD::Ones(2)), ShapeError);
}

TEST(PoolingBackward, MatchesFiniteDifferences) {
    SplitMix64 rng(17);
    for (const auto& method : {kAvg, kMax, kGem}) {
        for (int t = 0; t < 10; ++t) {
            const MatrixD map = random_map(rng, 9, 2);
            VectorD up(2);
            up << rng.uniform(-1, 1), rng.uniform(-1, 1);
            const MatrixD analytic = pool_backward(map, method, up);
            const MatrixD numeric = oracle::numeric_gradient(
                [&](const MatrixD& m) { return pool_forward(m, method).dot(up); }, map, 1e-4);
            EXPECT_LE(oracle::max_relative_error(analytic, numeric), 1e-5) << to_string(method.kind);
        }
    }
}
