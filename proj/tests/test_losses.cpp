#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dgtl/losses.hpp"
#include "dgtl/rng.hpp"
#include "oracles.hpp"

using namespace dgtl;

namespace {

constexpr double kEps = kDistanceEps;

/// P identities, each with K visible rows then K thermal rows.
FeatureBatch<double> pk_batch(int P, int K, const MatrixD& features) {
    FeatureBatch<double> b;
    b.features = features;
    for (int i = 0; i < P; ++i)
        for (int m = 0; m < 2; ++m)
            for (int k = 0; k < K; ++k) {
                b.identities.push_back(i);
                b.modalities.push_back(static_cast<Modality>(m));
            }
    return b;
}

FeatureBatch<double> random_batch(SplitMix64& rng, int P, int K, int D, double spread = 1.0) {
    MatrixD f(2 * P * K, D);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = spread * rng.normal();
    return pk_batch(P, K, f);
}

std::vector<int> modality_ints(const FeatureBatch<double>& b) {
    std::vector<int> m;
    for (auto x : b.modalities) m.push_back(static_cast<int>(x));
    return m;
}

MatrixD fine_fixture() {
    MatrixD f(8, 4);
    f << 0.3, -1.2, 0.5, 0.9,
         0.1, -0.8, 0.7, 1.1,
         0.6, -1.0, 0.2, 0.4,
        -0.2, -0.5, 0.9, 1.3,
         1.1, 0.4, -0.3, 0.2,
         0.7, 0.9, -0.6, 0.5,
         0.2, 0.1, 0.0, 0.8,
         1.4, 0.6, -0.1, -0.2;
    return f;
}

MatrixD hetero_fixture() {
    MatrixD f(12, 4);
    f << 0.2, 0.1, -0.4, 0.8,
         0.5, -0.3, -0.1, 0.6,
         0.9, 0.4, 0.3, 0.1,
         0.6, 0.2, 0.5, -0.2,
        -0.7, 1.0, 0.2, 0.3,
        -0.4, 0.8, 0.6, 0.1,
        -0.1, 0.3, 0.9, 0.4,
        -0.5, 0.5, 0.4, 0.7,
         0.8, -0.9, 0.1, -0.5,
         1.0, -0.6, -0.2, -0.3,
         0.3, -0.4, 0.4, 0.2,
         0.6, -0.8, 0.0, 0.0;
    return f;
}

/// Central differences of a triplet loss; returns false when a perturbation
/// changes the mining decisions (a kink inside the stencil).
template <typename Loss>
bool tie_free_numeric_gradient(Loss loss, const FeatureBatch<double>& batch, double step, MatrixD& out) {
    const auto base = loss(batch).selection;
    out.resize(batch.features.rows(), batch.features.cols());
    FeatureBatch<double> work = batch;
    for (Eigen::Index i = 0; i < work.features.size(); ++i) {
        double& x = work.features.data()[i];
        const double saved = x;
        x = saved + step;
        const auto plus = loss(work);
        x = saved - step;
        const auto minus = loss(work);
        x = saved;
        if (plus.selection != base || minus.selection != base) return false;
        out.data()[i] = (plus.loss - minus.loss) / (2 * step);
    }
    return true;
}

}  // namespace

TEST(PairwiseEuclidean, IdenticalRowsAreNearZero) {
    const MatrixD d = pairwise_euclidean(MatrixD(MatrixD::Constant(5, 3, 0.7)));
    EXPECT_LE(d.maxCoeff(), std::sqrt(kEps) * (1 + 1e-12));
    for (int i = 0; i < 5; ++i) EXPECT_EQ(d(i, i), 0.0);
}

TEST(PairwiseEuclidean, UnitBasisVectors) {
    const MatrixD f = MatrixD::Identity(2, 2);
    const MatrixD d = pairwise_euclidean(f);
    EXPECT_NEAR(d(0, 1), std::sqrt(2.0), 1e-12);
    EXPECT_EQ(d(0, 1), d(1, 0));
}

TEST(PairwiseEuclidean, MatchesNaiveLoops) {
    SplitMix64 rng(42);
    MatrixD f(6, 4);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    const MatrixD d = pairwise_euclidean(f);
    const auto ref = oracle::pairwise(oracle::to_rows(f), kEps);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) EXPECT_NEAR(d(i, j), ref[i][j], 1e-10);
    EXPECT_EQ(d, d.transpose());
}

TEST(PairwiseEuclidean, RejectsNonFinite) {
    MatrixD f = MatrixD::Zero(3, 2);
    f(1, 1) = std::nan("");
    EXPECT_THROW(pairwise_euclidean(f), DomainError);
}

TEST(FineTriplet, AllIdenticalFeaturesGiveMarginPerAnchor) {
    const auto b = pk_batch(2, 1, MatrixD::Constant(4, 3, 0.25));
    const auto r = fine_triplet(b, 0.3);
    EXPECT_NEAR(r.loss, 2 * 2 * 1 * 0.3, 1e-9);
    EXPECT_TRUE(r.grad.allFinite());
}

TEST(FineTriplet, SeparatedIdentitiesGiveZeroLossAndGradient) {
    MatrixD f(4, 2);
    f << 0, 0,
         0, 0,
         5, 5,
         5, 5;
    const auto r = fine_triplet(pk_batch(2, 1, f), 0.3);
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.grad, MatrixD::Zero(4, 2));
}

TEST(FineTriplet, FixtureMatchesExhaustiveOracle) {
    const auto b = pk_batch(2, 2, fine_fixture());
    const double frozen = 1.9740480706238939;  // exhaustive enumeration, computed once offline
    const auto r = fine_triplet(b, 0.3);
    EXPECT_NEAR(r.loss, frozen, 1e-12);
    EXPECT_NEAR(oracle::fine_triplet(oracle::to_rows(b.features), b.identities, 0.3, kEps), frozen, 1e-12);
}

TEST(FineTriplet, SingleRowIdentityIsDataError) {
    FeatureBatch<double> b{MatrixD::Zero(3, 2), {0, 0, 1}, {Modality::Visible, Modality::Thermal, Modality::Visible}};
    EXPECT_THROW(fine_triplet(b, 0.3), DataError);
    FeatureBatch<double> one{MatrixD::Zero(2, 2), {0, 0}, {Modality::Visible, Modality::Thermal}};
    EXPECT_THROW(fine_triplet(one, 0.3), DataError);
}

TEST(FineTriplet, AnchorSelfIsNeverHardestPositiveWhenOthersDiffer) {
    MatrixD f(4, 1);
    f << 0, 1, 10, 11;
    const auto r = fine_triplet(pk_batch(2, 1, f), 0.3);
    EXPECT_EQ(r.selection[0], 1);  // anchor 0 -> positive 1, not itself
    EXPECT_EQ(r.selection[3], 0);  // anchor 1 -> positive 0
}

TEST(Centers, SingleSampleCenterIsTheSample) {
    SplitMix64 rng(2);
    const auto b = random_batch(rng, 3, 1, 4);
    const auto cs = compute_centers(b);
    for (Eigen::Index r = 0; r < b.rows(); ++r) EXPECT_EQ(cs.centers.row(r), b.features.row(r));
}

TEST(Centers, Midpoint) {
    MatrixD f(4, 2);
    f << 0, 0,
         2, 4,
         9, 9,
         9, 9;
    const auto cs = compute_centers(pk_batch(1, 2, f));
    EXPECT_EQ(cs.centers(0, 0), 1.0);
    EXPECT_EQ(cs.centers(0, 1), 2.0);
}

TEST(Centers, MatchNaiveGrouping) {
    SplitMix64 rng(8);
    auto b = random_batch(rng, 4, 3, 5);
    // interleave rows so grouping cannot rely on contiguity
    std::vector<int> perm(b.rows());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    FeatureBatch<double> s;
    s.features.resize(b.rows(), b.features.cols());
    for (Eigen::Index r = 0; r < b.rows(); ++r) {
        s.features.row(r) = b.features.row(perm[r]);
        s.identities.push_back(b.identities[perm[r]]);
        s.modalities.push_back(b.modalities[perm[r]]);
    }
    const auto cs = compute_centers(s);
    const auto ref = oracle::centers(oracle::to_rows(s.features), s.identities, modality_ints(s));
    for (std::size_t i = 0; i < cs.identities.size(); ++i)
        for (int m = 0; m < 2; ++m) {
            const auto& want = ref.at({cs.identities[i], m});
            for (int k = 0; k < 5; ++k)
                EXPECT_NEAR(cs.centers(cs.row(i, static_cast<Modality>(m)), k), want[k], 1e-12);
        }
}

TEST(Centers, MissingModalityIsDataError) {
    FeatureBatch<double> b{MatrixD::Zero(3, 2), {0, 0, 1}, {Modality::Visible, Modality::Thermal, Modality::Visible}};
    EXPECT_THROW(compute_centers(b), DataError);
}

TEST(HeteroCenter, AllIdenticalFeaturesGiveTwoMarginsPerIdentity) {
    const auto b = pk_batch(2, 3, MatrixD::Constant(12, 4, -1.5));
    EXPECT_NEAR(hetero_center_triplet(b, 0.3).loss, 2 * 2 * 0.3, 1e-9);
}

TEST(HeteroCenter, CoincidentCentersAndWideGapsGiveZero) {
    MatrixD f(8, 2);
    f << 0, 0,
         0, 2,   // visible center (0, 1)
         0, 1,
         0, 1,   // thermal center (0, 1)
         5, 0,
         5, 0,
         4, 0,
         6, 0;
    const auto r = hetero_center_triplet(pk_batch(2, 2, f), 0.3);
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.grad, MatrixD::Zero(8, 2));
}

TEST(HeteroCenter, FixtureMatchesOracleAndFiniteDifferences) {
    const auto b = pk_batch(3, 2, hetero_fixture());
    const double frozen_03 = 1.1229692884507421;  // exhaustive center enumeration, computed once offline
    const double frozen_08 = 3.2823987434564006;
    EXPECT_NEAR(hetero_center_triplet(b, 0.3).loss, frozen_03, 1e-12);
    EXPECT_NEAR(hetero_center_triplet(b, 0.8).loss, frozen_08, 1e-12);
    const auto rows = oracle::to_rows(b.features);
    EXPECT_NEAR(oracle::hetero_center(rows, b.identities, modality_ints(b), 0.3, kEps), frozen_03, 1e-12);

    const auto r = hetero_center_triplet(b, 0.8);
    MatrixD numeric;
    ASSERT_TRUE(tie_free_numeric_gradient([](const auto& x) { return hetero_center_triplet(x, 0.8); }, b, 1e-5,
                                          numeric));
    EXPECT_LE(oracle::max_relative_error(r.grad, numeric, 1e-6), 1e-5);
}

TEST(HeteroCenter, SingleIdentityIsDataError) {
    const auto b = pk_batch(1, 2, MatrixD::Zero(4, 3));
    EXPECT_THROW(hetero_center_triplet(b, 0.3), DataError);
}

TEST(IdLoss, UniformLogitsGiveLogN) {
    const auto r = id_loss(MatrixD(MatrixD::Constant(4, 7, 0.3)), {0, 3, 6, 2});
    EXPECT_NEAR(r.loss, std::log(7.0), 1e-12);
}

TEST(IdLoss, SaturatedCorrectClass) {
    MatrixD logits = MatrixD::Zero(3, 4);
    const std::vector<int> y{2, 0, 3};
    for (int r = 0; r < 3; ++r) logits(r, y[r]) = 1000;
    EXPECT_LT(id_loss(logits, y).loss, 1e-6);
}

TEST(IdLoss, MatchesLogSumExpAndFiniteDifferences) {
    SplitMix64 rng(5);
    MatrixD logits(6, 5);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 3 * rng.normal();
    const std::vector<int> y{0, 4, 2, 2, 1, 3};
    const auto r = id_loss(logits, y);
    EXPECT_NEAR(r.loss, oracle::cross_entropy(oracle::to_rows(logits), y), 1e-10);
    const MatrixD numeric =
        oracle::numeric_gradient4([&](const MatrixD& l) { return id_loss(l, y).loss; }, logits, 1e-3);
    EXPECT_LE(oracle::max_relative_error(r.grad, numeric, 1e-6), 1e-6);
}

TEST(IdLoss, OutOfRangeLabelIsRangeError) {
    EXPECT_THROW(id_loss(MatrixD(MatrixD::Zero(2, 3)), {0, 3}), RangeError);
    EXPECT_THROW(id_loss(MatrixD(MatrixD::Zero(2, 3)), {-1, 0}), RangeError);
}

// Property sweeps over random PK batches.

TEST(TripletProperties, OracleEquivalenceOnRandomBatches) {
    SplitMix64 rng(2024);
    for (int t = 0; t < 100; ++t) {
        const int P = 2 + static_cast<int>(rng.below(3));
        const int K = 1 + static_cast<int>(rng.below(3));
        const int D = 1 + static_cast<int>(rng.below(8));
        const double m = rng.uniform(0, 1.5);
        const auto b = random_batch(rng, P, K, D);
        const auto rows = oracle::to_rows(b.features);
        EXPECT_NEAR(fine_triplet(b, m).loss, oracle::fine_triplet(rows, b.identities, m, kEps), 1e-9);
        EXPECT_NEAR(hetero_center_triplet(b, m).loss,
                    oracle::hetero_center(rows, b.identities, modality_ints(b), m, kEps), 1e-9);
    }
}

TEST(TripletProperties, NonNegativeAndMonotoneInMargin) {
    SplitMix64 rng(99);
    for (int t = 0; t < 50; ++t) {
        const auto b = random_batch(rng, 3, 2, 4);
        double prev_f = -1, prev_c = -1;
        for (double m : {0.0, 0.1, 0.3, 0.8, 2.0}) {
            const double f = fine_triplet(b, m).loss;
            const double c = hetero_center_triplet(b, m).loss;
            EXPECT_GE(f, 0.0);
            EXPECT_GE(c, 0.0);
            EXPECT_GE(f, prev_f);
            EXPECT_GE(c, prev_c);
            prev_f = f;
            prev_c = c;
        }
    }
}

TEST(TripletProperties, TranslationInvariance) {
    SplitMix64 rng(7);
    for (int t = 0; t < 30; ++t) {
        auto b = random_batch(rng, 3, 2, 5);
        const double f0 = fine_triplet(b, 0.5).loss;
        const double c0 = hetero_center_triplet(b, 0.5).loss;
        Eigen::RowVectorXd shift(5);
        for (int k = 0; k < 5; ++k) shift(k) = rng.uniform(-3, 3);
        b.features.rowwise() += shift;
        EXPECT_NEAR(fine_triplet(b, 0.5).loss, f0, 1e-9);
        EXPECT_NEAR(hetero_center_triplet(b, 0.5).loss, c0, 1e-9);
    }
}

TEST(TripletProperties, GradientsMatchFiniteDifferences) {
    SplitMix64 rng(31);
    int checked = 0;
    for (int t = 0; t < 40; ++t) {
        const auto b = random_batch(rng, 2 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(3)), 4);
        const double m = rng.uniform(0.2, 1.5);
        MatrixD numeric;
        if (tie_free_numeric_gradient([&](const auto& x) { return fine_triplet(x, m); }, b, 1e-5, numeric)) {
            EXPECT_LE(oracle::max_relative_error(fine_triplet(b, m).grad, numeric, 1e-6), 1e-5);
            ++checked;
        }
        if (tie_free_numeric_gradient([&](const auto& x) { return hetero_center_triplet(x, m); }, b, 1e-5, numeric)) {
            EXPECT_LE(oracle::max_relative_error(hetero_center_triplet(b, m).grad, numeric, 1e-6), 1e-5);
            ++checked;
        }
    }
    EXPECT_GE(checked, 60);
}

TEST(TripletProperties, PermutationEquivariance) {
    SplitMix64 rng(13);
    for (int t = 0; t < 20; ++t) {
        const auto b = random_batch(rng, 3, 2, 4);
        std::vector<int> perm(b.rows());
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        FeatureBatch<double> p;
        p.features.resize(b.rows(), b.features.cols());
        for (Eigen::Index r = 0; r < b.rows(); ++r) {
            p.features.row(r) = b.features.row(perm[r]);
            p.identities.push_back(b.identities[perm[r]]);
            p.modalities.push_back(b.modalities[perm[r]]);
        }
        for (auto loss : {+[](const FeatureBatch<double>& x) { return fine_triplet(x, 0.4); },
                          +[](const FeatureBatch<double>& x) { return hetero_center_triplet(x, 0.4); }}) {
            const auto a = loss(b);
            const auto c = loss(p);
            EXPECT_NEAR(a.loss, c.loss, 1e-12);
            for (Eigen::Index r = 0; r < b.rows(); ++r)
                EXPECT_LE((c.grad.row(r) - a.grad.row(perm[r])).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}
