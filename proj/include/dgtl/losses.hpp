#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dgtl/errors.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

/// Added under the square root of every squared distance so the distance is
/// differentiable at coincident points.
inline constexpr double kDistanceEps = 1e-12;

template <typename Scalar, typename A, typename B>
Scalar smoothed_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    Scalar sq = 0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        const Scalar d = a(k) - b(k);
        sq += d * d;
    }
    return std::sqrt(sq + static_cast<Scalar>(kDistanceEps));
}

/// Symmetric distance matrix with an exact zero diagonal; off-diagonal
/// entries are sqrt(||a - b||^2 + kDistanceEps).
template <typename Scalar>
Matrix<Scalar> pairwise_euclidean(const Matrix<Scalar>& features) {
    if (!features.allFinite()) throw DomainError("pairwise_euclidean: non-finite feature");
    const Eigen::Index n = features.rows();
    Matrix<Scalar> dist = Matrix<Scalar>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            dist(i, j) = dist(j, i) =
                smoothed_distance<Scalar>(features.row(i), features.row(j));
    return dist;
}

/// Loss value, input gradient and the mining decisions behind them.
template <typename Scalar>
struct TripletResult {
    Scalar loss = 0;
    Matrix<Scalar> grad;
    /// Per anchor: (positive index, negative index, hinge active). Two
    /// evaluations with equal selections lie on the same smooth piece.
    std::vector<int> selection;
};

/// Batch-hard triplet loss summed over every anchor in the batch.
///
/// For each anchor the hardest positive is the farthest row with the same
/// identity (either modality, the anchor itself included at distance 0) and
/// the hardest negative is the nearest row of another identity. Ties go to
/// the lowest row index.
template <typename Scalar>
TripletResult<Scalar> fine_triplet(const FeatureBatch<Scalar>& batch, Scalar margin) {
    batch.check_shape();
    std::map<int, int> per_identity;
    for (int id : batch.identities) ++per_identity[id];
    if (per_identity.size() < 2) throw DataError("fine_triplet needs at least 2 identities");
    for (const auto& [id, count] : per_identity)
        if (count < 2)
            throw DataError("identity " + std::to_string(id) + " has a single row");

    const auto& f = batch.features;
    const Matrix<Scalar> dist = pairwise_euclidean(f);
    const Eigen::Index n = f.rows();
    TripletResult<Scalar> out;
    out.grad = Matrix<Scalar>::Zero(n, f.cols());
    out.selection.reserve(3 * n);
    for (Eigen::Index a = 0; a < n; ++a) {
        Eigen::Index pos = -1, neg = -1;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (batch.identities[j] == batch.identities[a]) {
                if (pos < 0 || dist(a, j) > dist(a, pos)) pos = j;
            } else if (neg < 0 || dist(a, j) < dist(a, neg)) {
                neg = j;
            }
        }
        const Scalar hinge = margin + dist(a, pos) - dist(a, neg);
        const bool active = hinge > 0;
        out.selection.insert(out.selection.end(),
                             {static_cast<int>(pos), static_cast<int>(neg), active ? 1 : 0});
        if (!active) continue;
        out.loss += hinge;
        if (pos != a) {
            const auto u = ((f.row(a) - f.row(pos)) / dist(a, pos)).eval();
            out.grad.row(a) += u;
            out.grad.row(pos) -= u;
        }
        const auto v = ((f.row(a) - f.row(neg)) / dist(a, neg)).eval();
        out.grad.row(a) -= v;
        out.grad.row(neg) += v;
    }
    return out;
}

/// Per-(identity, modality) means. Row 2*i is the visible center of
/// identities[i], row 2*i + 1 its thermal center; identities keep their order
/// of first appearance in the batch.
template <typename Scalar>
struct CenterSet {
    std::vector<int> identities;
    Matrix<Scalar> centers;
    std::vector<int> counts;

    Eigen::Index row(std::size_t identity_slot, Modality m) const {
        return static_cast<Eigen::Index>(2 * identity_slot + static_cast<std::size_t>(m));
    }
};

template <typename Scalar>
CenterSet<Scalar> compute_centers(const FeatureBatch<Scalar>& batch) {
    batch.check_shape();
    CenterSet<Scalar> cs;
    std::map<int, std::size_t> slot;
    for (int id : batch.identities)
        if (slot.emplace(id, cs.identities.size()).second) cs.identities.push_back(id);
    const std::size_t P = cs.identities.size();
    cs.centers = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(2 * P), batch.features.cols());
    cs.counts.assign(2 * P, 0);
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        const auto row = cs.row(slot.at(batch.identities[r]), batch.modalities[r]);
        cs.centers.row(row) += batch.features.row(r);
        ++cs.counts[row];
    }
    for (std::size_t g = 0; g < 2 * P; ++g) {
        if (cs.counts[g] == 0)
            throw DataError("identity " + std::to_string(cs.identities[g / 2]) + " has no " +
                            (g % 2 == 0 ? "visible" : "thermal") + " rows");
        cs.centers.row(static_cast<Eigen::Index>(g)) /= static_cast<Scalar>(cs.counts[g]);
    }
    return cs;
}

/// Hetero-center triplet loss: for each identity, one hinge anchored at its
/// visible center and one at its thermal center. The positive is the same
/// identity's other-modality center; the negative is the nearest center of
/// any other identity in either modality. The gradient reaches every sample
/// through its center mean.
template <typename Scalar>
TripletResult<Scalar> hetero_center_triplet(const FeatureBatch<Scalar>& batch, Scalar margin) {
    const CenterSet<Scalar> cs = compute_centers(batch);
    const std::size_t P = cs.identities.size();
    if (P < 2) throw DataError("hetero_center_triplet needs at least 2 identities");
    const auto& c = cs.centers;
    const Eigen::Index rows = c.rows();

    Matrix<Scalar> center_grad = Matrix<Scalar>::Zero(rows, c.cols());
    TripletResult<Scalar> out;
    out.selection.reserve(3 * rows);
    for (Eigen::Index a = 0; a < rows; ++a) {
        const Eigen::Index pos = a ^ 1;
        const Scalar dp = smoothed_distance<Scalar>(c.row(a), c.row(pos));
        Eigen::Index neg = -1;
        Scalar dn = std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index s = 0; s < rows; ++s) {
            if (s / 2 == a / 2) continue;
            const Scalar d = smoothed_distance<Scalar>(c.row(a), c.row(s));
            if (d < dn) {
                dn = d;
                neg = s;
            }
        }
        const Scalar hinge = margin + dp - dn;
        const bool active = hinge > 0;
        out.selection.insert(out.selection.end(),
                             {static_cast<int>(pos), static_cast<int>(neg), active ? 1 : 0});
        if (!active) continue;
        out.loss += hinge;
        const auto u = ((c.row(a) - c.row(pos)) / dp).eval();
        center_grad.row(a) += u;
        center_grad.row(pos) -= u;
        const auto v = ((c.row(a) - c.row(neg)) / dn).eval();
        center_grad.row(a) -= v;
        center_grad.row(neg) += v;
    }

    std::map<int, std::size_t> slot;
    for (std::size_t i = 0; i < P; ++i) slot[cs.identities[i]] = i;
    out.grad = Matrix<Scalar>::Zero(batch.rows(), c.cols());
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        const auto g = cs.row(slot.at(batch.identities[r]), batch.modalities[r]);
        out.grad.row(r) = center_grad.row(g) / static_cast<Scalar>(cs.counts[g]);
    }
    return out;
}

template <typename Scalar>
struct IdLossResult {
    Scalar loss = 0;
    Matrix<Scalar> grad;
};

/// Mean softmax cross-entropy; `labels` are class indices into the logit columns.
template <typename Scalar>
IdLossResult<Scalar> id_loss(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw ShapeError("id_loss: logits rows and labels differ in length");
    if (logits.rows() == 0) throw ShapeError("id_loss: empty batch");
    const Eigen::Index n = logits.rows();
    IdLossResult<Scalar> out;
    out.grad.resize(n, logits.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
        const int y = labels[r];
        if (y < 0 || y >= logits.cols())
            throw RangeError("class index " + std::to_string(y) + " outside [0, " +
                             std::to_string(logits.cols()) + ")");
        const Scalar top = logits.row(r).maxCoeff();
        // std::exp, not Eigen's vectorized exp: the latter clamps large negative
        // arguments and returns ~1e-309 instead of 0.
        const auto e = (logits.row(r).array() - top).unaryExpr([](Scalar v) { return std::exp(v); }).eval();
        const Scalar z = e.sum();
        out.loss += std::log(z) + top - logits(r, y);
        out.grad.row(r) = e / z;
        out.grad(r, y) -= 1;
    }
    out.loss /= static_cast<Scalar>(n);
    out.grad /= static_cast<Scalar>(n);
    return out;
}

}  // namespace dgtl
