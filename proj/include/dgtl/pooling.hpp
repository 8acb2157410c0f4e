#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "dgtl/errors.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

enum class PoolKind { Avg, Max, GeM };

struct PoolingMethod {
    PoolKind kind = PoolKind::Avg;
    double gem_p = 3.0;  // GeM exponent, fixed (not learned)

    friend bool operator==(const PoolingMethod&, const PoolingMethod&) = default;
};

inline std::string to_string(PoolKind k) {
    switch (k) {
        case PoolKind::Avg: return "avg";
        case PoolKind::Max: return "max";
        case PoolKind::GeM: return "gem";
    }
    return "?";
}

inline PoolKind parse_pool_kind(std::string_view s) {
    if (s == "avg") return PoolKind::Avg;
    if (s == "max") return PoolKind::Max;
    if (s == "gem") return PoolKind::GeM;
    throw ConfigError("unknown pooling method '" + std::string(s) + "' (avg, max, gem)");
}

/// A feature map is stored as (H*W) x C: one row per spatial position in
/// row-major order, one column per channel.
template <typename Scalar>
using FeatureMap = Matrix<Scalar>;

namespace detail {

template <typename Derived>
void check_map(const Eigen::MatrixBase<Derived>& map, const PoolingMethod& method) {
    if (map.rows() < 1 || map.cols() < 1) throw ShapeError("empty feature map");
    if (!map.allFinite()) throw DomainError("feature map has non-finite entries");
    if (method.kind == PoolKind::GeM) {
        if (!(method.gem_p > 0.0) || !std::isfinite(method.gem_p))
            throw DomainError("GeM exponent must be finite and positive");
        if ((map.array() < 0).any()) throw DomainError("GeM pooling needs non-negative input");
    }
}

}  // namespace detail

/// Pools every channel over all spatial positions.
template <typename Derived>
Vector<typename Derived::Scalar> pool_forward(const Eigen::MatrixBase<Derived>& map,
                                              const PoolingMethod& method) {
    using Scalar = typename Derived::Scalar;
    detail::check_map(map, method);
    const auto n = static_cast<Scalar>(map.rows());
    Vector<Scalar> out(map.cols());
    for (Eigen::Index c = 0; c < map.cols(); ++c) {
        switch (method.kind) {
            case PoolKind::Avg: out(c) = map.col(c).sum() / n; break;
            case PoolKind::Max: out(c) = map.col(c).maxCoeff(); break;
            case PoolKind::GeM: {
                // Factor out the channel max so x^p cannot overflow.
                const Scalar p = static_cast<Scalar>(method.gem_p);
                const Scalar top = map.col(c).maxCoeff();
                if (top <= 0) {
                    out(c) = 0;
                    break;
                }
                Scalar acc = 0;
                for (Eigen::Index i = 0; i < map.rows(); ++i) acc += std::pow(map(i, c) / top, p);
                out(c) = top * std::pow(acc / n, Scalar(1) / p);
                break;
            }
        }
    }
    return out;
}

/// Row index of the first maximum per channel, the position that receives the
/// Max-pooling subgradient.
template <typename Derived>
std::vector<Eigen::Index> pool_argmax(const Eigen::MatrixBase<Derived>& map) {
    std::vector<Eigen::Index> idx(map.cols(), 0);
    for (Eigen::Index c = 0; c < map.cols(); ++c)
        for (Eigen::Index i = 1; i < map.rows(); ++i)
            if (map(i, c) > map(idx[c], c)) idx[c] = i;
    return idx;
}

/// Gradient of the pooled vector with respect to the map, given the upstream
/// gradient on the pooled vector.
template <typename Derived, typename UpDerived>
FeatureMap<typename Derived::Scalar> pool_backward(const Eigen::MatrixBase<Derived>& map,
                                                   const PoolingMethod& method,
                                                   const Eigen::MatrixBase<UpDerived>& upstream) {
    using Scalar = typename Derived::Scalar;
    detail::check_map(map, method);
    if (upstream.size() != map.cols())
        throw ShapeError("upstream gradient has " + std::to_string(upstream.size()) +
                         " channels, map has " + std::to_string(map.cols()));
    const auto n = static_cast<Scalar>(map.rows());
    FeatureMap<Scalar> grad = FeatureMap<Scalar>::Zero(map.rows(), map.cols());
    switch (method.kind) {
        case PoolKind::Avg:
            for (Eigen::Index c = 0; c < map.cols(); ++c) grad.col(c).setConstant(upstream(c) / n);
            break;
        case PoolKind::Max: {
            const auto idx = pool_argmax(map);
            for (Eigen::Index c = 0; c < map.cols(); ++c) grad(idx[c], c) = upstream(c);
            break;
        }
        case PoolKind::GeM: {
            // d/dx_i (mean x^p)^(1/p) = (x_i / y)^(p-1) / n
            const Scalar p = static_cast<Scalar>(method.gem_p);
            const auto pooled = pool_forward(map, method);
            for (Eigen::Index c = 0; c < map.cols(); ++c) {
                if (pooled(c) <= 0) continue;
                for (Eigen::Index i = 0; i < map.rows(); ++i)
                    grad(i, c) = upstream(c) * std::pow(map(i, c) / pooled(c), p - Scalar(1)) / n;
            }
            break;
        }
    }
    return grad;
}

}  // namespace dgtl
