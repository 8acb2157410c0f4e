#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dgtl/errors.hpp"
#include "dgtl/pooling.hpp"
#include "dgtl/rng.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

enum class Fusion { Sum, Concat };

inline std::string to_string(Fusion f) { return f == Fusion::Sum ? "sum" : "cat"; }

inline Fusion parse_fusion(std::string_view s) {
    if (s == "sum") return Fusion::Sum;
    if (s == "cat" || s == "concat") return Fusion::Concat;
    throw ConfigError("unknown fusion '" + std::string(s) + "' (sum, cat)");
}

enum class Mode { Train, Eval };

struct EmbedderConfig {
    Shape3 input_shape{6, 6, 4};
    std::vector<int> spec_layers{16};    // modality-specific widths
    std::vector<int> shared_layers{32};  // shared hidden widths; a final layer maps to feature_dim
    int feature_dim = 32;
    int coarse_dim = 0;  // channels pooled by the coarse branch; 0 means feature_dim
    int num_identities = 32;
    Fusion fusion = Fusion::Sum;
    PoolingMethod pool_fine{PoolKind::Max, 3.0};
    PoolingMethod pool_coarse{PoolKind::Max, 3.0};
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
    std::uint64_t seed = 1;

    int coarse_channels() const { return coarse_dim == 0 ? feature_dim : coarse_dim; }
    int fused_dim() const {
        return fusion == Fusion::Sum ? feature_dim : coarse_channels() + feature_dim;
    }

    void validate() const {
        if (input_shape.height < 1 || input_shape.width < 1 || input_shape.channels < 1)
            throw ConfigError("input shape must be positive in every dimension");
        if (spec_layers.empty()) throw ConfigError("need at least one modality-specific layer");
        for (int w : spec_layers)
            if (w < 1) throw ConfigError("modality-specific layer width must be >= 1");
        for (int w : shared_layers)
            if (w < 1) throw ConfigError("shared layer width must be >= 1");
        if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
        if (num_identities < 2) throw ConfigError("num_identities must be >= 2");
        if (coarse_dim < 0 || coarse_dim > feature_dim)
            throw ConfigError("coarse_dim must lie in [0, feature_dim]");
        if (fusion == Fusion::Sum && coarse_channels() != feature_dim)
            throw ConfigError("sum fusion needs equal fine and coarse branch dims (" +
                              std::to_string(feature_dim) + " vs " +
                              std::to_string(coarse_channels()) + ")");
        if (!(bn_epsilon > 0) || !std::isfinite(bn_epsilon))
            throw ConfigError("bn_epsilon must be positive");
        if (!(bn_momentum >= 0 && bn_momentum <= 1))
            throw ConfigError("bn_momentum must lie in [0, 1]");
        for (const auto* p : {&pool_fine, &pool_coarse})
            if (!(p->gem_p > 0) || !std::isfinite(p->gem_p))
                throw ConfigError("gem_p must be finite and positive");
    }
};

/// Per-pixel (1x1) affine layer; weight is fan_in x fan_out.
struct Dense {
    MatrixD weight;
    VectorD bias;
};

struct BatchNorm {
    VectorD gamma;
    VectorD beta;  // held at zero, never updated
    VectorD running_mean;
    VectorD running_var;
};

enum class TensorRole { Trainable, Frozen, Statistic };

struct Parameters {
    std::vector<Dense> visible;
    std::vector<Dense> thermal;
    std::vector<Dense> shared;
    BatchNorm bn_fine;
    BatchNorm bn_fused;
    MatrixD classifier_fine;    // feature_dim x num_identities
    MatrixD classifier_coarse;  // fused_dim x num_identities

    /// Visits every array in declaration order as (name, flat data, role).
    /// The order is the checkpoint order.
    template <typename Self, typename F>
    static void visit(Self& self, F&& fn) {
        auto dense = [&](auto& layers, const std::string& prefix) {
            for (std::size_t i = 0; i < layers.size(); ++i) {
                const std::string base = prefix + "." + std::to_string(i);
                fn(base + ".weight", layers[i].weight, TensorRole::Trainable);
                fn(base + ".bias", layers[i].bias, TensorRole::Trainable);
            }
        };
        auto bn = [&](auto& layer, const std::string& prefix) {
            fn(prefix + ".gamma", layer.gamma, TensorRole::Trainable);
            fn(prefix + ".beta", layer.beta, TensorRole::Frozen);
            fn(prefix + ".running_mean", layer.running_mean, TensorRole::Statistic);
            fn(prefix + ".running_var", layer.running_var, TensorRole::Statistic);
        };
        dense(self.visible, "visible");
        dense(self.thermal, "thermal");
        dense(self.shared, "shared");
        bn(self.bn_fine, "bn_fine");
        bn(self.bn_fused, "bn_fused");
        fn(std::string("classifier_fine"), self.classifier_fine, TensorRole::Trainable);
        fn(std::string("classifier_coarse"), self.classifier_coarse, TensorRole::Trainable);
    }

    template <typename F>
    void for_each(F&& fn) { visit(*this, std::forward<F>(fn)); }
    template <typename F>
    void for_each(F&& fn) const { visit(*this, std::forward<F>(fn)); }

    /// Same shapes, all zero.
    Parameters zeros_like() const {
        Parameters z = *this;
        z.for_each([](const std::string&, auto& t, TensorRole) { t.setZero(); });
        return z;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const std::string&, const auto& t, TensorRole) { ok = ok && t.allFinite(); });
        return ok;
    }

    friend bool operator==(const Parameters& a, const Parameters& b) {
        std::vector<const double*> pa, pb;
        std::vector<Eigen::Index> sa, sb;
        a.for_each([&](const std::string&, const auto& t, TensorRole) {
            pa.push_back(t.data());
            sa.push_back(t.size());
        });
        b.for_each([&](const std::string&, const auto& t, TensorRole) {
            pb.push_back(t.data());
            sb.push_back(t.size());
        });
        if (sa != sb) return false;
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (!std::equal(pa[i], pa[i] + sa[i], pb[i])) return false;
        return true;
    }
};

using ParameterGradients = Parameters;

/// Deterministic initialization: weights and biases uniform in
/// +-sqrt(1/fan_in), gamma 1, beta 0, running statistics (0, 1).
inline Parameters init_parameters(const EmbedderConfig& cfg) {
    cfg.validate();
    SplitMix64 rng(cfg.seed);
    auto uniform = [&](Eigen::Index rows, Eigen::Index cols, int fan_in) {
        const double bound = std::sqrt(1.0 / fan_in);
        MatrixD m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
        return m;
    };
    auto dense = [&](int in, int out) {
        Dense d;
        d.weight = uniform(in, out, in);
        d.bias = uniform(out, 1, in);
        return d;
    };
    auto bn = [](int dim) {
        return BatchNorm{VectorD::Ones(dim), VectorD::Zero(dim), VectorD::Zero(dim),
                         VectorD::Ones(dim)};
    };

    Parameters p;
    for (auto* stream : {&p.visible, &p.thermal}) {
        int in = cfg.input_shape.channels;
        for (int w : cfg.spec_layers) {
            stream->push_back(dense(in, w));
            in = w;
        }
    }
    int in = cfg.spec_layers.back();
    for (int w : cfg.shared_layers) {
        p.shared.push_back(dense(in, w));
        in = w;
    }
    p.shared.push_back(dense(in, cfg.feature_dim));
    p.bn_fine = bn(cfg.feature_dim);
    p.bn_fused = bn(cfg.fused_dim());
    p.classifier_fine = uniform(cfg.feature_dim, cfg.num_identities, cfg.feature_dim);
    p.classifier_coarse = uniform(cfg.fused_dim(), cfg.num_identities, cfg.fused_dim());
    return p;
}

/// Every named feature stage for one batch, one row per sample.
struct ForwardOutputs {
    MatrixD f_p_fine;
    MatrixD f_p_coarse;
    MatrixD f_bn;
    MatrixD f_fused;
    MatrixD f_bnf;
    MatrixD logits_fine;
    MatrixD logits_coarse;
    /// Winning spatial position of every Max-pooled channel, flattened; empty
    /// when neither branch uses Max. Part of the piecewise-smooth signature.
    std::vector<int> pool_argmax;
};

/// Upstream gradients on the ForwardOutputs stages; empty matrices count as zero.
struct OutputGradients {
    MatrixD f_p_fine;
    MatrixD f_bn;
    MatrixD f_fused;
    MatrixD f_bnf;
    MatrixD logits_fine;
    MatrixD logits_coarse;
};

namespace detail {

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct BatchNormCache {
    MatrixD xhat;
    VectorD inv_std;
    VectorD mean;
    VectorD var;  // biased batch variance
};

inline MatrixD batchnorm_train(const MatrixD& x, const BatchNorm& bn, double eps, BatchNormCache& cache) {
    const double n = static_cast<double>(x.rows());
    cache.mean = x.colwise().sum().transpose() / n;
    const MatrixD centered = x.rowwise() - cache.mean.transpose();
    cache.var = centered.array().square().colwise().sum().transpose() / n;
    cache.inv_std = (cache.var.array() + eps).rsqrt();
    cache.xhat = centered.array().rowwise() * cache.inv_std.transpose().array();
    return (cache.xhat.array().rowwise() * bn.gamma.transpose().array()).rowwise() +
           bn.beta.transpose().array();
}

/// Exponential moving average with the unbiased batch variance.
inline void update_running_stats(BatchNorm& bn, const BatchNormCache& cache, Eigen::Index batch,
                                 double momentum) {
    const double n = static_cast<double>(batch);
    const VectorD unbiased = batch > 1 ? VectorD(cache.var * (n / (n - 1.0))) : cache.var;
    bn.running_mean = (1.0 - momentum) * bn.running_mean + momentum * cache.mean;
    bn.running_var = (1.0 - momentum) * bn.running_var + momentum * unbiased;
}

inline MatrixD batchnorm_eval(const MatrixD& x, const BatchNorm& bn, double eps) {
    const VectorD inv_std = (bn.running_var.array() + eps).rsqrt();
    const MatrixD xhat = (x.rowwise() - bn.running_mean.transpose()).array().rowwise() *
                         inv_std.transpose().array();
    return (xhat.array().rowwise() * bn.gamma.transpose().array()).rowwise() +
           bn.beta.transpose().array();
}

/// Returns dL/dx and accumulates dL/dgamma.
inline MatrixD batchnorm_backward(const MatrixD& dy, const BatchNorm& bn,
                                  const BatchNormCache& cache, VectorD& dgamma) {
    const double n = static_cast<double>(dy.rows());
    dgamma += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
    const MatrixD dxhat = dy.array().rowwise() * bn.gamma.transpose().array();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
    MatrixD dx = (n * dxhat).rowwise() - sum_dxhat;
    dx -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    return (dx.array().rowwise() * (cache.inv_std.transpose().array() / n)).matrix();
}

}  // namespace detail

/// L2-normalized features for retrieval.
struct ExtractedFeatures {
    MatrixD features;
    std::vector<bool> zero_rows;  // rows that were all-zero and are left at zero
};

enum class FeatureStage { F_bn, F_bnf };

/// Toy two-stream embedder: per-pixel affine + softplus layers (a
/// modality-specific stream per modality, then a shared stage), dual pooling,
/// a batch-norm neck on the fine branch, fusion, a second batch norm on the
/// fused feature, and one bias-free classifier per branch.
class Embedder {
public:
    explicit Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)), params_(init_parameters(cfg_)) {}
    Embedder(EmbedderConfig cfg, Parameters params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
    }

    const EmbedderConfig& config() const { return cfg_; }
    const Parameters& parameters() const { return params_; }
    /// Mutable access invalidates any cached forward pass.
    Parameters& mutable_parameters() {
        cache_.reset();
        return params_;
    }

    using Batch = std::span<const LabeledSample* const>;

    /// Train mode uses batch statistics, updates running statistics and
    /// caches activations for backward(); Eval mode is const.
    ForwardOutputs forward(Batch batch, Mode mode) {
        if (mode == Mode::Eval) return forward_eval(batch);
        Cache cache;
        ForwardOutputs out = run(batch, &cache);
        const auto n = static_cast<Eigen::Index>(batch.size());
        detail::update_running_stats(params_.bn_fine, cache.bn_fine, n, cfg_.bn_momentum);
        detail::update_running_stats(params_.bn_fused, cache.bn_fused, n, cfg_.bn_momentum);
        cache_ = std::move(cache);
        return out;
    }

    ForwardOutputs forward_eval(Batch batch) const { return run(batch, nullptr); }

    /// Exact gradients of sum(upstream . outputs) with respect to every
    /// trainable array, through the cached Train-mode forward pass.
    ParameterGradients backward(const OutputGradients& upstream) const {
        if (!cache_) throw StateError("backward() needs a preceding Train-mode forward()");
        const Cache& c = *cache_;
        const Eigen::Index n = static_cast<Eigen::Index>(c.maps.size());
        const int C = cfg_.feature_dim;
        const int Cc = cfg_.coarse_channels();
        const int Cf = cfg_.fused_dim();
        auto take = [&](const MatrixD& m, Eigen::Index cols) {
            if (m.size() == 0) return MatrixD(MatrixD::Zero(n, cols));
            if (m.rows() != n || m.cols() != cols) throw ShapeError("upstream gradient shape mismatch");
            return m;
        };

        ParameterGradients g = params_.zeros_like();
        const MatrixD d_logits_c = take(upstream.logits_coarse, cfg_.num_identities);
        const MatrixD d_logits_f = take(upstream.logits_fine, cfg_.num_identities);
        g.classifier_coarse = c.f_bnf.transpose() * d_logits_c;
        g.classifier_fine = c.f_bn.transpose() * d_logits_f;

        MatrixD d_bnf = take(upstream.f_bnf, Cf) + d_logits_c * params_.classifier_coarse.transpose();
        MatrixD d_fused = take(upstream.f_fused, Cf) +
                          detail::batchnorm_backward(d_bnf, params_.bn_fused, c.bn_fused, g.bn_fused.gamma);
        MatrixD d_bn = take(upstream.f_bn, C) + d_logits_f * params_.classifier_fine.transpose();
        MatrixD d_pc(n, Cc);
        if (cfg_.fusion == Fusion::Sum) {
            d_pc = d_fused;
            d_bn += d_fused;
        } else {
            d_pc = d_fused.leftCols(Cc);
            d_bn += d_fused.rightCols(C);
        }
        const MatrixD d_pf = take(upstream.f_p_fine, C) +
                             detail::batchnorm_backward(d_bn, params_.bn_fine, c.bn_fine, g.bn_fine.gamma);

        for (Eigen::Index s = 0; s < n; ++s) {
            const MatrixD& map = c.maps[s];
            MatrixD d_map = pool_backward(map, cfg_.pool_fine, d_pf.row(s).transpose());
            d_map.leftCols(Cc) += pool_backward(map.leftCols(Cc), cfg_.pool_coarse, d_pc.row(s).transpose());

            const auto& layers = c.layers[s];
            std::vector<Dense*> grads = layer_chain(g, c.modalities[s]);
            std::vector<const Dense*> weights = layer_chain(params_, c.modalities[s]);
            MatrixD d_act = std::move(d_map);
            for (std::size_t l = layers.size(); l-- > 0;) {
                MatrixD dz = d_act.array() * layers[l].pre.unaryExpr(&detail::sigmoid).array();
                grads[l]->weight.noalias() += layers[l].input.transpose() * dz;
                grads[l]->bias += dz.colwise().sum().transpose();
                if (l > 0) d_act = dz * weights[l]->weight.transpose();
            }
        }
        return g;
    }

    /// Eval-mode features of `which` stage, each row scaled to unit length.
    ExtractedFeatures extract_features(Batch samples, FeatureStage which) const {
        const ForwardOutputs out = forward_eval(samples);
        const MatrixD& raw = which == FeatureStage::F_bn ? out.f_bn : out.f_bnf;
        if (!raw.allFinite()) throw NumericalError("extracted features are not finite");
        ExtractedFeatures ex;
        ex.features = raw;
        ex.zero_rows.assign(raw.rows(), false);
        for (Eigen::Index r = 0; r < raw.rows(); ++r) {
            const double norm = raw.row(r).norm();
            if (norm == 0) ex.zero_rows[r] = true;
            else ex.features.row(r) /= norm;
        }
        return ex;
    }

    bool has_cache() const { return cache_.has_value(); }

private:
    struct LayerCache {
        MatrixD input;
        MatrixD pre;
    };

    struct Cache {
        std::vector<Modality> modalities;
        std::vector<std::vector<LayerCache>> layers;
        std::vector<MatrixD> maps;
        detail::BatchNormCache bn_fine;
        detail::BatchNormCache bn_fused;
        MatrixD f_bn;
        MatrixD f_bnf;
    };

    template <typename P>
    using DensePtr = std::conditional_t<std::is_const_v<P>, const Dense*, Dense*>;

    template <typename P>
    static std::vector<DensePtr<P>> layer_chain(P& params, Modality m) {
        std::vector<DensePtr<P>> chain;
        auto& stream = m == Modality::Visible ? params.visible : params.thermal;
        for (auto& d : stream) chain.push_back(&d);
        for (auto& d : params.shared) chain.push_back(&d);
        return chain;
    }

    ForwardOutputs run(Batch batch, Cache* cache) const {
        if (batch.empty()) throw ShapeError("empty batch");
        const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
        const int C = cfg_.feature_dim;
        const int Cc = cfg_.coarse_channels();
        const Shape3& in = cfg_.input_shape;

        ForwardOutputs out;
        out.f_p_fine.resize(n, C);
        out.f_p_coarse.resize(n, Cc);
        if (cache) {
            cache->modalities.reserve(n);
            cache->layers.resize(n);
            cache->maps.reserve(n);
        }
        for (Eigen::Index s = 0; s < n; ++s) {
            const LabeledSample& sample = *batch[s];
            if (sample.data.size() != static_cast<std::size_t>(in.size()))
                throw ShapeError("sample " + std::to_string(sample.sample_id) + " has " +
                                 std::to_string(sample.data.size()) + " values, expected " +
                                 std::to_string(in.size()));
            MatrixD act = Eigen::Map<const MatrixD>(sample.data.data(), in.pixels(), in.channels);
            for (const Dense* layer : layer_chain(params_, sample.modality)) {
                MatrixD pre = (act * layer->weight).rowwise() + layer->bias.transpose();
                MatrixD next = pre.unaryExpr(&detail::softplus);
                if (cache) cache->layers[s].push_back({std::move(act), std::move(pre)});
                act = std::move(next);
            }
            out.f_p_fine.row(s) = pool_forward(act, cfg_.pool_fine).transpose();
            out.f_p_coarse.row(s) = pool_forward(act.leftCols(Cc), cfg_.pool_coarse).transpose();
            for (const auto& [method, cols] : {std::pair{cfg_.pool_fine, C}, std::pair{cfg_.pool_coarse, Cc}})
                if (method.kind == PoolKind::Max)
                    for (auto i : pool_argmax(act.leftCols(cols))) out.pool_argmax.push_back(static_cast<int>(i));
            if (cache) {
                cache->modalities.push_back(sample.modality);
                cache->maps.push_back(std::move(act));
            }
        }

        const double eps = cfg_.bn_epsilon;
        out.f_bn = cache ? detail::batchnorm_train(out.f_p_fine, params_.bn_fine, eps, cache->bn_fine)
                         : detail::batchnorm_eval(out.f_p_fine, params_.bn_fine, eps);
        if (cfg_.fusion == Fusion::Sum) {
            out.f_fused = out.f_p_coarse + out.f_bn;
        } else {
            out.f_fused.resize(n, Cc + C);
            out.f_fused << out.f_p_coarse, out.f_bn;
        }
        out.f_bnf = cache ? detail::batchnorm_train(out.f_fused, params_.bn_fused, eps, cache->bn_fused)
                          : detail::batchnorm_eval(out.f_fused, params_.bn_fused, eps);
        out.logits_fine = out.f_bn * params_.classifier_fine;
        out.logits_coarse = out.f_bnf * params_.classifier_coarse;
        if (cache) {
            cache->f_bn = out.f_bn;
            cache->f_bnf = out.f_bnf;
        }
        return out;
    }

    EmbedderConfig cfg_;
    Parameters params_;
    std::optional<Cache> cache_;
};

}  // namespace dgtl
