#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgtl/checkpoint.hpp"
#include "dgtl/config_kv.hpp"
#include "dgtl/dataset.hpp"
#include "dgtl/embedder.hpp"
#include "dgtl/objective.hpp"
#include "dgtl/rng.hpp"
#include "dgtl/sampler.hpp"

namespace dgtl {

/// Desk-scale ceiling on training length.
inline constexpr int kMaxEpochs = 10000;

struct TrainConfig {
    int epochs = 30;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    SamplerConfig sampler;
    EmbedderConfig embedder;
    LossConfig loss;
    int log_every = 0;  // 0 disables progress callbacks
    std::optional<std::string> checkpoint_path;

    void validate() const {
        if (epochs < 1 || epochs > kMaxEpochs)
            throw ConfigError("epochs must lie in [1, " + std::to_string(kMaxEpochs) + "]");
        if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be finite and non-negative");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
            throw ConfigError("weight_decay must be finite and non-negative");
        if (log_every < 0) throw ConfigError("log_every must be >= 0");
        embedder.validate();
        loss.validate();
    }
};

inline void append_kv(KeyValueList& out, const TrainConfig& c) {
    out.emplace_back("epochs", std::to_string(c.epochs));
    out.emplace_back("learning_rate", format_double(c.learning_rate));
    out.emplace_back("momentum", format_double(c.momentum));
    out.emplace_back("weight_decay", format_double(c.weight_decay));
    out.emplace_back("log_every", std::to_string(c.log_every));
    append_kv(out, c.sampler);
    append_kv(out, c.embedder);
    append_kv(out, c.loss);
}

inline void apply_kv(KeyValues& kv, TrainConfig& c) {
    kv.read("epochs", c.epochs);
    kv.read("learning_rate", c.learning_rate);
    kv.read("momentum", c.momentum);
    kv.read("weight_decay", c.weight_decay);
    kv.read("log_every", c.log_every);
    apply_kv(kv, c.sampler);
    apply_kv(kv, c.embedder);
    apply_kv(kv, c.loss);
}

struct StepRecord {
    int epoch = 0;
    int batch = 0;
    double l_f_tri = 0;
    double l_c_tri = 0;
    double l_id_fine = 0;
    double l_id_coarse = 0;
    double l_all = 0;
    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

using TrainHistory = std::vector<StepRecord>;

/// v <- momentum * v + g + weight_decay * theta;  theta <- theta - lr * v
inline void sgd_momentum_step(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
                              double lr, double momentum, double weight_decay) {
    if (grad.size() != theta.size() || velocity.size() != theta.size())
        throw ShapeError("sgd step: parameter, gradient and velocity sizes differ");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * theta[i];
        theta[i] -= lr * velocity[i];
    }
}

namespace detail {

struct TensorSlot {
    std::string name;
    double* data;
    Eigen::Index size;
};

template <typename P>
std::vector<TensorSlot> trainable_slots(P& params) {
    std::vector<TensorSlot> out;
    params.for_each([&](const std::string& name, auto& t, TensorRole role) {
        if (role == TensorRole::Trainable)
            out.push_back({name, const_cast<double*>(t.data()), t.size()});
    });
    return out;
}

}  // namespace detail

/// Deterministic training loop: one identity-balanced batch per step,
/// forward, objective, backward, momentum SGD on every trainable array.
class Trainer {
public:
    Trainer(const Dataset& data, DatasetIndex train_index, TrainConfig cfg)
        : data_(&data), index_(std::move(train_index)), cfg_(std::move(cfg)), model_(cfg_.embedder) {
        cfg_.validate();
        velocity_ = model_.parameters().zeros_like();
    }

    const TrainConfig& config() const { return cfg_; }
    const Embedder& model() const { return model_; }
    Embedder& model() { return model_; }
    const TrainHistory& history() const { return history_; }
    long steps_taken() const { return step_; }
    int epoch() const { return epoch_; }
    bool done() const { return epoch_ >= cfg_.epochs; }

    std::size_t batches_per_epoch() const {
        return (index_.identities().size() + cfg_.sampler.P - 1) / cfg_.sampler.P;
    }

    StepRecord step() {
        if (done()) throw StateError("training already finished");
        if (epoch_batches_.empty()) epoch_batches_ = build_epoch(index_, cfg_.sampler, epoch_);
        const MiniBatchSpec& spec = epoch_batches_[batch_];
        const auto samples = data_->lookup(spec.slots);
        ForwardOutputs out;
        LossReport report;
        try {
            out = model_.forward(samples, Mode::Train);
            report = dgtl_total(out, spec.identities, spec.modalities, cfg_.loss);
        } catch (const DomainError& e) {
            // overflowing activations surface as domain errors in pooling or distances
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step_), step_);
        }
        if (!report.finite())
            throw NumericalError("non-finite loss at step " + std::to_string(step_) + " (epoch " +
                                 std::to_string(epoch_) + ", batch " + std::to_string(batch_) + ")", step_);
        const ParameterGradients grads = model_.backward(report.grad);

        auto params = detail::trainable_slots(model_.mutable_parameters());
        const auto g = detail::trainable_slots(grads);
        const auto v = detail::trainable_slots(velocity_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            sgd_momentum_step({params[i].data, static_cast<std::size_t>(params[i].size)},
                              {g[i].data, static_cast<std::size_t>(g[i].size)},
                              {v[i].data, static_cast<std::size_t>(v[i].size)}, cfg_.learning_rate, cfg_.momentum,
                              cfg_.weight_decay);
        }
        if (!model_.parameters().all_finite())
            throw NumericalError("parameters became non-finite at step " + std::to_string(step_), step_);

        StepRecord rec{epoch_, static_cast<int>(batch_), report.l_f_tri, report.l_c_tri,
                       report.l_id_fine, report.l_id_coarse, report.l_all};
        history_.push_back(rec);
        ++step_;
        if (++batch_ == epoch_batches_.size()) {
            ++epoch_;
            batch_ = 0;
            epoch_batches_.clear();
        }
        return rec;
    }

    /// Trains to completion; `on_step` sees every log_every-th record.
    void run(const std::function<void(const StepRecord&)>& on_step = {}) {
        while (!done()) {
            const StepRecord rec = step();
            if (on_step && cfg_.log_every > 0 && step_ % cfg_.log_every == 0) on_step(rec);
        }
        if (cfg_.checkpoint_path) save_checkpoint(*cfg_.checkpoint_path);
    }

    /// Model, optimizer velocity and loop position; enough to resume bitwise.
    Archive checkpoint() const {
        Archive a;
        a.meta.emplace_back("kind", "training-state");
        KeyValueList train;
        append_kv(train, cfg_);
        for (auto& [k, val] : train)
            if (!is_embedder_key(k)) a.meta.emplace_back("train." + k, val);
        add_embedder_config(a, cfg_.embedder);
        a.meta.emplace_back("state.epoch", std::to_string(epoch_));
        a.meta.emplace_back("state.batch", std::to_string(batch_));
        a.meta.emplace_back("state.step", std::to_string(step_));
        a.meta.emplace_back("state.train_samples", std::to_string(index_.size()));
        add_parameters(a, model_.parameters());
        add_parameters(a, velocity_, "velocity.");
        return a;
    }

    void save_checkpoint(const std::string& path) const { checkpoint().save(path); }

    static Trainer resume(const Dataset& data, DatasetIndex train_index, const Archive& a,
                          std::optional<std::string> checkpoint_path = std::nullopt) {
        if (a.meta_value("kind") != "training-state") throw DataError("checkpoint holds no training state");
        KeyValues kv;
        for (const auto& [k, v] : a.meta)
            if (k.rfind("train.", 0) == 0) kv.set(k.substr(6), v);
        TrainConfig cfg;
        apply_kv(kv, cfg);
        kv.require_all_used();
        cfg.embedder = embedder_config_from(a);
        cfg.checkpoint_path = std::move(checkpoint_path);
        if (std::to_string(train_index.size()) != a.meta_value("state.train_samples"))
            throw DataError("training index differs from the one the checkpoint was taken with");

        Trainer t(data, std::move(train_index), std::move(cfg));
        read_parameters(a, t.model_.mutable_parameters());
        read_parameters(a, t.velocity_, "velocity.");
        t.epoch_ = std::stoi(a.meta_value("state.epoch"));
        t.batch_ = std::stoul(a.meta_value("state.batch"));
        t.step_ = std::stol(a.meta_value("state.step"));
        return t;
    }

private:
    static bool is_embedder_key(const std::string& k) {
        KeyValueList list;
        append_kv(list, EmbedderConfig{});
        return std::any_of(list.begin(), list.end(), [&](const auto& kv) { return kv.first == k; });
    }

    const Dataset* data_;
    DatasetIndex index_;
    TrainConfig cfg_;
    Embedder model_;
    Parameters velocity_;
    int epoch_ = 0;
    std::size_t batch_ = 0;
    long step_ = 0;
    std::vector<MiniBatchSpec> epoch_batches_;
    TrainHistory history_;
};

struct TrainResult {
    Embedder model;
    TrainHistory history;
};

inline TrainResult train(const Dataset& data, const DatasetIndex& train_index, const TrainConfig& cfg,
                         const std::function<void(const StepRecord&)>& on_step = {}) {
    Trainer t(data, train_index, cfg);
    t.run(on_step);
    return {t.model(), t.history()};
}

struct GradCheckOptions {
    int num_params = 200;  // spread round-robin over the trainable arrays
    double step = 1e-4;
    double threshold = 1e-4;
    /// Smallest denominator of the relative error, so coordinates whose
    /// gradient is essentially zero are judged on absolute error.
    double denominator_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string tensor;
    Eigen::Index index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_tensor;
    Eigen::Index worst_index = -1;
    std::vector<GradCheckEntry> checked;
    /// Coordinates whose +-step perturbation changed a mining or max-pooling
    /// decision; central differences are meaningless there, so they are
    /// excluded from max_rel_error.
    std::vector<GradCheckEntry> ties;
    double threshold = 0;
    bool passed = false;
};

/// Compares backward() against central differences of the full objective.
inline GradCheckReport grad_check(const Embedder& model, Embedder::Batch batch, const std::vector<int>& identities,
                                  const std::vector<Modality>& modalities, const LossConfig& loss,
                                  const GradCheckOptions& opts = {}) {
    Embedder work = model;
    auto evaluate = [&](std::vector<int>* signature) {
        const ForwardOutputs out = work.forward(batch, Mode::Train);
        LossReport r = dgtl_total(out, identities, modalities, loss);
        if (signature) {
            *signature = std::move(r.selection);
            signature->insert(signature->end(), out.pool_argmax.begin(), out.pool_argmax.end());
        }
        return r;
    };

    std::vector<int> base_signature;
    const LossReport base = evaluate(&base_signature);
    const ParameterGradients analytic = work.backward(base.grad);
    const auto grads = detail::trainable_slots(analytic);
    const auto slots = detail::trainable_slots(work.mutable_parameters());

    // Round-robin quota so every array is represented.
    std::vector<Eigen::Index> quota(slots.size(), 0);
    for (int placed = 0; placed < opts.num_params;) {
        bool any = false;
        for (std::size_t i = 0; i < slots.size() && placed < opts.num_params; ++i)
            if (quota[i] < slots[i].size) {
                ++quota[i];
                ++placed;
                any = true;
            }
        if (!any) break;
    }

    GradCheckReport report;
    report.threshold = opts.threshold;
    SplitMix64 rng(opts.seed);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        std::vector<Eigen::Index> coords(slots[i].size);
        std::iota(coords.begin(), coords.end(), Eigen::Index{0});
        for (Eigen::Index k = 0; k < quota[i]; ++k) {
            std::swap(coords[k], coords[k + static_cast<Eigen::Index>(rng.below(coords.size() - k))]);
            const Eigen::Index c = coords[k];
            double& theta = slots[i].data[c];
            const double saved = theta;
            std::vector<int> sig_plus, sig_minus;
            theta = saved + opts.step;
            const double plus = evaluate(&sig_plus).l_all;
            theta = saved - opts.step;
            const double minus = evaluate(&sig_minus).l_all;
            theta = saved;

            GradCheckEntry e{slots[i].name, c, grads[i].data[c], (plus - minus) / (2 * opts.step), 0};
            const double denom =
                std::max({std::abs(e.analytic), std::abs(e.numeric), opts.denominator_floor});
            e.rel_error = std::abs(e.analytic - e.numeric) / denom;
            if (sig_plus != base_signature || sig_minus != base_signature) {
                report.ties.push_back(e);
                continue;
            }
            report.checked.push_back(e);
            if (report.worst_index < 0 || e.rel_error > report.max_rel_error) {
                report.max_rel_error = e.rel_error;
                report.worst_tensor = e.tensor;
                report.worst_index = c;
            }
        }
    }
    report.passed = report.max_rel_error <= opts.threshold;
    return report;
}

/// Gradient check on the first batch of epoch 0 for a fresh model built from `cfg`.
inline GradCheckReport grad_check(const TrainConfig& cfg, const Dataset& data, const DatasetIndex& index,
                                  int num_params, std::uint64_t seed) {
    cfg.validate();
    const Embedder model(cfg.embedder);
    const auto batches = build_epoch(index, cfg.sampler, 0);
    const MiniBatchSpec& spec = batches.front();
    GradCheckOptions opts;
    opts.num_params = num_params;
    opts.seed = seed;
    return grad_check(model, data.lookup(spec.slots), spec.identities, spec.modalities, cfg.loss, opts);
}

}  // namespace dgtl
