#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgtl/dataset.hpp"
#include "dgtl/embedder.hpp"
#include "dgtl/retrieval.hpp"
#include "dgtl/run_config.hpp"
#include "dgtl/trainer.hpp"

namespace dgtl {

inline nlohmann::ordered_json to_json(const KeyValueList& kv) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
}

inline nlohmann::ordered_json to_json(const StepRecord& r) {
    return {{"type", "step"},          {"epoch", r.epoch},       {"batch", r.batch},
            {"l_f_tri", r.l_f_tri},    {"l_c_tri", r.l_c_tri},   {"l_id_fine", r.l_id_fine},
            {"l_id_coarse", r.l_id_coarse}, {"l_all", r.l_all}};
}

inline Dataset load_or_generate(const RunConfig& cfg) {
    return cfg.data_dir.empty() ? generate_synthetic(cfg.synthetic) : Dataset::load(cfg.data_dir);
}

inline std::string stage_name(FeatureStage s) { return s == FeatureStage::F_bn ? "f_bn" : "f_bnf"; }

struct DirectionalResult {
    FeatureStage stage;
    Modality query;  // gallery is the other modality
    RetrievalResult result;

    std::string direction() const { return query == Modality::Visible ? "V2T" : "T2V"; }
};

/// Both query directions for both retrieval features, in the order
/// (f_bn V2T, f_bn T2V, f_bnf V2T, f_bnf T2V).
struct EvalSummary {
    std::vector<DirectionalResult> results;

    const RetrievalResult& get(FeatureStage s, Modality query) const {
        for (const auto& r : results)
            if (r.stage == s && r.query == query) return r.result;
        throw StateError("missing evaluation result");
    }

    /// Mean of the two query directions.
    double mean_rank(FeatureStage s, std::size_t k) const {
        return 0.5 * (get(s, Modality::Visible).rank(k) + get(s, Modality::Thermal).rank(k));
    }
    double mean_map(FeatureStage s) const {
        return 0.5 * (get(s, Modality::Visible).map + get(s, Modality::Thermal).map);
    }
};

inline EvalSummary evaluate_model(const Embedder& model, const Dataset& data, const DatasetIndex& test) {
    const auto samples = data.lookup(test);
    EvalSummary summary;
    for (FeatureStage stage : {FeatureStage::F_bn, FeatureStage::F_bnf}) {
        const ExtractedFeatures ex = model.extract_features(samples, stage);
        std::array<FeatureBatch<double>, 2> by_modality;
        std::array<std::vector<Eigen::Index>, 2> rows;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const int m = static_cast<int>(samples[i]->modality);
            rows[m].push_back(static_cast<Eigen::Index>(i));
            by_modality[m].identities.push_back(samples[i]->identity);
            by_modality[m].modalities.push_back(samples[i]->modality);
        }
        for (int m = 0; m < 2; ++m) by_modality[m].features = ex.features(rows[m], Eigen::all);
        for (int q = 0; q < 2; ++q)
            summary.results.push_back({stage, static_cast<Modality>(q), evaluate(by_modality[q], by_modality[1 - q])});
    }
    return summary;
}

inline nlohmann::ordered_json to_json(const EvalSummary& s) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : s.results)
        arr.push_back({{"feature", stage_name(r.stage)},
                       {"direction", r.direction()},
                       {"rank1", r.result.rank(1)},
                       {"rank5", r.result.rank(5)},
                       {"rank10", r.result.rank(10)},
                       {"rank20", r.result.rank(20)},
                       {"mAP", r.result.map}});
    return arr;
}

/// Two rows (f_bn, f_bnf), both query directions, in percent.
inline std::string format_summary_table(const EvalSummary& s) {
    std::string out = "feature   V2T rank1  V2T mAP  T2V rank1  T2V mAP\n";
    char buf[128];
    for (FeatureStage st : {FeatureStage::F_bn, FeatureStage::F_bnf}) {
        const auto& v = s.get(st, Modality::Visible);
        const auto& t = s.get(st, Modality::Thermal);
        std::snprintf(buf, sizeof buf, "%-8s  %9.2f  %7.2f  %9.2f  %7.2f\n", stage_name(st).c_str(),
                      100 * v.rank(1), 100 * v.map, 100 * t.rank(1), 100 * t.map);
        out += buf;
    }
    return out;
}

struct ExperimentResult {
    TrainResult trained;
    EvalSummary eval;
};

/// Trains on the non-held-out samples and evaluates on the held-out ones.
inline ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& data,
                                       const std::function<void(const StepRecord&)>& on_step = {}) {
    const auto [train_index, test_index] = split_holdout(data.index(), cfg.holdout);
    for (const auto& e : data.index().entries())
        if (e.identity >= cfg.train.embedder.num_identities)
            throw ConfigError("identity " + std::to_string(e.identity) + " exceeds num_identities = " +
                              std::to_string(cfg.train.embedder.num_identities));
    ExperimentResult r{train(data, train_index, cfg.train, on_step), {}};
    r.eval = evaluate_model(r.trained.model, data, test_index);
    return r;
}

enum class AblationAxis { arrangement, pooling, bnneck_routing, fusion, margin_mc };

inline AblationAxis parse_axis(const std::string& s) {
    if (s == "arrangement") return AblationAxis::arrangement;
    if (s == "pooling") return AblationAxis::pooling;
    if (s == "bnneck_routing" || s == "routing") return AblationAxis::bnneck_routing;
    if (s == "fusion") return AblationAxis::fusion;
    if (s == "margin_mc" || s == "margin") return AblationAxis::margin_mc;
    throw ConfigError("unknown ablation axis '" + s + "' (arrangement, pooling, bnneck_routing, fusion, margin_mc)");
}

struct AblationCell {
    std::string cell_id;
    RunConfig config;
};

/// The cells of one ablation axis, all sharing the base seeds.
///
/// arrangement: fine-branch-only rows (sample, center, both) then f2f, c2c, c2f, f2c.
/// pooling: every (fine, coarse) pair over {avg, max, gem}.
/// bnneck_routing: which features the two triplet losses read, five rows.
/// fusion: sum, cat.  margin_mc: one cell per mc_grid value.
inline std::vector<AblationCell> ablation_cells(const RunConfig& base, AblationAxis axis) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string id, auto&& edit) {
        RunConfig c = base;
        edit(c);
        cells.push_back({std::move(id), std::move(c)});
    };
    switch (axis) {
        case AblationAxis::arrangement: {
            const std::array<std::pair<const char*, Arrangement>, 7> rows{{
                {"1_fine_f", Arrangement::FineOnly_f}, {"2_fine_c", Arrangement::FineOnly_c},
                {"3_fine_fc", Arrangement::FineOnly_fc}, {"f2f", Arrangement::f2f},
                {"c2c", Arrangement::c2c}, {"c2f", Arrangement::c2f}, {"f2c", Arrangement::f2c}}};
            for (const auto& [id, a] : rows)
                add(id, [a = a](RunConfig& c) {
                    c.train.loss.arrangement = a;
                    if (is_dual_branch(a) && c.train.loss.coarse_feature == CoarseFeature::none)
                        c.train.loss.coarse_feature = CoarseFeature::f_bnf;
                });
            break;
        }
        case AblationAxis::pooling:
            for (PoolKind f : {PoolKind::Avg, PoolKind::Max, PoolKind::GeM})
                for (PoolKind co : {PoolKind::Avg, PoolKind::Max, PoolKind::GeM})
                    add(to_string(f) + "_" + to_string(co), [&](RunConfig& c) {
                        c.train.embedder.pool_fine.kind = f;
                        c.train.embedder.pool_coarse.kind = co;
                    });
            break;
        case AblationAxis::bnneck_routing: {
            struct Row { const char* id; Arrangement a; FineFeature f; CoarseFeature c; };
            const std::array<Row, 5> rows{{{"fp_none", Arrangement::FineOnly_f, FineFeature::f_p, CoarseFeature::none},
                                           {"fbn_none", Arrangement::FineOnly_f, FineFeature::f_bn, CoarseFeature::none},
                                           {"fp_fpf", Arrangement::f2c, FineFeature::f_p, CoarseFeature::f_pf},
                                           {"fbn_fbnf", Arrangement::f2c, FineFeature::f_bn, CoarseFeature::f_bnf},
                                           {"fp_fbnf", Arrangement::f2c, FineFeature::f_p, CoarseFeature::f_bnf}}};
            for (const Row& r : rows)
                add(r.id, [&](RunConfig& c) {
                    c.train.loss.arrangement = r.a;
                    c.train.loss.fine_feature = r.f;
                    c.train.loss.coarse_feature = r.c;
                });
            break;
        }
        case AblationAxis::fusion:
            for (Fusion f : {Fusion::Sum, Fusion::Concat})
                add(to_string(f), [&](RunConfig& c) {
                    c.train.embedder.fusion = f;
                    c.train.embedder.coarse_dim = 0;
                });
            break;
        case AblationAxis::margin_mc:
            for (double mc : base.mc_grid)
                add("mc=" + format_double(mc), [&](RunConfig& c) { c.train.loss.margin_coarse = mc; });
            break;
    }
    return cells;
}

/// One table row. Metrics average the two query directions; NaN marks a
/// failed cell, whose message is in `error`.
struct AblationRow {
    std::string cell_id;
    std::string feature;
    double rank1 = std::numeric_limits<double>::quiet_NaN();
    double rank5 = std::numeric_limits<double>::quiet_NaN();
    double rank10 = std::numeric_limits<double>::quiet_NaN();
    double map = std::numeric_limits<double>::quiet_NaN();
    std::string error;
    bool numerical_failure = false;
};

inline nlohmann::ordered_json to_json(const AblationRow& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
    return {{"cell_id", r.cell_id}, {"feature", r.feature}, {"rank1", num(r.rank1)},
            {"rank5", num(r.rank5)}, {"rank10", num(r.rank10)}, {"mAP", num(r.map)}};
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::size_t w = 7;
    for (const auto& r : rows) w = std::max(w, r.cell_id.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %-7s  %6s  %6s  %6s  %6s\n", static_cast<int>(w), "cell_id", "feature",
                  "rank1", "rank5", "rank10", "mAP");
    std::string out = buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %-7s  %6.2f  %6.2f  %6.2f  %6.2f\n", static_cast<int>(w),
                      r.cell_id.c_str(), r.feature.c_str(), 100 * r.rank1, 100 * r.rank5, 100 * r.rank10,
                      100 * r.map);
        out += buf;
    }
    return out;
}

/// Trains and evaluates every cell. A failing cell yields NaN rows and the
/// remaining cells still run; `on_row` sees each row as soon as it exists.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, AblationAxis axis, const Dataset& data,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : ablation_cells(base, axis)) {
        std::array<AblationRow, 2> pair;
        pair[0].feature = "f_bn";
        pair[1].feature = "f_bnf";
        for (auto& row : pair) row.cell_id = cell.cell_id;
        try {
            RunConfig cfg = cell.config;
            cfg.resolve();
            const ExperimentResult r = run_experiment(cfg, data);
            for (auto& row : pair) {
                const FeatureStage st = row.feature == "f_bn" ? FeatureStage::F_bn : FeatureStage::F_bnf;
                row.rank1 = r.eval.mean_rank(st, 1);
                row.rank5 = r.eval.mean_rank(st, 5);
                row.rank10 = r.eval.mean_rank(st, 10);
                row.map = r.eval.mean_map(st);
            }
        } catch (const NumericalError& e) {
            for (auto& row : pair) {
                row.error = e.what();
                row.numerical_failure = true;
            }
        } catch (const std::exception& e) {
            for (auto& row : pair) row.error = e.what();
        }
        for (auto& row : pair) {
            rows.push_back(row);
            if (on_row) on_row(row);
        }
    }
    return rows;
}

}  // namespace dgtl
