// dgtl: synthetic data, training, evaluation, ablation sweeps and gradient checks.
//
// Every subcommand accepts --config <file> plus one flag per RunConfig key
// (underscores may be written as dashes). DGTL_SEED overrides all seeds.
// Exit codes: 0 ok, 1 configuration/input error, 2 numerical failure.

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgtl/checkpoint.hpp"
#include "dgtl/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& flags) {
    cmd.add_option("--config", flags.config_path, "key = value config file");
    for (const auto& [key, value] : dgtl::RunConfig{}.to_kv()) {
        std::string names = "--" + key;
        std::string dashed = key;
        for (char& c : dashed)
            if (c == '_') c = '-';
        if (dashed != key) names = "--" + dashed + "," + names;
        cmd.add_option_function<std::string>(
               names, [&flags, k = key](const std::string& v) { flags.overrides[k] = v; },
               "default: " + (value.empty() ? std::string("(empty)") : value))
            ->type_name("VALUE");
    }
}

/// Defaults, then the config file, then flags, then DGTL_SEED.
dgtl::RunConfig resolve_config(const ConfigFlags& flags) {
    dgtl::KeyValues kv;
    if (!flags.config_path.empty()) kv = dgtl::KeyValues::load(flags.config_path);
    for (const auto& [k, v] : flags.overrides) kv.set(k, v);
    dgtl::RunConfig cfg = dgtl::RunConfig::from(kv);
    if (const char* env = std::getenv("DGTL_SEED"); env && *env) {
        char* end = nullptr;
        errno = 0;
        const unsigned long long seed = std::strtoull(env, &end, 10);
        if (*end != '\0' || errno != 0 || env[0] == '-')
            throw dgtl::ConfigError("DGTL_SEED must be a non-negative integer, got '" + std::string(env) + "'");
        cfg.override_seeds(seed);
    }
    cfg.resolve();
    return cfg;
}

json config_record(const dgtl::RunConfig& cfg) {
    return {{"type", "config"}, {"config", dgtl::to_json(cfg.to_kv())}};
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw dgtl::IOError("cannot write " + path.string());
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
    if (!out) throw dgtl::IOError("write failed for " + path.string());
}

json retrieval_json(const dgtl::RetrievalResult& r) {
    return {{"rank1", r.rank(1)}, {"rank5", r.rank(5)}, {"rank10", r.rank(10)}, {"rank20", r.rank(20)},
            {"mAP", r.map},       {"cmc", r.cmc},       {"ap", r.per_query_ap}};
}

int cmd_gen_data(const ConfigFlags& flags, std::string out) {
    const dgtl::RunConfig cfg = resolve_config(flags);
    if (out.empty()) out = (fs::path(cfg.out_dir) / "data").string();
    const dgtl::Dataset data = dgtl::generate_synthetic(cfg.synthetic);
    data.save(out);
    write_text(fs::path(out) / "config.cfg", cfg.to_text());
    std::cout << "wrote " << data.index().size() << " samples to " << out << "\n";
    return kExitOk;
}

int cmd_train(const ConfigFlags& flags) {
    const dgtl::RunConfig cfg = resolve_config(flags);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_text(dir / "config.cfg", cfg.to_text());

    const dgtl::Dataset data = dgtl::load_or_generate(cfg);
    const auto [train_index, test_index] = dgtl::split_holdout(data.index(), cfg.holdout);
    for (const auto& e : data.index().entries())
        if (e.identity >= cfg.train.embedder.num_identities)
            throw dgtl::ConfigError("identity " + std::to_string(e.identity) + " exceeds num_identities = " +
                                    std::to_string(cfg.train.embedder.num_identities));

    auto history = open_out(dir / "history.jsonl");
    history << config_record(cfg).dump() << '\n';

    const auto start = std::chrono::steady_clock::now();
    dgtl::Trainer trainer(data, train_index, cfg.train);
    try {
        while (!trainer.done()) {
            const dgtl::StepRecord rec = trainer.step();
            history << dgtl::to_json(rec).dump() << '\n';
            if (cfg.train.log_every > 0 && trainer.steps_taken() % cfg.train.log_every == 0)
                std::cerr << "epoch " << rec.epoch << " batch " << rec.batch << " l_all " << rec.l_all << "\n";
        }
    } catch (const dgtl::NumericalError&) {
        history.flush();
        throw;
    }
    history.flush();
    if (!history) throw dgtl::IOError("write failed for " + (dir / "history.jsonl").string());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    dgtl::Archive ckpt = trainer.checkpoint();
    for (const auto& [k, v] : cfg.to_kv()) ckpt.meta.emplace_back("run." + k, v);
    ckpt.save((dir / "checkpoint.txt").string());

    const dgtl::EvalSummary trained = dgtl::evaluate_model(trainer.model(), data, test_index);
    const dgtl::EvalSummary untrained =
        dgtl::evaluate_model(dgtl::Embedder(cfg.train.embedder), data, test_index);
    json summary = {{"type", "eval"},
                    {"config", dgtl::to_json(cfg.to_kv())},
                    {"train_seconds", seconds},
                    {"steps", trainer.steps_taken()},
                    {"results", dgtl::to_json(trained)},
                    {"untrained", dgtl::to_json(untrained)}};
    write_text(dir / "eval.json", summary.dump(2) + "\n");

    std::cout << "DGTL (" << dgtl::to_string(cfg.train.loss.arrangement) << "), held-out split\n"
              << dgtl::format_summary_table(trained);
    std::cout << "artifacts: " << (dir / "checkpoint.txt").string() << ", " << (dir / "history.jsonl").string()
              << ", " << (dir / "eval.json").string() << "\n";
    return kExitOk;
}

dgtl::FeatureBatch<double> features_of(const dgtl::ExtractedFeatures& ex,
                                       const std::vector<const dgtl::LabeledSample*>& samples, dgtl::Modality m) {
    dgtl::FeatureBatch<double> b;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i]->modality == m) {
            rows.push_back(static_cast<Eigen::Index>(i));
            b.identities.push_back(samples[i]->identity);
            b.modalities.push_back(m);
        }
    b.features = ex.features(rows, Eigen::all);
    return b;
}

int cmd_eval(const ConfigFlags& flags, const std::string& query, const std::string& gallery,
             const std::string& checkpoint, const std::string& out) {
    json record;
    if (!checkpoint.empty()) {
        if (!query.empty() || !gallery.empty())
            throw dgtl::ConfigError("eval takes either --checkpoint or --query/--gallery, not both");
        const dgtl::RunConfig cfg = resolve_config(flags);
        const dgtl::Embedder model = dgtl::load_model(checkpoint);
        const dgtl::Dataset data = dgtl::load_or_generate(cfg);
        const auto split = dgtl::split_holdout(data.index(), cfg.holdout);
        const dgtl::EvalSummary s = dgtl::evaluate_model(model, data, split.second);
        record = {{"type", "eval"}, {"config", dgtl::to_json(cfg.to_kv())}, {"results", dgtl::to_json(s)}};
        std::cout << dgtl::format_summary_table(s);
    } else {
        if (query.empty() || gallery.empty())
            throw dgtl::ConfigError("eval needs --query and --gallery feature CSVs (or --checkpoint)");
        const auto q = dgtl::read_feature_csv(query);
        const auto g = dgtl::read_feature_csv(gallery);
        record = retrieval_json(dgtl::evaluate(q, g));
        record["query"] = query;
        record["gallery"] = gallery;
        std::cout << record.dump() << "\n";
    }
    if (!out.empty()) write_text(out, record.dump(2) + "\n");
    return kExitOk;
}

/// Writes features of the held-out split as query/gallery CSVs, one pair per stage.
int cmd_export(const ConfigFlags& flags, const std::string& checkpoint, const std::string& out) {
    const dgtl::RunConfig cfg = resolve_config(flags);
    const dgtl::Embedder model = dgtl::load_model(checkpoint);
    const dgtl::Dataset data = dgtl::load_or_generate(cfg);
    const auto samples = data.lookup(dgtl::split_holdout(data.index(), cfg.holdout).second);
    fs::create_directories(out);
    for (dgtl::FeatureStage st : {dgtl::FeatureStage::F_bn, dgtl::FeatureStage::F_bnf}) {
        const auto ex = model.extract_features(samples, st);
        for (dgtl::Modality m : {dgtl::Modality::Visible, dgtl::Modality::Thermal}) {
            const fs::path path = fs::path(out) / (dgtl::stage_name(st) + "_" + dgtl::modality_code(m) + ".csv");
            auto f = open_out(path);
            dgtl::write_feature_csv(f, features_of(ex, samples, m));
        }
    }
    std::cout << "wrote held-out features to " << out << "\n";
    return kExitOk;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& axis_name) {
    const dgtl::AblationAxis axis = dgtl::parse_axis(axis_name);
    const dgtl::RunConfig cfg = resolve_config(flags);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    const dgtl::Dataset data = dgtl::load_or_generate(cfg);

    const fs::path jsonl = dir / ("ablation_" + axis_name + ".jsonl");
    auto out = open_out(jsonl);
    out << config_record(cfg).dump() << '\n';
    bool numerical = false;
    bool failed = false;
    const auto rows = dgtl::run_ablation(cfg, axis, data, [&](const dgtl::AblationRow& r) {
        json j = {{"type", "row"}};
        j.update(dgtl::to_json(r));
        out << j.dump() << '\n';
        if (!r.error.empty()) {
            failed = true;
            numerical = numerical || r.numerical_failure;
            if (r.feature == "f_bn") {
                out << json{{"type", "error"}, {"cell_id", r.cell_id}, {"message", r.error}}.dump() << '\n';
                std::cerr << "cell " << r.cell_id << " failed: " << r.error << "\n";
            }
        } else if (r.feature == "f_bnf") {
            std::cerr << "cell " << r.cell_id << " done\n";
        }
        out.flush();
    });
    const std::string table = dgtl::format_ablation_table(rows);
    write_text(dir / ("ablation_" + axis_name + ".txt"), table);
    std::cout << table;
    if (!failed) return kExitOk;
    return numerical ? kExitNumerical : kExitConfig;
}

int cmd_grad_check(const ConfigFlags& flags, int num_params, std::uint64_t seed, const std::string& out) {
    const dgtl::RunConfig cfg = resolve_config(flags);
    if (num_params < 1) throw dgtl::ConfigError("--num-params must be >= 1");
    const dgtl::Dataset data = dgtl::load_or_generate(cfg);
    const auto split = dgtl::split_holdout(data.index(), cfg.holdout);
    const dgtl::GradCheckReport r = dgtl::grad_check(cfg.train, data, split.first, num_params, seed);

    json checked = json::array();
    for (const auto& e : r.checked)
        checked.push_back({{"tensor", e.tensor}, {"index", e.index}, {"analytic", e.analytic},
                           {"numeric", e.numeric}, {"rel_error", e.rel_error}});
    json record = {{"type", "grad_check"},
                   {"config", dgtl::to_json(cfg.to_kv())},
                   {"passed", r.passed},
                   {"max_rel_error", r.max_rel_error},
                   {"threshold", r.threshold},
                   {"worst_tensor", r.worst_tensor},
                   {"worst_index", r.worst_index},
                   {"num_checked", r.checked.size()},
                   {"num_ties", r.ties.size()},
                   {"checked", checked}};
    if (!out.empty()) write_text(out, record.dump(2) + "\n");

    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: max relative error %.3e (threshold %.0e) over %zu coordinates, %zu ties skipped",
                  r.passed ? "PASS" : "FAIL", r.max_rel_error, r.threshold, r.checked.size(), r.ties.size());
    std::cout << buf;
    if (!r.passed) std::cout << "; worst " << r.worst_tensor << "[" << r.worst_index << "]";
    std::cout << "\n";
    return r.passed ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-granularity triplet loss toolkit"};
    app.require_subcommand(1);

    ConfigFlags flags;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory (default: <out_dir>/data)");
    add_config_flags(*gen, flags);

    auto* train = app.add_subcommand("train", "Train, then evaluate on the held-out split");
    add_config_flags(*train, flags);

    auto* eval = app.add_subcommand("eval", "Score query/gallery feature CSVs, or a checkpoint on the held-out split");
    std::string query, gallery, checkpoint, eval_out;
    eval->add_option("--query", query, "query features CSV (identity,modality,f0,...)");
    eval->add_option("--gallery", gallery, "gallery features CSV");
    eval->add_option("--checkpoint", checkpoint, "model or training-state checkpoint");
    eval->add_option("--out", eval_out, "also write the JSON record here");
    add_config_flags(*eval, flags);

    auto* exp = app.add_subcommand("export-features", "Write held-out features of a checkpoint as CSVs");
    std::string exp_ckpt, exp_out;
    exp->add_option("--checkpoint", exp_ckpt, "model or training-state checkpoint")->required();
    exp->add_option("--out", exp_out, "output directory")->required();
    add_config_flags(*exp, flags);

    auto* ablate = app.add_subcommand("ablate", "Train every cell of one ablation axis");
    std::string axis;
    ablate->add_option("--axis", axis, "arrangement | pooling | bnneck_routing | fusion | margin_mc")->required();
    add_config_flags(*ablate, flags);

    auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the full model gradient");
    int num_params = 200;
    std::uint64_t gc_seed = 0;
    std::string gc_out;
    gc->add_option("--num-params", num_params, "coordinates to probe")->capture_default_str();
    gc->add_option("--check-seed", gc_seed, "seed for choosing coordinates")->capture_default_str();
    gc->add_option("--out", gc_out, "also write the JSON report here");
    add_config_flags(*gc, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_data(flags, gen_out);
        if (*train) return cmd_train(flags);
        if (*eval) return cmd_eval(flags, query, gallery, checkpoint, eval_out);
        if (*exp) return cmd_export(flags, exp_ckpt, exp_out);
        if (*ablate) return cmd_ablate(flags, axis);
        if (*gc) return cmd_grad_check(flags, num_params, gc_seed, gc_out);
    } catch (const dgtl::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const dgtl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
