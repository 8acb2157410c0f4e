#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgtl/config_kv.hpp"
#include "dgtl/dataset.hpp"
#include "dgtl/kv.hpp"
#include "dgtl/trainer.hpp"

namespace dgtl {

/// Everything a run needs; a run is reproducible from its key-value echo.
///
/// The synthetic generator shares `num_identities` and `input_shape` with
/// the embedder, so one key sets both.
struct RunConfig {
    TrainConfig train;
    SyntheticSpec synthetic;
    std::string data_dir;  // empty: generate the synthetic benchmark in memory
    int holdout = 3;       // test samples per (identity, modality)
    std::vector<double> mc_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::string out_dir = "runs/default";

    /// Copies the shared keys into the synthetic spec and validates.
    void resolve() {
        synthetic.num_identities = train.embedder.num_identities;
        synthetic.input_shape = train.embedder.input_shape;
        train.validate();
        if (data_dir.empty()) synthetic.validate();
        if (holdout < 1) throw ConfigError("holdout must be >= 1");
    }

    /// Overrides every seed (sampler, model, data).
    void override_seeds(std::uint64_t seed) {
        train.sampler.seed = seed;
        train.embedder.seed = seed;
        synthetic.seed = seed;
    }

    KeyValueList to_kv() const {
        KeyValueList out;
        out.emplace_back("data_dir", data_dir);
        out.emplace_back("samples_per_identity", std::to_string(synthetic.samples_per_identity));
        out.emplace_back("identity_scale", format_double(synthetic.identity_scale));
        out.emplace_back("modality_offset_scale", format_double(synthetic.modality_offset_scale));
        out.emplace_back("noise_scale", format_double(synthetic.noise_scale));
        out.emplace_back("data_seed", std::to_string(synthetic.seed));
        out.emplace_back("holdout", std::to_string(holdout));
        append_kv(out, train);
        out.emplace_back("mc_grid", format_list(mc_grid));
        out.emplace_back("out_dir", out_dir);
        return out;
    }

    /// Applies the keys present in `kv`; unknown keys are a ConfigError.
    void apply(KeyValues kv) {
        kv.read("data_dir", data_dir);
        kv.read("samples_per_identity", synthetic.samples_per_identity);
        kv.read("identity_scale", synthetic.identity_scale);
        kv.read("modality_offset_scale", synthetic.modality_offset_scale);
        kv.read("noise_scale", synthetic.noise_scale);
        kv.read("data_seed", synthetic.seed);
        kv.read("holdout", holdout);
        apply_kv(kv, train);
        kv.read("mc_grid", mc_grid);
        kv.read("out_dir", out_dir);
        kv.require_all_used();
    }

    static RunConfig from(const KeyValues& kv) {
        RunConfig c;
        c.apply(kv);
        return c;
    }

    std::string to_text() const {
        std::string s;
        for (const auto& [k, v] : to_kv()) s += k + " = " + v + "\n";
        return s;
    }
};

}  // namespace dgtl
