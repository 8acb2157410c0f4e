#pragma once

#include <cstdio>
#include <string>

#include "dgtl/embedder.hpp"
#include "dgtl/kv.hpp"
#include "dgtl/objective.hpp"
#include "dgtl/sampler.hpp"

namespace dgtl {

inline std::string format_shape(const Shape3& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

inline Shape3 parse_shape(const std::string& text) {
    Shape3 s;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%dx%dx%d%c", &s.height, &s.width, &s.channels, &tail) != 3)
        throw ConfigError("expected a shape like 6x6x4, got '" + text + "'");
    return s;
}

inline void append_kv(KeyValueList& out, const SamplerConfig& c) {
    out.emplace_back("P", std::to_string(c.P));
    out.emplace_back("K", std::to_string(c.K));
    out.emplace_back("sampler_seed", std::to_string(c.seed));
}

inline void apply_kv(KeyValues& kv, SamplerConfig& c) {
    kv.read("P", c.P);
    kv.read("K", c.K);
    kv.read("sampler_seed", c.seed);
}

inline void append_kv(KeyValueList& out, const EmbedderConfig& c) {
    out.emplace_back("input_shape", format_shape(c.input_shape));
    out.emplace_back("spec_layers", format_list(c.spec_layers));
    out.emplace_back("shared_layers", c.shared_layers.empty() ? "none" : format_list(c.shared_layers));
    out.emplace_back("feature_dim", std::to_string(c.feature_dim));
    out.emplace_back("coarse_dim", std::to_string(c.coarse_dim));
    out.emplace_back("num_identities", std::to_string(c.num_identities));
    out.emplace_back("fusion", to_string(c.fusion));
    out.emplace_back("pool_fine", to_string(c.pool_fine.kind));
    out.emplace_back("pool_coarse", to_string(c.pool_coarse.kind));
    out.emplace_back("gem_p_fine", format_double(c.pool_fine.gem_p));
    out.emplace_back("gem_p_coarse", format_double(c.pool_coarse.gem_p));
    out.emplace_back("bn_epsilon", format_double(c.bn_epsilon));
    out.emplace_back("bn_momentum", format_double(c.bn_momentum));
    out.emplace_back("model_seed", std::to_string(c.seed));
}

inline void apply_kv(KeyValues& kv, EmbedderConfig& c) {
    kv.read_with("input_shape", c.input_shape, parse_shape);
    kv.read("spec_layers", c.spec_layers);
    kv.read("shared_layers", c.shared_layers);
    kv.read("feature_dim", c.feature_dim);
    kv.read("coarse_dim", c.coarse_dim);
    kv.read("num_identities", c.num_identities);
    kv.read_with("fusion", c.fusion, [](const std::string& s) { return parse_fusion(s); });
    kv.read_with("pool_fine", c.pool_fine.kind, [](const std::string& s) { return parse_pool_kind(s); });
    kv.read_with("pool_coarse", c.pool_coarse.kind, [](const std::string& s) { return parse_pool_kind(s); });
    kv.read("gem_p_fine", c.pool_fine.gem_p);
    kv.read("gem_p_coarse", c.pool_coarse.gem_p);
    kv.read("bn_epsilon", c.bn_epsilon);
    kv.read("bn_momentum", c.bn_momentum);
    kv.read("model_seed", c.seed);
}

inline void append_kv(KeyValueList& out, const LossConfig& c) {
    out.emplace_back("margin_fine", format_double(c.margin_fine));
    out.emplace_back("margin_coarse", format_double(c.margin_coarse));
    out.emplace_back("arrangement", to_string(c.arrangement));
    out.emplace_back("fine_feature", to_string(c.fine_feature));
    out.emplace_back("coarse_feature", to_string(c.coarse_feature));
}

inline void apply_kv(KeyValues& kv, LossConfig& c) {
    kv.read("margin_fine", c.margin_fine);
    kv.read("margin_coarse", c.margin_coarse);
    kv.read_with("arrangement", c.arrangement, [](const std::string& s) { return parse_arrangement(s); });
    kv.read_with("fine_feature", c.fine_feature, [](const std::string& s) { return parse_fine_feature(s); });
    kv.read_with("coarse_feature", c.coarse_feature, [](const std::string& s) { return parse_coarse_feature(s); });
}

}  // namespace dgtl
