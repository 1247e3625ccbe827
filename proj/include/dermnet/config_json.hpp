#pragma once

#include <nlohmann/json.hpp>

#include "dermnet/augment.hpp"
#include "dermnet/graph.hpp"

namespace dermnet {

using nlohmann::json;

inline void to_json(json& j, const NetworkConfig& c) {
  j = json{{"input_hw", c.input_hw},
           {"num_classes", c.num_classes},
           {"block_counts", c.block_counts},
           {"residual_scale", c.residual_scale},
           {"head_widths", c.head_widths},
           {"stem_filters", c.stem_filters},
           {"global_avg_pool", c.global_avg_pool},
           {"dropout", c.dropout},
           {"bn_momentum", c.bn_momentum},
           {"seed", c.seed}};
}

inline void from_json(const json& j, NetworkConfig& c) {
  NetworkConfig defaults;
  c.input_hw = j.value("input_hw", defaults.input_hw);
  c.num_classes = j.value("num_classes", defaults.num_classes);
  c.block_counts = j.value("block_counts", defaults.block_counts);
  c.residual_scale = j.value("residual_scale", defaults.residual_scale);
  c.head_widths = j.value("head_widths", defaults.head_widths);
  c.stem_filters = j.value("stem_filters", defaults.stem_filters);
  c.global_avg_pool = j.value("global_avg_pool", defaults.global_avg_pool);
  c.dropout = j.value("dropout", defaults.dropout);
  c.bn_momentum = j.value("bn_momentum", defaults.bn_momentum);
  c.seed = j.value("seed", defaults.seed);
}

inline void to_json(json& j, const AugmentConfig& c) {
  j = json{{"hflip_prob", c.hflip_prob},
           {"vflip_prob", c.vflip_prob},
           {"max_rotation_deg", c.max_rotation_deg},
           {"max_shear_deg", c.max_shear_deg},
           {"max_translate_frac", c.max_translate_frac},
           {"fill_policy", "nearest_edge"},
           {"seed", c.seed}};
}

inline void from_json(const json& j, AugmentConfig& c) {
  AugmentConfig defaults;
  c.hflip_prob = j.value("hflip_prob", defaults.hflip_prob);
  c.vflip_prob = j.value("vflip_prob", defaults.vflip_prob);
  c.max_rotation_deg = j.value("max_rotation_deg", defaults.max_rotation_deg);
  c.max_shear_deg = j.value("max_shear_deg", defaults.max_shear_deg);
  c.max_translate_frac = j.value("max_translate_frac", defaults.max_translate_frac);
  const std::string fill = j.value("fill_policy", std::string("nearest_edge"));
  if (fill != "nearest_edge")
    raise(Err::BadConfig, "unknown fill_policy '" + fill + "'");
  c.fill = FillPolicy::NearestEdge;
  c.seed = j.value("seed", defaults.seed);
}

}  // namespace dermnet
