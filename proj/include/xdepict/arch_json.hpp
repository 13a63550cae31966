#pragma once

#include "json.hpp"
#include "xdepict/model.hpp"

namespace xdepict {

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = {{"in_channels", a.in_channels},     {"stage_channels", a.stage_channels},
         {"blocks_per_stage", a.blocks_per_stage}, {"num_classes", a.num_classes},
         {"embedding_dim", a.embedding_dim}, {"input_size", a.input_size},
         {"normalize_embedding", a.normalize_embedding}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
    ArchConfig defaults;
    a.in_channels = j.value("in_channels", defaults.in_channels);
    a.stage_channels = j.value("stage_channels", defaults.stage_channels);
    a.blocks_per_stage = j.value("blocks_per_stage", defaults.blocks_per_stage);
    a.num_classes = j.value("num_classes", defaults.num_classes);
    a.embedding_dim = j.value("embedding_dim", defaults.embedding_dim);
    a.input_size = j.value("input_size", defaults.input_size);
    a.normalize_embedding = j.value("normalize_embedding", defaults.normalize_embedding);
}

}  // namespace xdepict
