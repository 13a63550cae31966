#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xdepict/dataset.hpp"
#include "xdepict/model.hpp"

namespace xdepict {

struct EmbeddingRecord {
    std::string sample_id;
    std::vector<float> vector;
    std::string class_name;
    int class_index = 0;
    int instance_id = 0;
    std::string style;
};

// Id-addressed embedding store answering exact Euclidean k-NN queries.
struct EmbeddingIndex {
    int dimension = 0;
    std::vector<EmbeddingRecord> records;  // ascending sample_id
    std::string checkpoint_id;
    std::string built_at;  // informational, not persisted

    const EmbeddingRecord* find(std::string_view sample_id) const;
};

struct QueryResult {
    std::string sample_id;
    double distance = 0.0;
    std::string class_name;
    int class_index = 0;
    int instance_id = 0;
    std::string style;
};

// Identifier of a checkpoint: FNV-1a of its serialized bytes.
std::string checkpoint_id(const Checkpoint& checkpoint);

// Embeds every sample of `split` in eval mode.
EmbeddingIndex build_index(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache, Split split,
                           std::string checkpoint_id, int batch_size = 64);
EmbeddingIndex build_index(const Checkpoint& checkpoint, const DatasetManifest& manifest, Split split);

// Brute-force search: ascending distance, ties by sample_id, `exclude_id`
// skipped; returns min(k, available) results.
std::vector<QueryResult> query(const EmbeddingIndex& index, std::span<const float> vector, int k,
                               std::optional<std::string_view> exclude_id = std::nullopt);

// Query by an indexed sample's stored vector, the sample itself excluded.
// Throws NotFoundError for ids not in the index.
std::vector<QueryResult> query_sample(const EmbeddingIndex& index, std::string_view sample_id, int k = 6);

// Number of index records sharing `instance_id`, other than `exclude_id`.
std::size_t count_alternates(const EmbeddingIndex& index, int instance_id, std::string_view exclude_id);

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& index);
EmbeddingIndex parse_index(std::span<const std::uint8_t> bytes);
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace xdepict
