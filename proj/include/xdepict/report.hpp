#pragma once

#include <cstdint>

#include "xdepict/dataset.hpp"
#include "xdepict/evaluation.hpp"
#include "xdepict/model.hpp"
#include "xdepict/retrieval.hpp"

namespace xdepict {

struct RetrievalScores {
    double top_k_hit_rate = 0.0;      // over queries with >= 1 alternate depiction
    double mean_precision_at_k = 0.0;  // over all queries
    std::size_t queries = 0;
    std::size_t identity_queries = 0;
};

// Every record queries the rest of the index (itself excluded).
RetrievalScores score_retrieval(const EmbeddingIndex& index, int precision_k = 6, int identity_k = 3);

// Accuracy, per-class accuracy and confusion matrix on `split`.
MetricsReport evaluate_classifier(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache,
                                  Split split);

// FPR95 on the split's pair set plus retrieval scores on an index of the split.
MetricsReport evaluate_embedder(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache,
                                Split split, int neg_per_pos = 10, std::uint64_t pair_seed = 0);

}  // namespace xdepict
