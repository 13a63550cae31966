#pragma once

#include <span>
#include <string>
#include <vector>

#include "xdepict/dataset.hpp"
#include "xdepict/evaluation.hpp"
#include "xdepict/model.hpp"

namespace xdepict {

// Eval-mode embeddings for the given samples, computed in batches.
EmbeddingMap embed_samples(const ResNet& model, const ImageCache& cache, std::span<const std::string> sample_ids,
                           int batch_size = 64);

// Eval-mode argmax predictions, aligned with `sample_ids`.
std::vector<std::int64_t> predict_classes(const ResNet& model, const ImageCache& cache,
                                          std::span<const std::string> sample_ids, int batch_size = 64);

}  // namespace xdepict
