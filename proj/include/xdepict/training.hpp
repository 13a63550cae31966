#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "xdepict/dataset.hpp"
#include "xdepict/model.hpp"

namespace xdepict {

enum class PositivePolicy { same_instance, same_class };
std::string_view to_string(PositivePolicy policy);
PositivePolicy parse_positive_policy(std::string_view text);

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    double margin = 1.0;
    PositivePolicy positive_policy = PositivePolicy::same_instance;
    int neg_per_pos = 10;  // validation pair set for the embedder

    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    double loss = 0.0;
    std::string metric;  // "accuracy" or "fpr95"
    double val_metric = 0.0;
    double seconds = 0.0;

    std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochReport&)>;

struct TrainResult {
    Checkpoint checkpoint;  // best validation epoch
    Checkpoint last;        // state after the final epoch
    std::vector<EpochReport> reports;
    int best_epoch = 0;  // 0 when no epoch ran
};

// SGD on class-weighted cross-entropy, shuffling the training split each
// epoch; keeps the epoch with the best validation accuracy (earliest on ties).
TrainResult train_classifier(const DatasetManifest& manifest, const ImageCache& cache, const ArchConfig& arch,
                             const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train_classifier(const DatasetManifest& manifest, const ArchConfig& arch, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

struct TripletBatch {
    std::vector<std::string> anchors;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;

    std::size_t size() const { return anchors.size(); }
};

// Anchors uniform over the eligible samples of `split`; positives per policy;
// negatives uniform over samples of other classes.
TripletBatch sample_triplets(const DatasetManifest& manifest, Split split, PositivePolicy policy, std::size_t count,
                             std::uint64_t seed);

// Trains an embedder from random weights (`init` null) or from the backbone of
// a classifier checkpoint, on freshly sampled triplets each epoch; keeps the
// epoch with the lowest validation FPR95. Zero epochs return the initial model.
TrainResult train_embedder(const DatasetManifest& manifest, const ImageCache& cache, const ArchConfig& arch,
                           const Checkpoint* init, const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train_embedder(const DatasetManifest& manifest, const ArchConfig& arch, const Checkpoint* init,
                           const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace xdepict
