#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xdepict/dataset.hpp"
#include "xdepict/tensor.hpp"

namespace xdepict {

// Embedding vectors keyed by sample_id.
using EmbeddingMap = std::map<std::string, std::vector<float>, std::less<>>;

double accuracy(std::span<const std::int64_t> predictions, std::span<const std::int64_t> labels);

// Row-wise argmax of [N,K] logits; the lowest index wins ties.
std::vector<std::int64_t> argmax_rows(const Tensor& logits);

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

// Entry (i,j) counts samples of true class i predicted as j.
ConfusionMatrix confusion_matrix(std::span<const std::int64_t> predictions, std::span<const std::int64_t> labels,
                                 std::int64_t num_classes);

// Diagonal over row sums; classes without samples report 0.
std::vector<double> per_class_accuracy(const ConfusionMatrix& confusion);

struct LabeledPair {
    std::string a;
    std::string b;
    double distance = 0.0;
    bool positive = false;
};

struct PairSet {
    std::vector<LabeledPair> pairs;

    std::size_t n_pos() const;
    std::size_t n_neg() const;
};

double euclidean_distance(std::span<const float> a, std::span<const float> b);

// Positives: every same-instance pair of different depictions in the split.
// Negatives: neg_per_pos * n_pos pairs drawn uniformly (with replacement)
// among different-class pairs of the split, from `seed`.
PairSet build_pair_set(const EmbeddingMap& embeddings, const DatasetManifest& manifest, Split split,
                       int neg_per_pos = 10, std::uint64_t seed = 0);

// Threshold t = the ceil(0.95 * n_pos)-th smallest positive distance; returns
// the fraction of negatives with distance <= t.
double fpr95(const PairSet& pairs);

// Fraction of the first k result classes equal to the query class.
double precision_at_k(std::span<const std::int64_t> result_classes, std::int64_t query_class, int k = 6);

// Whether any of the first k results shares the query's instance.
// `alternates_available` counts other depictions of that instance in the
// searched collection; the metric is undefined when it is zero.
bool top_k_identity_hit(std::span<const std::int64_t> result_instances, std::int64_t query_instance, int k = 3,
                        std::size_t alternates_available = 1);

struct Projection {
    TensorD coords;                      // [N, dims]
    std::vector<double> explained_ratio;  // per component, of total variance
    bool degenerate = false;              // zero total variance
};

// Mean-centered projection onto the leading principal directions, found by
// power iteration with deflation on the covariance matrix.
Projection pca_project(const TensorD& data, int dims = 2, double tolerance = 1e-7, int max_iterations = 1000);

struct MetricsReport {
    std::optional<double> accuracy;
    std::vector<double> per_class_accuracy;
    ConfusionMatrix confusion;
    std::optional<double> fpr95;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::map<int, double> precision_at_k;
    std::optional<double> top3_hit_rate;
    std::size_t num_queries = 0;

    std::string to_json() const;
};

struct ProjectionRow {
    std::string sample_id;
    double x = 0.0;
    double y = 0.0;
    std::string class_name;
    std::string style;
};

// Delimited table "sample_id,x,y,class,style" with a header row.
std::string format_projection_table(std::span<const ProjectionRow> rows);
std::vector<ProjectionRow> parse_projection_table(std::string_view text);

}  // namespace xdepict
