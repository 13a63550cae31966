#include "xdepict/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "xdepict/error.hpp"
#include "xdepict/rng.hpp"

namespace xdepict {

double accuracy(std::span<const std::int64_t> predictions, std::span<const std::int64_t> labels) {
    if (predictions.empty()) throw Error("accuracy: no predictions");
    if (predictions.size() != labels.size()) {
        throw Error("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [N,K] logits, got " + shape_str(logits.shape()));
    const auto n = logits.dim(0), k = logits.dim(1);
    auto v = logits.data();
    std::vector<std::int64_t> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j) {
            if (v[i * k + j] > v[i * k + best]) best = j;
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::int64_t> predictions, std::span<const std::int64_t> labels,
                                 std::int64_t num_classes) {
    if (predictions.size() != labels.size()) throw Error("confusion_matrix: length mismatch");
    ConfusionMatrix m(static_cast<std::size_t>(num_classes), std::vector<std::int64_t>(num_classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
            throw Error("confusion_matrix: class index out of range at position " + std::to_string(i));
        }
        ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    }
    return m;
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& confusion) {
    std::vector<double> out;
    for (std::size_t i = 0; i < confusion.size(); ++i) {
        std::int64_t row = 0;
        for (auto v : confusion[i]) row += v;
        out.push_back(row ? static_cast<double>(confusion[i][i]) / static_cast<double>(row) : 0.0);
    }
    return out;
}

std::size_t PairSet::n_pos() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.positive; }));
}

std::size_t PairSet::n_neg() const { return pairs.size() - n_pos(); }

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("distance between vectors of dimension " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

PairSet build_pair_set(const EmbeddingMap& embeddings, const DatasetManifest& manifest, Split split, int neg_per_pos,
                       std::uint64_t seed) {
    if (neg_per_pos < 1) throw Error("build_pair_set: neg_per_pos must be >= 1");
    auto records = manifest.records_in(split);
    std::sort(records.begin(), records.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });
    auto vector_of = [&](const std::string& id) -> const std::vector<float>& {
        auto it = embeddings.find(id);
        if (it == embeddings.end()) throw Error("build_pair_set: sample '" + id + "' has no embedding");
        return it->second;
    };

    PairSet set;
    std::map<int, std::vector<const SampleRecord*>> by_instance;
    for (const auto* r : records) by_instance[r->instance_id].push_back(r);
    for (const auto& [instance, members] : by_instance) {
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (std::size_t j = i + 1; j < members.size(); ++j) {
                if (members[i]->style == members[j]->style) continue;
                set.pairs.push_back({members[i]->sample_id, members[j]->sample_id,
                                     euclidean_distance(vector_of(members[i]->sample_id),
                                                        vector_of(members[j]->sample_id)),
                                     true});
            }
        }
    }
    const std::size_t n_pos = set.pairs.size();
    if (n_pos == 0) throw Error("build_pair_set: split '" + std::string(to_string(split)) + "' has no positive pairs");
    const bool multi_class = std::any_of(records.begin(), records.end(), [&](const SampleRecord* r) {
        return r->class_index != records.front()->class_index;
    });
    if (!multi_class) throw Error("build_pair_set: split has a single class, no negative pairs exist");

    Rng rng(seed);
    const std::size_t n_neg = n_pos * static_cast<std::size_t>(neg_per_pos);
    while (set.pairs.size() < n_pos + n_neg) {
        const auto* a = records[static_cast<std::size_t>(rng.below(records.size()))];
        const auto* b = records[static_cast<std::size_t>(rng.below(records.size()))];
        if (a->class_index == b->class_index) continue;
        set.pairs.push_back(
            {a->sample_id, b->sample_id, euclidean_distance(vector_of(a->sample_id), vector_of(b->sample_id)), false});
    }
    return set;
}

double fpr95(const PairSet& pairs) {
    std::vector<double> pos, neg;
    for (const auto& p : pairs.pairs) {
        if (p.distance < 0 || !std::isfinite(p.distance)) throw Error("fpr95: distances must be finite and >= 0");
        (p.positive ? pos : neg).push_back(p.distance);
    }
    if (pos.empty() || neg.empty()) throw Error("fpr95: needs at least one positive and one negative pair");
    std::sort(pos.begin(), pos.end());
    const std::size_t rank = (95 * pos.size() + 99) / 100;  // ceil(0.95 n), at least 1
    const double threshold = pos[rank - 1];
    const auto false_pos = std::count_if(neg.begin(), neg.end(), [&](double d) { return d <= threshold; });
    return static_cast<double>(false_pos) / static_cast<double>(neg.size());
}

double precision_at_k(std::span<const std::int64_t> result_classes, std::int64_t query_class, int k) {
    if (k < 1) throw Error("precision_at_k: k must be >= 1");
    if (result_classes.size() < static_cast<std::size_t>(k)) {
        throw Error("precision_at_k: need " + std::to_string(k) + " results, got " +
                    std::to_string(result_classes.size()));
    }
    const auto hits = std::count(result_classes.begin(), result_classes.begin() + k, query_class);
    return static_cast<double>(hits) / k;
}

bool top_k_identity_hit(std::span<const std::int64_t> result_instances, std::int64_t query_instance, int k,
                        std::size_t alternates_available) {
    if (k < 1) throw Error("top_k_identity_hit: k must be >= 1");
    if (alternates_available == 0) {
        throw Error("top_k_identity_hit: instance " + std::to_string(query_instance) +
                    " has no other depiction in the index; the metric is undefined");
    }
    const auto end = result_instances.begin() + std::min<std::ptrdiff_t>(k, std::ssize(result_instances));
    return std::find(result_instances.begin(), end, query_instance) != end;
}

Projection pca_project(const TensorD& data, int dims, double tolerance, int max_iterations) {
    if (data.rank() != 2) throw ShapeError("pca_project: expected [N,D] data, got " + shape_str(data.shape()));
    const auto n = data.dim(0), d = data.dim(1);
    if (n < 3) throw Error("pca_project: needs at least 3 points");
    if (dims < 1 || dims > d) throw Error("pca_project: dims must be in [1, D]");
    auto x = data.data();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += x[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> centered(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            centered[static_cast<std::size_t>(i * d + j)] = x[i * d + j] - mean[static_cast<std::size_t>(j)];

    std::vector<double> cov(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = centered.data() + i * d;
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = a; b < d; ++b) cov[static_cast<std::size_t>(a * d + b)] += row[a] * row[b];
    }
    for (std::int64_t a = 0; a < d; ++a) {
        for (std::int64_t b = a; b < d; ++b) {
            cov[static_cast<std::size_t>(a * d + b)] /= static_cast<double>(n - 1);
            cov[static_cast<std::size_t>(b * d + a)] = cov[static_cast<std::size_t>(a * d + b)];
        }
    }
    double total = 0.0;
    for (std::int64_t a = 0; a < d; ++a) total += cov[static_cast<std::size_t>(a * d + a)];

    Projection out{TensorD(Shape{n, dims}, 0.0), std::vector<double>(static_cast<std::size_t>(dims), 0.0), false};
    if (total <= 1e-300) {
        out.degenerate = true;
        return out;
    }
    std::vector<std::vector<double>> axes;
    Rng rng(0x9ca);
    for (int k = 0; k < dims; ++k) {
        std::vector<double> v(static_cast<std::size_t>(d));
        for (auto& e : v) e = rng.uniform(0.5, 1.5);
        std::vector<double> w(v.size());
        double lambda = 0.0;
        for (int it = 0; it < max_iterations; ++it) {
            for (std::int64_t a = 0; a < d; ++a) {
                double s = 0.0;
                for (std::int64_t b = 0; b < d; ++b) s += cov[static_cast<std::size_t>(a * d + b)] * v[static_cast<std::size_t>(b)];
                w[static_cast<std::size_t>(a)] = s;
            }
            // Keep the iterate orthogonal to earlier axes; deflation alone
            // leaves rounding residue along them.
            for (const auto& u : axes) {
                double dot = 0.0;
                for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * u[i];
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= dot * u[i];
            }
            double norm = 0.0;
            for (double e : w) norm += e * e;
            norm = std::sqrt(norm);
            if (norm <= 1e-12 * total) {
                std::fill(v.begin(), v.end(), 0.0);
                lambda = 0.0;
                break;
            }
            double delta = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double next = w[i] / norm;
                delta = std::max(delta, std::abs(next - v[i]));
                v[i] = next;
            }
            lambda = norm;
            if (delta < tolerance) break;
        }
        // Sign convention: the largest-magnitude component is positive.
        const auto big = std::max_element(v.begin(), v.end(), [](double p, double q) { return std::abs(p) < std::abs(q); });
        if (*big < 0) {
            for (auto& e : v) e = -e;
        }
        out.explained_ratio[static_cast<std::size_t>(k)] = std::max(0.0, lambda) / total;
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = 0; b < d; ++b)
                cov[static_cast<std::size_t>(a * d + b)] -= lambda * v[static_cast<std::size_t>(a)] * v[static_cast<std::size_t>(b)];
        axes.push_back(std::move(v));
    }
    auto coords = out.coords.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < dims; ++k) {
            double s = 0.0;
            for (std::int64_t j = 0; j < d; ++j) s += centered[static_cast<std::size_t>(i * d + j)] * axes[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
            coords[i * dims + k] = s;
        }
    }
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    if (accuracy) {
        j["accuracy"] = *accuracy;
        j["per_class_accuracy"] = per_class_accuracy;
        j["confusion_matrix"] = confusion;
    }
    if (fpr95) {
        j["fpr95"] = *fpr95;
        j["pairs"] = {{"n_pos", n_pos}, {"n_neg", n_neg}, {"construction", "synthetic same-instance positives, sampled cross-class negatives"}};
    }
    if (!precision_at_k.empty()) {
        nlohmann::ordered_json p;
        for (const auto& [k, v] : precision_at_k) p[std::to_string(k)] = v;
        j["precision_at_k"] = p;
    }
    if (top3_hit_rate) j["top3_hit_rate"] = *top3_hit_rate;
    if (num_queries) j["num_queries"] = num_queries;
    return j.dump(2);
}

std::string format_projection_table(std::span<const ProjectionRow> rows) {
    std::string out = "sample_id,x,y,class,style\n";
    char buf[64];
    for (const auto& r : rows) {
        out += r.sample_id;
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g,", r.x, r.y);
        out += buf;
        out += r.class_name + "," + r.style + "\n";
    }
    return out;
}

std::vector<ProjectionRow> parse_projection_table(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "sample_id,x,y,class,style") {
        throw FormatError(FormatError::Kind::bad_header, "", "projection table has an unexpected header");
    }
    std::vector<ProjectionRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw FormatError(FormatError::Kind::bad_header, "", "projection row needs 5 fields");
        rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2]), cells[3], cells[4]});
    }
    return rows;
}

}  // namespace xdepict
