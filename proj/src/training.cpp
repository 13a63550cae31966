#include "xdepict/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "json.hpp"
#include "xdepict/evaluation.hpp"
#include "xdepict/inference.hpp"
#include "xdepict/optim.hpp"

namespace xdepict {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_finite(float loss, int epoch, std::size_t batch) {
    if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch));
    }
}

// One SGD step on `loss_fn`'s output; returns the loss value.
template <typename F>
float step(ResNet& model, std::vector<Tensor>& params, float lr, int epoch, std::size_t batch, F&& loss_fn) {
    Tape<float> tape;
    float value = 0.0f;
    {
        TapeScope<float> scope(tape);
        const Tensor loss = loss_fn(model);
        value = loss.item();
        check_finite(value, epoch, batch);
        tape.backward(loss);
    }
    sgd_step(params, lr);
    return value;
}

std::vector<std::string> sorted_ids(const DatasetManifest& manifest, Split split) {
    auto ids = manifest.ids(split);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void require_split(const DatasetManifest& manifest, Split split) {
    if (manifest.ids(split).empty()) throw Error("the " + std::string(to_string(split)) + " split is empty");
}

}  // namespace

std::string_view to_string(PositivePolicy policy) {
    return policy == PositivePolicy::same_instance ? "same-instance" : "same-class";
}

PositivePolicy parse_positive_policy(std::string_view text) {
    if (text == "same-instance") return PositivePolicy::same_instance;
    if (text == "same-class") return PositivePolicy::same_class;
    throw Error("unknown positive policy '" + std::string(text) + "' (expected same-instance or same-class)");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be >= 0");
    if (epochs < 0) throw Error("epochs must be >= 0");
    if (batch_size < 2) throw Error("batch size must be >= 2");
    if (!(margin >= 0.0)) throw Error("margin must be >= 0");
    if (neg_per_pos < 1) throw Error("neg_per_pos must be >= 1");
}

std::string EpochReport::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["loss"] = loss;
    j["metric"] = metric;
    j["val_metric"] = val_metric;
    j["seconds"] = seconds;
    return j.dump();
}

TrainResult train_classifier(const DatasetManifest& manifest, const ImageCache& cache, const ArchConfig& arch,
                             const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    arch.validate();
    require_split(manifest, Split::train);
    require_split(manifest, Split::val);
    if (static_cast<std::size_t>(arch.num_classes) != manifest.num_classes()) {
        throw Error("architecture has " + std::to_string(arch.num_classes) + " classes, dataset has " +
                    std::to_string(manifest.num_classes()));
    }

    ResNet model(arch, HeadKind::classifier, config.seed);
    auto params = model.parameters();
    const auto weights_vec = class_weights(manifest, Split::train);
    Tensor weights(Shape{static_cast<std::int64_t>(weights_vec.size())});
    std::transform(weights_vec.begin(), weights_vec.end(), weights.data().begin(),
                   [](double w) { return static_cast<float>(w); });

    auto train_ids = sorted_ids(manifest, Split::train);
    const auto val_ids = sorted_ids(manifest, Split::val);
    std::vector<std::int64_t> val_labels;
    for (const auto& id : val_ids) val_labels.push_back(manifest.find(id).class_index);

    TrainResult result;
    result.checkpoint = model.to_checkpoint({0, 0.0, config.seed});
    double best = -1.0;
    const auto lr = static_cast<float>(config.learning_rate);
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        Rng rng(derive_seed(config.seed, {10, static_cast<std::uint64_t>(epoch)}));
        rng.shuffle(train_ids);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < train_ids.size(); b += bs) {
            const auto ids = std::span<const std::string>(train_ids).subspan(b, std::min(bs, train_ids.size() - b));
            const auto batch = cache.batch(ids);
            total += step(model, params, lr, epoch, batches, [&](ResNet& m) {
                return weighted_cross_entropy(m.forward(batch.images, Mode::train), batch.labels, weights);
            });
            ++batches;
        }
        EpochReport report;
        report.epoch = epoch;
        report.loss = total / static_cast<double>(batches);
        report.metric = "accuracy";
        report.val_metric = accuracy(predict_classes(model, cache, val_ids), val_labels);
        report.seconds = seconds_since(start);
        if (report.val_metric > best) {
            best = report.val_metric;
            result.best_epoch = epoch;
            result.checkpoint = model.to_checkpoint({epoch, report.loss, config.seed});
        }
        result.reports.push_back(report);
        if (on_epoch) on_epoch(report);
    }
    result.last = config.epochs > 0 ? model.to_checkpoint({config.epochs, result.reports.back().loss, config.seed})
                                    : result.checkpoint;
    return result;
}

TrainResult train_classifier(const DatasetManifest& manifest, const ArchConfig& arch, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
    const ImageCache cache(manifest, arch.input_size);
    return train_classifier(manifest, cache, arch, config, on_epoch);
}

TripletBatch sample_triplets(const DatasetManifest& manifest, Split split, PositivePolicy policy, std::size_t count,
                             std::uint64_t seed) {
    auto records = manifest.records_in(split);
    std::sort(records.begin(), records.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });

    std::map<int, std::vector<const SampleRecord*>> by_instance, by_class;
    for (const auto* r : records) {
        by_instance[r->instance_id].push_back(r);
        by_class[r->class_index].push_back(r);
    }
    auto candidates = [&](const SampleRecord* a) {
        std::vector<const SampleRecord*> out;
        const auto& pool = policy == PositivePolicy::same_instance ? by_instance[a->instance_id] : by_class[a->class_index];
        for (const auto* r : pool) {
            if (r == a) continue;
            if (policy == PositivePolicy::same_instance && r->style == a->style) continue;
            out.push_back(r);
        }
        return out;
    };

    std::vector<const SampleRecord*> anchors;
    std::vector<std::vector<const SampleRecord*>> positives;
    for (const auto* r : records) {
        auto c = candidates(r);
        if (c.empty()) continue;
        anchors.push_back(r);
        positives.push_back(std::move(c));
    }
    if (anchors.empty()) {
        throw Error("no sample in the " + std::string(to_string(split)) + " split has a " +
                    std::string(to_string(policy)) + " positive");
    }
    if (by_class.size() < 2) throw Error("triplets need at least two classes in the split");

    Rng rng(seed);
    TripletBatch out;
    out.anchors.reserve(count);
    out.positives.reserve(count);
    out.negatives.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto ai = static_cast<std::size_t>(rng.below(anchors.size()));
        const auto* a = anchors[ai];
        const auto& pos = positives[ai];
        const auto* p = pos[static_cast<std::size_t>(rng.below(pos.size()))];
        const SampleRecord* n = nullptr;
        do {
            n = records[static_cast<std::size_t>(rng.below(records.size()))];
        } while (n->class_index == a->class_index);
        out.anchors.push_back(a->sample_id);
        out.positives.push_back(p->sample_id);
        out.negatives.push_back(n->sample_id);
    }
    return out;
}

TrainResult train_embedder(const DatasetManifest& manifest, const ImageCache& cache, const ArchConfig& arch,
                           const Checkpoint* init, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    arch.validate();
    require_split(manifest, Split::train);
    require_split(manifest, Split::val);

    ResNet model = init ? swap_head_to_embedding(*init, arch, config.seed)
                        : ResNet(arch, HeadKind::embedder, config.seed);
    auto params = model.parameters();
    const auto train_size = manifest.ids(Split::train).size();
    const auto val_ids = sorted_ids(manifest, Split::val);
    const auto pair_seed = derive_seed(config.seed, {30});

    TrainResult result;
    result.checkpoint = model.to_checkpoint({0, 0.0, config.seed});
    double best = 2.0;
    const auto lr = static_cast<float>(config.learning_rate);
    const auto margin = static_cast<float>(config.margin);
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto triplets = sample_triplets(manifest, Split::train, config.positive_policy, train_size,
                                              derive_seed(config.seed, {20, static_cast<std::uint64_t>(epoch)}));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < triplets.size(); b += bs) {
            const auto n = std::min(bs, triplets.size() - b);
            // Anchors, positives and negatives go through the network as one
            // batch of 3n images.
            std::vector<std::string> ids;
            ids.reserve(3 * n);
            for (const auto* list : {&triplets.anchors, &triplets.positives, &triplets.negatives}) {
                ids.insert(ids.end(), list->begin() + static_cast<std::ptrdiff_t>(b),
                           list->begin() + static_cast<std::ptrdiff_t>(b + n));
            }
            const auto images = cache.batch(ids).images;
            const auto ni = static_cast<std::int64_t>(n);
            total += step(model, params, lr, epoch, batches, [&](ResNet& m) {
                const auto emb = m.forward(images, Mode::train);
                const auto a = narrow(emb, 0, ni);
                const auto p = narrow(emb, ni, ni);
                const auto ng = narrow(emb, 2 * ni, ni);
                return margin_ranking_loss(row_distance(a, p), row_distance(a, ng), margin);
            });
            ++batches;
        }
        EpochReport report;
        report.epoch = epoch;
        report.loss = total / static_cast<double>(batches);
        report.metric = "fpr95";
        const auto emb = embed_samples(model, cache, val_ids);
        report.val_metric = fpr95(build_pair_set(emb, manifest, Split::val, config.neg_per_pos, pair_seed));
        report.seconds = seconds_since(start);
        if (report.val_metric < best) {
            best = report.val_metric;
            result.best_epoch = epoch;
            result.checkpoint = model.to_checkpoint({epoch, report.loss, config.seed});
        }
        result.reports.push_back(report);
        if (on_epoch) on_epoch(report);
    }
    result.last = config.epochs > 0 ? model.to_checkpoint({config.epochs, result.reports.back().loss, config.seed})
                                    : result.checkpoint;
    return result;
}

TrainResult train_embedder(const DatasetManifest& manifest, const ArchConfig& arch, const Checkpoint* init,
                           const TrainConfig& config, const EpochCallback& on_epoch) {
    const ImageCache cache(manifest, arch.input_size);
    return train_embedder(manifest, cache, arch, init, config, on_epoch);
}

}  // namespace xdepict
