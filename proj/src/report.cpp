#include "xdepict/report.hpp"

#include "xdepict/inference.hpp"

namespace xdepict {

RetrievalScores score_retrieval(const EmbeddingIndex& index, int precision_k, int identity_k) {
    RetrievalScores s;
    std::size_t hits = 0;
    double precision = 0.0;
    const int k = std::max(precision_k, identity_k);
    for (const auto& rec : index.records) {
        const auto results = query(index, rec.vector, k, rec.sample_id);
        std::vector<std::int64_t> classes, instances;
        for (const auto& r : results) {
            classes.push_back(r.class_index);
            instances.push_back(r.instance_id);
        }
        precision += precision_at_k(classes, rec.class_index, precision_k);
        ++s.queries;
        const auto alternates = count_alternates(index, rec.instance_id, rec.sample_id);
        if (alternates == 0) continue;
        hits += top_k_identity_hit(instances, rec.instance_id, identity_k, alternates);
        ++s.identity_queries;
    }
    if (s.queries == 0) throw Error("score_retrieval: empty index");
    s.mean_precision_at_k = precision / static_cast<double>(s.queries);
    if (s.identity_queries == 0) throw Error("score_retrieval: no query has an alternate depiction in the index");
    s.top_k_hit_rate = static_cast<double>(hits) / static_cast<double>(s.identity_queries);
    return s;
}

MetricsReport evaluate_classifier(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache,
                                  Split split) {
    const auto ids = manifest.ids(split);
    std::vector<std::int64_t> labels;
    for (const auto& id : ids) labels.push_back(manifest.find(id).class_index);
    const auto pred = predict_classes(model, cache, ids);
    MetricsReport report;
    report.accuracy = accuracy(pred, labels);
    report.confusion = confusion_matrix(pred, labels, static_cast<std::int64_t>(manifest.num_classes()));
    report.per_class_accuracy = per_class_accuracy(report.confusion);
    return report;
}

MetricsReport evaluate_embedder(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache,
                                Split split, int neg_per_pos, std::uint64_t pair_seed) {
    auto ids = manifest.ids(split);
    const auto emb = embed_samples(model, cache, ids);
    const auto pairs = build_pair_set(emb, manifest, split, neg_per_pos, pair_seed);
    MetricsReport report;
    report.fpr95 = fpr95(pairs);
    report.n_pos = pairs.n_pos();
    report.n_neg = pairs.n_neg();

    EmbeddingIndex index;
    index.dimension = model.arch().embedding_dim;
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        const auto& r = manifest.find(id);
        index.records.push_back({id, emb.at(id), r.class_name, r.class_index, r.instance_id, r.style});
    }
    const auto scores = score_retrieval(index);
    report.precision_at_k[6] = scores.mean_precision_at_k;
    report.top3_hit_rate = scores.top_k_hit_rate;
    report.num_queries = scores.queries;
    return report;
}

}  // namespace xdepict
