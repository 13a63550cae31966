#include "xdepict/inference.hpp"

#include <algorithm>

namespace xdepict {

namespace {

template <typename F>
void for_each_batch(std::span<const std::string> ids, int batch_size, F&& fn) {
    if (batch_size < 1) throw Error("batch size must be >= 1");
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto count = std::min(ids.size() - start, static_cast<std::size_t>(batch_size));
        fn(start, ids.subspan(start, count));
    }
}

}  // namespace

EmbeddingMap embed_samples(const ResNet& model, const ImageCache& cache, std::span<const std::string> sample_ids,
                           int batch_size) {
    if (model.head() != HeadKind::embedder) throw Error("embed_samples needs an embedder model");
    EmbeddingMap out;
    for_each_batch(sample_ids, batch_size, [&](std::size_t, std::span<const std::string> ids) {
        const auto emb = model.forward_eval(cache.batch(ids).images);
        const auto dim = static_cast<std::size_t>(emb.dim(1));
        auto values = emb.data();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out[ids[i]] = std::vector<float>(values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                             values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        }
    });
    return out;
}

std::vector<std::int64_t> predict_classes(const ResNet& model, const ImageCache& cache,
                                          std::span<const std::string> sample_ids, int batch_size) {
    if (model.head() != HeadKind::classifier) throw Error("predict_classes needs a classifier model");
    std::vector<std::int64_t> out;
    for_each_batch(sample_ids, batch_size, [&](std::size_t, std::span<const std::string> ids) {
        const auto pred = argmax_rows(model.forward_eval(cache.batch(ids).images));
        out.insert(out.end(), pred.begin(), pred.end());
    });
    return out;
}

}  // namespace xdepict
