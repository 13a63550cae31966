#include "xdepict/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "json.hpp"

#include "xdepict/container.hpp"
#include "xdepict/error.hpp"
#include "xdepict/evaluation.hpp"
#include "xdepict/inference.hpp"

namespace xdepict {

namespace {

constexpr std::string_view kMagic = "XDIX1\n";

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

const EmbeddingRecord* EmbeddingIndex::find(std::string_view sample_id) const {
    auto it = std::lower_bound(records.begin(), records.end(), sample_id,
                               [](const EmbeddingRecord& r, std::string_view id) { return r.sample_id < id; });
    if (it == records.end() || it->sample_id != sample_id) return nullptr;
    return &*it;
}

std::string checkpoint_id(const Checkpoint& checkpoint) { return fnv1a_hex(serialize_checkpoint(checkpoint)); }

EmbeddingIndex build_index(const ResNet& model, const DatasetManifest& manifest, const ImageCache& cache, Split split,
                           std::string ckpt_id, int batch_size) {
    if (model.head() != HeadKind::embedder) throw Error("an index needs an embedder checkpoint");
    auto ids = manifest.ids(split);
    std::sort(ids.begin(), ids.end());
    auto embeddings = embed_samples(model, cache, ids, batch_size);

    EmbeddingIndex index;
    index.dimension = model.arch().embedding_dim;
    index.checkpoint_id = std::move(ckpt_id);
    index.built_at = utc_now();
    index.records.reserve(ids.size());
    for (const auto& id : ids) {
        const auto& rec = manifest.find(id);
        index.records.push_back({id, std::move(embeddings.at(id)), rec.class_name, rec.class_index, rec.instance_id,
                                 rec.style});
    }
    return index;
}

EmbeddingIndex build_index(const Checkpoint& checkpoint, const DatasetManifest& manifest, Split split) {
    const auto model = ResNet::from_checkpoint(checkpoint);
    const ImageCache cache(manifest, checkpoint.arch.input_size);
    return build_index(model, manifest, cache, split, checkpoint_id(checkpoint));
}

std::vector<QueryResult> query(const EmbeddingIndex& index, std::span<const float> vector, int k,
                               std::optional<std::string_view> exclude_id) {
    if (k < 1) throw Error("k must be >= 1");
    if (static_cast<int>(vector.size()) != index.dimension) {
        throw Error("query vector has dimension " + std::to_string(vector.size()) + ", index has " +
                    std::to_string(index.dimension));
    }
    std::vector<std::pair<double, const EmbeddingRecord*>> scored;
    scored.reserve(index.records.size());
    for (const auto& rec : index.records) {
        if (exclude_id && rec.sample_id == *exclude_id) continue;
        scored.emplace_back(euclidean_distance(vector, rec.vector), &rec);
    }
    const auto take = std::min(scored.size(), static_cast<std::size_t>(k));
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first < b.first;
                          return a.second->sample_id < b.second->sample_id;
                      });
    std::vector<QueryResult> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const auto& r = *scored[i].second;
        out.push_back({r.sample_id, scored[i].first, r.class_name, r.class_index, r.instance_id, r.style});
    }
    return out;
}

std::vector<QueryResult> query_sample(const EmbeddingIndex& index, std::string_view sample_id, int k) {
    const auto* rec = index.find(sample_id);
    if (!rec) throw NotFoundError("sample '" + std::string(sample_id) + "' is not in the index");
    return query(index, rec->vector, k, sample_id);
}

std::size_t count_alternates(const EmbeddingIndex& index, int instance_id, std::string_view exclude_id) {
    return static_cast<std::size_t>(std::count_if(index.records.begin(), index.records.end(), [&](const auto& r) {
        return r.instance_id == instance_id && r.sample_id != exclude_id;
    }));
}

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& index) {
    nlohmann::ordered_json header;
    header["format"] = "xdepict-index";
    header["dimension"] = index.dimension;
    header["count"] = index.records.size();
    header["checkpoint_id"] = index.checkpoint_id;
    auto records = nlohmann::ordered_json::array();
    std::vector<float> payload;
    payload.reserve(index.records.size() * static_cast<std::size_t>(index.dimension));
    for (const auto& r : index.records) {
        if (static_cast<int>(r.vector.size()) != index.dimension) {
            throw Error("record " + r.sample_id + " has the wrong dimension");
        }
        records.push_back({{"sample_id", r.sample_id},
                           {"class_name", r.class_name},
                           {"class_index", r.class_index},
                           {"instance_id", r.instance_id},
                           {"style", r.style}});
        payload.insert(payload.end(), r.vector.begin(), r.vector.end());
    }
    header["records"] = std::move(records);
    return encode_container(kMagic, header.dump(), payload);
}

EmbeddingIndex parse_index(std::span<const std::uint8_t> bytes) {
    const auto container = decode_container(bytes, kMagic);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(container.header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, "", std::string("index header: ") + e.what());
    }
    EmbeddingIndex index;
    try {
        index.dimension = header.at("dimension").get<int>();
        index.checkpoint_id = header.at("checkpoint_id").get<std::string>();
        const auto count = header.at("count").get<std::size_t>();
        const auto& records = header.at("records");
        if (records.size() != count) throw FormatError(FormatError::Kind::bad_header, "", "index record count mismatch");
        if (index.dimension < 1) throw FormatError(FormatError::Kind::bad_header, "", "index dimension must be positive");
        const auto dim = static_cast<std::size_t>(index.dimension);
        if (container.payload.size() != count * dim) {
            const auto have = container.payload.size() / dim;
            const auto name = have < count ? records[have].at("sample_id").get<std::string>() : std::string("?");
            throw FormatError(FormatError::Kind::truncated, name, "index payload truncated at record " + name);
        }
        index.records.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto& r = records[i];
            const auto* begin = container.payload.data() + i * dim;
            index.records.push_back({r.at("sample_id").get<std::string>(), std::vector<float>(begin, begin + dim),
                                     r.at("class_name").get<std::string>(), r.at("class_index").get<int>(),
                                     r.at("instance_id").get<int>(), r.at("style").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, "", std::string("index header: ") + e.what());
    }
    if (!std::is_sorted(index.records.begin(), index.records.end(),
                        [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; })) {
        throw FormatError(FormatError::Kind::bad_header, "", "index records are not sorted by sample_id");
    }
    return index;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
    write_file(path, serialize_index(index));
}

EmbeddingIndex load_index(const std::filesystem::path& path) { return parse_index(read_file(path)); }

}  // namespace xdepict
