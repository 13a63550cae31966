#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xdepict/dataset.hpp"
#include "xdepict/evaluation.hpp"
#include "xdepict/model.hpp"
#include "xdepict/retrieval.hpp"

namespace httplib {
class Server;
}

namespace xdepict {

struct Response {
    int status = 200;
    std::string content_type = "application/json; charset=utf-8";
    std::string body;
};

// A malformed request; reported as a 400 error document.
class BadRequest : public Error {
public:
    using Error::Error;
};

// Exactly one of sample_id and image is set.
struct QueryRequest {
    std::optional<std::string> sample_id;
    std::optional<std::string> image;  // encoded PNG or PGM bytes
    int k = 6;
};

// Parses a JSON body {"sample_id": ..., "k": ...}; throws BadRequest.
QueryRequest parse_query_json(std::string_view body);

// {"code": ..., "message": ...} with the matching HTTP status.
Response error_response(int status, std::string_view code, std::string_view message);

// Everything a query needs, built once and never mutated.
struct Snapshot {
    std::string checkpoint_id;
    std::string label;
    std::unique_ptr<const ResNet> model;
    EmbeddingIndex index;
    std::vector<ProjectionRow> projection;
};

// Embedder checkpoint plus an optional prebuilt index for it.
struct CheckpointSource {
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> index;
};

std::shared_ptr<const Snapshot> make_snapshot(const Checkpoint& checkpoint, std::string label,
                                              const DatasetManifest& manifest, const ImageCache& cache, Split split,
                                              std::optional<EmbeddingIndex> prebuilt = std::nullopt);

// PCA of the index vectors, one row per record.
std::vector<ProjectionRow> project_index(const EmbeddingIndex& index);

// Request handlers behind the HTTP routes. Each is safe to call concurrently;
// select_checkpoint swaps the whole snapshot at once.
class RetrievalService {
public:
    RetrievalService(DatasetManifest manifest, std::vector<CheckpointSource> sources, Split split = Split::test);

    Response classes() const;
    Response samples(std::string_view class_filter, std::string_view style_filter, std::string_view split_filter,
                     std::string_view page, std::string_view page_size) const;
    Response image(std::string_view sample_id) const;
    // {query: {id, class}, results: [...]}, or an error document.
    Response handle_query_request(const QueryRequest& request) const;
    Response checkpoints() const;
    Response select_checkpoint(std::string_view body);
    Response projection() const;

    std::shared_ptr<const Snapshot> snapshot() const;
    const DatasetManifest& manifest() const { return manifest_; }

private:
    struct Entry {
        std::string id;
        std::string label;
        CheckpointSource source;
    };

    std::shared_ptr<const Snapshot> load(const Entry& entry) const;

    DatasetManifest manifest_;
    Split split_;
    std::unique_ptr<ImageCache> cache_;
    std::vector<Entry> entries_;

    mutable std::mutex mutex_;  // guards current_
    std::shared_ptr<const Snapshot> current_;
    std::mutex select_mutex_;  // one snapshot build at a time
};

// Routes the /api endpoints of `service` on `server`.
void mount_routes(httplib::Server& server, RetrievalService& service);

}  // namespace xdepict
