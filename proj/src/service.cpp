#include "xdepict/service.hpp"

#include <algorithm>
#include <charconv>

#include "httplib.h"
#include "json.hpp"
#include "xdepict/container.hpp"
#include "xdepict/image.hpp"

namespace xdepict {

namespace {

using json = nlohmann::ordered_json;

Response json_response(const json& doc, int status = 200) {
    return {status, "application/json; charset=utf-8", doc.dump()};
}

int parse_int(std::string_view text, int fallback, std::string_view name) {
    if (text.empty()) return fallback;
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw BadRequest(std::string(name) + " must be an integer, got '" + std::string(text) + "'");
    }
    return value;
}

std::string image_url(std::string_view sample_id) { return "/api/image/" + std::string(sample_id); }

json result_json(const QueryResult& r) {
    return {{"sample_id", r.sample_id},         {"distance", r.distance}, {"class", r.class_name},
            {"class_index", r.class_index},     {"instance_id", r.instance_id}, {"style", r.style},
            {"image_url", image_url(r.sample_id)}};
}

// Converts library exceptions into error documents.
template <typename F>
Response guarded(F&& fn) {
    try {
        return fn();
    } catch (const BadRequest& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const NotFoundError& e) {
        return error_response(404, "not_found", e.what());
    } catch (const FormatError& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

}  // namespace

Response error_response(int status, std::string_view code, std::string_view message) {
    return json_response({{"code", code}, {"message", message}}, status);
}

QueryRequest parse_query_json(std::string_view body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception& e) {
        throw BadRequest(std::string("query body is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw BadRequest("query body must be a JSON object");
    QueryRequest req;
    if (doc.contains("sample_id")) {
        if (!doc["sample_id"].is_string()) throw BadRequest("sample_id must be a string");
        req.sample_id = doc["sample_id"].get<std::string>();
    }
    if (doc.contains("image")) throw BadRequest("upload images as multipart/form-data field 'image'");
    if (doc.contains("k")) {
        if (!doc["k"].is_number_integer()) throw BadRequest("k must be an integer");
        req.k = doc["k"].get<int>();
    }
    return req;
}

std::vector<ProjectionRow> project_index(const EmbeddingIndex& index) {
    const auto n = static_cast<std::int64_t>(index.records.size());
    std::vector<ProjectionRow> rows;
    if (n < 3 || index.dimension < 2) return rows;
    TensorD data(Shape{n, index.dimension});
    auto v = data.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& rec = index.records[static_cast<std::size_t>(i)];
        std::copy(rec.vector.begin(), rec.vector.end(), v.begin() + i * index.dimension);
    }
    const auto proj = pca_project(data, 2);
    const auto c = proj.coords.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& rec = index.records[static_cast<std::size_t>(i)];
        rows.push_back({rec.sample_id, c[i * 2], c[i * 2 + 1], rec.class_name, rec.style});
    }
    return rows;
}

std::shared_ptr<const Snapshot> make_snapshot(const Checkpoint& checkpoint, std::string label,
                                              const DatasetManifest& manifest, const ImageCache& cache, Split split,
                                              std::optional<EmbeddingIndex> prebuilt) {
    if (checkpoint.head != HeadKind::embedder) throw Error("the service needs an embedder checkpoint");
    auto snap = std::make_shared<Snapshot>();
    snap->checkpoint_id = checkpoint_id(checkpoint);
    snap->label = std::move(label);
    snap->model = std::make_unique<const ResNet>(ResNet::from_checkpoint(checkpoint));
    if (prebuilt) {
        if (prebuilt->checkpoint_id != snap->checkpoint_id) {
            throw Error("index was built from checkpoint " + prebuilt->checkpoint_id + ", not " + snap->checkpoint_id);
        }
        snap->index = std::move(*prebuilt);
    } else {
        snap->index = build_index(*snap->model, manifest, cache, split, snap->checkpoint_id);
    }
    snap->projection = project_index(snap->index);
    return snap;
}

RetrievalService::RetrievalService(DatasetManifest manifest, std::vector<CheckpointSource> sources, Split split)
    : manifest_(std::move(manifest)), split_(split) {
    if (sources.empty()) throw Error("the service needs at least one checkpoint");
    for (auto& src : sources) {
        const auto bytes = read_file(src.checkpoint);
        entries_.push_back({fnv1a_hex(bytes), src.checkpoint.stem().string(), std::move(src)});
    }
    const auto first = load_checkpoint(entries_.front().source.checkpoint);
    cache_ = std::make_unique<ImageCache>(manifest_, first.arch.input_size);
    current_ = load(entries_.front());
}

std::shared_ptr<const Snapshot> RetrievalService::load(const Entry& entry) const {
    const auto ckpt = load_checkpoint(entry.source.checkpoint);
    if (ckpt.arch.input_size != cache_->target_size()) {
        throw Error("checkpoint " + entry.label + " expects " + std::to_string(ckpt.arch.input_size) +
                    " px input; the service was started at " + std::to_string(cache_->target_size()));
    }
    std::optional<EmbeddingIndex> prebuilt;
    if (entry.source.index) prebuilt = load_index(*entry.source.index);
    return make_snapshot(ckpt, entry.label, manifest_, *cache_, split_, std::move(prebuilt));
}

std::shared_ptr<const Snapshot> RetrievalService::snapshot() const {
    std::lock_guard lock(mutex_);
    return current_;
}

Response RetrievalService::classes() const {
    json names = manifest_.classes;
    return json_response({{"classes", names}, {"styles", manifest_.styles}});
}

Response RetrievalService::samples(std::string_view class_filter, std::string_view style_filter,
                                   std::string_view split_filter, std::string_view page_text,
                                   std::string_view page_size_text) const {
    return guarded([&] {
        const int page = parse_int(page_text, 0, "page");
        const int page_size = parse_int(page_size_text, 50, "page_size");
        if (page < 0) throw BadRequest("page must be >= 0");
        if (page_size < 1 || page_size > 500) throw BadRequest("page_size must be in [1, 500]");
        std::optional<Split> split;
        if (!split_filter.empty()) {
            try {
                split = parse_split(split_filter);
            } catch (const Error& e) {
                throw BadRequest(e.what());
            }
        }
        std::vector<const SampleRecord*> hits;
        for (const auto& r : manifest_.records) {
            if (!class_filter.empty() && r.class_name != class_filter) continue;
            if (!style_filter.empty() && r.style != style_filter) continue;
            if (split && r.split != *split) continue;
            hits.push_back(&r);
        }
        std::sort(hits.begin(), hits.end(), [](const auto* a, const auto* b) { return a->sample_id < b->sample_id; });
        json items = json::array();
        const auto begin = std::min(hits.size(), static_cast<std::size_t>(page) * static_cast<std::size_t>(page_size));
        const auto end = std::min(hits.size(), begin + static_cast<std::size_t>(page_size));
        for (auto i = begin; i < end; ++i) {
            const auto& r = *hits[i];
            items.push_back({{"sample_id", r.sample_id},
                             {"class", r.class_name},
                             {"class_index", r.class_index},
                             {"instance_id", r.instance_id},
                             {"style", r.style},
                             {"split", to_string(r.split)},
                             {"image_url", image_url(r.sample_id)}});
        }
        return json_response(
            {{"total", hits.size()}, {"page", page}, {"page_size", page_size}, {"items", std::move(items)}});
    });
}

Response RetrievalService::image(std::string_view sample_id) const {
    return guarded([&] {
        if (!manifest_.contains(sample_id)) throw NotFoundError("unknown sample '" + std::string(sample_id) + "'");
        const auto& rec = manifest_.find(sample_id);
        const auto png = encode_png(read_pgm(manifest_.root / rec.path));
        return Response{200, "image/png", std::string(png.begin(), png.end())};
    });
}

Response RetrievalService::handle_query_request(const QueryRequest& request) const {
    return guarded([&] {
        if (request.sample_id.has_value() == request.image.has_value()) {
            throw BadRequest("give exactly one of sample_id or an image");
        }
        if (request.k < 1) throw BadRequest("k must be >= 1");
        const auto snap = snapshot();
        json query;
        std::vector<QueryResult> results;
        if (request.sample_id) {
            const auto& id = *request.sample_id;
            if (snap->index.find(id)) {
                results = query_sample(snap->index, id, request.k);
            } else if (manifest_.contains(id)) {
                const std::vector<std::string> one{id};
                const auto emb = snap->model->forward_eval(cache_->batch(one).images);
                results = xdepict::query(snap->index, emb.data(), request.k);
            } else {
                throw NotFoundError("unknown sample '" + id + "'");
            }
            query = {{"id", id}, {"class", manifest_.find(id).class_name}};
        } else {
            const auto& bytes = *request.image;
            GrayImage img;
            try {
                img = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
            } catch (const Error& e) {
                throw BadRequest(std::string("cannot decode uploaded image: ") + e.what());
            }
            const int size = cache_->target_size();
            const auto plane = to_network_input(img, size);
            const Tensor input(Shape{1, 1, size, size}, plane.values);
            const auto emb = snap->model->forward_eval(input);
            results = xdepict::query(snap->index, emb.data(), request.k);
            query = {{"id", "uploaded"}, {"class", nullptr}};
        }
        json list = json::array();
        for (const auto& r : results) list.push_back(result_json(r));
        return json_response({{"query", query}, {"checkpoint_id", snap->checkpoint_id}, {"results", list}});
    });
}

Response RetrievalService::checkpoints() const {
    const auto current = snapshot();
    json list = json::array();
    for (const auto& e : entries_) {
        list.push_back({{"checkpoint_id", e.id}, {"label", e.label}, {"active", e.id == current->checkpoint_id}});
    }
    return json_response({{"active", current->checkpoint_id}, {"checkpoints", list}});
}

Response RetrievalService::select_checkpoint(std::string_view body) {
    return guarded([&] {
        std::string id;
        try {
            id = json::parse(body).at("checkpoint_id").get<std::string>();
        } catch (const json::exception&) {
            throw BadRequest("body must be {\"checkpoint_id\": \"...\"}");
        }
        const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.id == id; });
        if (it == entries_.end()) throw NotFoundError("unknown checkpoint '" + id + "'");
        std::lock_guard build(select_mutex_);
        if (snapshot()->checkpoint_id != id) {
            auto next = load(*it);
            std::lock_guard lock(mutex_);
            current_ = std::move(next);
        }
        return checkpoints();
    });
}

Response RetrievalService::projection() const {
    const auto snap = snapshot();
    return {200, "text/csv; charset=utf-8", format_projection_table(snap->projection)};
}

void mount_routes(httplib::Server& server, RetrievalService& service) {
    auto send = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server.Get("/api/classes", [&service, send](const httplib::Request&, httplib::Response& res) {
        send(res, service.classes());
    });
    server.Get("/api/samples", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.samples(req.get_param_value("class"), req.get_param_value("style"),
                                  req.get_param_value("split"), req.get_param_value("page"),
                                  req.get_param_value("page_size")));
    });
    server.Get(R"(/api/image/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.image(req.matches[1].str()));
    });
    server.Post("/api/query", [&service, send](const httplib::Request& req, httplib::Response& res) {
        Response out;
        try {
            QueryRequest q;
            if (req.is_multipart_form_data()) {
                if (req.has_file("image")) q.image = req.get_file_value("image").content;
                if (req.has_file("sample_id")) q.sample_id = req.get_file_value("sample_id").content;
                if (req.has_file("k")) q.k = parse_int(req.get_file_value("k").content, 6, "k");
            } else {
                q = parse_query_json(req.body);
            }
            out = service.handle_query_request(q);
        } catch (const BadRequest& e) {
            out = error_response(400, "bad_request", e.what());
        }
        send(res, out);
    });
    server.Get("/api/checkpoints", [&service, send](const httplib::Request&, httplib::Response& res) {
        send(res, service.checkpoints());
    });
    server.Post("/api/checkpoint/select", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.select_checkpoint(req.body));
    });
    server.Get("/api/projection", [&service, send](const httplib::Request&, httplib::Response& res) {
        send(res, service.projection());
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.status == 404 && res.body.empty()) {
            const auto r = error_response(404, "not_found", "no such endpoint");
            res.set_content(r.body, r.content_type);
        }
    });
}

}  // namespace xdepict
