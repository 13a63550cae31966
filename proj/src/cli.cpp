#include "xdepict/cli.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "xdepict/container.hpp"
#include "xdepict/image.hpp"
#include "xdepict/report.hpp"
#include "xdepict/retrieval.hpp"
#include "xdepict/service.hpp"
#include "xdepict/training.hpp"

namespace xdepict {

namespace {

namespace fs = std::filesystem;

struct ArchFlags {
    std::vector<int> channels{16, 32, 64};
    int blocks = 2;
    int input_size = 64;
    int embedding_dim = 128;
    bool normalize = false;

    ArchConfig to_arch(int num_classes) const {
        ArchConfig a;
        a.stage_channels = channels;
        a.blocks_per_stage = blocks;
        a.input_size = input_size;
        a.embedding_dim = embedding_dim;
        a.normalize_embedding = normalize;
        a.num_classes = num_classes;
        return a;
    }
};

void add_arch_flags(CLI::App* sub, ArchFlags& f) {
    sub->add_option("--channels", f.channels, "Channels per stage")->delimiter(',')->capture_default_str();
    sub->add_option("--blocks", f.blocks, "Residual blocks per stage")->capture_default_str();
    sub->add_option("--input-size", f.input_size, "Network input side length")->capture_default_str();
}

void add_train_flags(CLI::App* sub, TrainConfig& c, std::string& policy) {
    sub->add_option("--epochs", c.epochs)->capture_default_str();
    sub->add_option("--lr", c.learning_rate, "SGD learning rate")->capture_default_str();
    sub->add_option("--batch-size", c.batch_size)->capture_default_str();
    sub->add_option("--seed", c.seed)->capture_default_str();
    sub->add_option("--margin", c.margin, "Triplet margin")->capture_default_str();
    sub->add_option("--policy", policy, "Triplet positives: same-instance or same-class")
        ->check(CLI::IsMember({"same-instance", "same-class"}))
        ->capture_default_str();
    sub->add_option("--neg-per-pos", c.neg_per_pos, "Validation negatives per positive pair")->capture_default_str();
}

DatasetManifest open_dataset(const fs::path& dir) {
    const auto path = fs::is_directory(dir) ? dir / "manifest.jsonl" : dir;
    return load_manifest(path);
}

void write_run_config(const CLI::App* sub, const fs::path& path, std::ostream& err) {
    std::string text = "# xdepict " + sub->get_name() + "\n" + sub->config_to_str(true, false);
    try {
        const std::vector<std::uint8_t> bytes(text.begin(), text.end());
        write_file(path, bytes);
    } catch (const Error& e) {
        err << "warning: could not write run config: " << e.what() << "\n";
    }
}

// Prints each report line and appends it to `log`.
EpochCallback epoch_printer(std::ostream& out, const fs::path& log) {
    if (log.has_parent_path()) fs::create_directories(log.parent_path());
    auto stream = std::make_shared<std::ofstream>(log, std::ios::trunc);
    if (!*stream) throw Error("cannot open log file " + log.string());
    return [&out, stream](const EpochReport& r) {
        const auto line = r.to_json();
        out << line << "\n" << std::flush;
        *stream << line << "\n" << std::flush;
    };
}

void print_results(std::ostream& out, const std::vector<QueryResult>& results, bool as_json) {
    if (as_json) {
        auto list = nlohmann::ordered_json::array();
        for (const auto& r : results) {
            list.push_back({{"sample_id", r.sample_id},
                            {"distance", r.distance},
                            {"class", r.class_name},
                            {"instance_id", r.instance_id},
                            {"style", r.style}});
        }
        out << list.dump(2) << "\n";
        return;
    }
    int rank = 1;
    for (const auto& r : results) {
        out << rank++ << '\t' << r.sample_id << '\t' << std::setprecision(9) << r.distance << '\t' << r.class_name
            << '\t' << r.instance_id << '\t' << r.style << '\n';
    }
}

httplib::Server* g_server = nullptr;

extern "C" void stop_server(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-depiction image similarity engine", "xdepict"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic motif corpus");
    GenerateOptions gopt;
    std::string gen_out;
    std::vector<double> ratios{gopt.ratios.train, gopt.ratios.val, gopt.ratios.test};
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--classes", gopt.num_classes)->capture_default_str();
    gen->add_option("--instances", gopt.instances_per_class, "Instances per class")->capture_default_str();
    gen->add_option("--styles", gopt.styles)->delimiter(',')->capture_default_str();
    gen->add_option("--size", gopt.image_size, "Image side length in pixels")->capture_default_str();
    gen->add_option("--seed", gopt.seed)->capture_default_str();
    gen->add_option("--jitter", gopt.jitter, "Control point jitter stddev (unit coords)")->capture_default_str();
    gen->add_option("--split", ratios, "train,val,test ratios")->delimiter(',')->expected(3)->capture_default_str();

    // train-cls
    auto* tcls = app.add_subcommand("train-cls", "Train the classifier");
    ArchFlags cls_arch;
    TrainConfig cls_cfg;
    std::string cls_policy = "same-instance";
    std::string cls_data, cls_out, cls_log;
    tcls->add_option("--data", cls_data, "Dataset directory")->required();
    tcls->add_option("--out", cls_out, "Checkpoint to write")->required();
    tcls->add_option("--log", cls_log, "Epoch log (default <out>.log.jsonl)");
    add_arch_flags(tcls, cls_arch);
    add_train_flags(tcls, cls_cfg, cls_policy);

    // train-emb
    auto* temb = app.add_subcommand("train-emb", "Train the triplet embedder");
    ArchFlags emb_arch;
    TrainConfig emb_cfg;
    std::string emb_policy = "same-instance";
    std::string emb_data, emb_out, emb_log, emb_init = "random";
    temb->add_option("--data", emb_data, "Dataset directory")->required();
    temb->add_option("--out", emb_out, "Checkpoint to write")->required();
    temb->add_option("--init", emb_init, "'random' or a classifier checkpoint")->capture_default_str();
    temb->add_option("--log", emb_log, "Epoch log (default <out>.log.jsonl)");
    temb->add_option("--embedding-dim", emb_arch.embedding_dim)->capture_default_str();
    temb->add_flag("--normalize", emb_arch.normalize, "L2-normalize embeddings");
    add_arch_flags(temb, emb_arch);
    add_train_flags(temb, emb_cfg, emb_policy);

    // eval
    auto* ev = app.add_subcommand("eval", "Report metrics of a checkpoint on a split");
    std::string ev_data, ev_ckpt, ev_split = "test", ev_out, ev_proj;
    int ev_neg = 10;
    std::uint64_t ev_seed = 0;
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    ev->add_option("--out", ev_out, "Write the metrics document here");
    ev->add_option("--projection", ev_proj, "Write the PCA table of the split here (embedders)");
    ev->add_option("--neg-per-pos", ev_neg)->capture_default_str();
    ev->add_option("--pair-seed", ev_seed, "Seed of the negative pair sample")->capture_default_str();

    // index
    auto* ix = app.add_subcommand("index", "Embed a split into a retrieval index");
    std::string ix_data, ix_ckpt, ix_split = "test", ix_out;
    ix->add_option("--data", ix_data, "Dataset directory")->required();
    ix->add_option("--checkpoint", ix_ckpt)->required();
    ix->add_option("--split", ix_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    ix->add_option("--out", ix_out, "Index file to write")->required();

    // query
    auto* qy = app.add_subcommand("query", "Rank index entries against a query");
    std::string q_index, q_id, q_image, q_data, q_ckpt;
    int q_k = 6;
    bool q_json = false;
    qy->add_option("--index", q_index)->required();
    auto* q_id_opt = qy->add_option("--sample-id", q_id, "Query by a sample id");
    auto* q_img_opt = qy->add_option("--image", q_image, "Query by an image file (PNG or PGM)");
    q_id_opt->excludes(q_img_opt);
    qy->add_option("--k", q_k)->capture_default_str();
    qy->add_option("--data", q_data, "Dataset directory (ids outside the index)");
    qy->add_option("--checkpoint", q_ckpt, "Embedder for image queries and ids outside the index");
    qy->add_flag("--json", q_json, "Print JSON instead of a table");

    // serve
    auto* sv = app.add_subcommand("serve", "Run the HTTP retrieval service");
    std::string s_data, s_index, s_split = "test", s_host = "127.0.0.1";
    std::vector<std::string> s_ckpts;
    int s_port = 8080;
    sv->add_option("--data", s_data, "Dataset directory")->required();
    sv->add_option("--checkpoint", s_ckpts, "Embedder checkpoint(s); the first is active")->required();
    sv->add_option("--index", s_index, "Prebuilt index for the first checkpoint");
    sv->add_option("--split", s_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    sv->add_option("--host", s_host)->envname("XDEPICT_HOST")->capture_default_str();
    sv->add_option("--port", s_port)->envname("XDEPICT_PORT")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*gen) {
            if (ratios.size() != 3) throw Error("--split needs three ratios");
            gopt.ratios = {ratios[0], ratios[1], ratios[2]};
            write_run_config(gen, fs::path(gen_out) / "run.toml", err);
            const auto m = generate_dataset(gopt, gen_out);
            out << "wrote " << m.records.size() << " images and manifest.jsonl to " << gen_out << "\n";
            for (Split s : {Split::train, Split::val, Split::test}) {
                out << "  " << to_string(s) << ": " << m.ids(s).size() << "\n";
            }
        } else if (*tcls) {
            write_run_config(tcls, cls_out + ".run.toml", err);
            cls_cfg.positive_policy = parse_positive_policy(cls_policy);
            const auto m = open_dataset(cls_data);
            const auto arch = cls_arch.to_arch(static_cast<int>(m.num_classes()));
            const auto result = train_classifier(m, arch, cls_cfg,
                                                 epoch_printer(out, cls_log.empty() ? cls_out + ".log.jsonl" : cls_log));
            save_checkpoint(result.checkpoint, cls_out);
            out << "saved epoch " << result.best_epoch << " checkpoint to " << cls_out << "\n";
        } else if (*temb) {
            write_run_config(temb, emb_out + ".run.toml", err);
            emb_cfg.positive_policy = parse_positive_policy(emb_policy);
            const auto m = open_dataset(emb_data);
            std::optional<Checkpoint> init;
            auto arch = emb_arch.to_arch(static_cast<int>(m.num_classes()));
            if (emb_init != "random") {
                init = load_checkpoint(emb_init);
                if (init->head != HeadKind::classifier) throw Error("--init must be a classifier checkpoint");
                const int dim = arch.embedding_dim;
                const bool normalize = arch.normalize_embedding;
                arch = init->arch;
                arch.embedding_dim = dim;
                arch.normalize_embedding = normalize;
            }
            const auto result = train_embedder(m, arch, init ? &*init : nullptr, emb_cfg,
                                               epoch_printer(out, emb_log.empty() ? emb_out + ".log.jsonl" : emb_log));
            save_checkpoint(result.checkpoint, emb_out);
            out << "saved epoch " << result.best_epoch << " checkpoint to " << emb_out << "\n";
        } else if (*ev) {
            write_run_config(ev, (ev_out.empty() ? ev_ckpt + ".eval" : ev_out) + ".run.toml", err);
            const auto m = open_dataset(ev_data);
            const auto ckpt = load_checkpoint(ev_ckpt);
            const auto model = ResNet::from_checkpoint(ckpt);
            const ImageCache cache(m, ckpt.arch.input_size);
            const auto split = parse_split(ev_split);
            const auto report = ckpt.head == HeadKind::classifier
                                    ? evaluate_classifier(model, m, cache, split)
                                    : evaluate_embedder(model, m, cache, split, ev_neg, ev_seed);
            const auto doc = report.to_json();
            out << doc << "\n";
            if (!ev_out.empty()) write_file(ev_out, std::vector<std::uint8_t>(doc.begin(), doc.end()));
            if (!ev_proj.empty()) {
                if (ckpt.head != HeadKind::embedder) throw Error("--projection needs an embedder checkpoint");
                const auto idx = build_index(model, m, cache, split, checkpoint_id(ckpt));
                const auto table = format_projection_table(project_index(idx));
                write_file(ev_proj, std::vector<std::uint8_t>(table.begin(), table.end()));
            }
        } else if (*ix) {
            write_run_config(ix, ix_out + ".run.toml", err);
            const auto m = open_dataset(ix_data);
            const auto ckpt = load_checkpoint(ix_ckpt);
            const auto index = build_index(ckpt, m, parse_split(ix_split));
            save_index(index, ix_out);
            out << "indexed " << index.records.size() << " samples (dimension " << index.dimension
                << ", checkpoint " << index.checkpoint_id << ") to " << ix_out << "\n";
        } else if (*qy) {
            write_run_config(qy, q_index + ".query.run.toml", err);
            if (q_id.empty() == q_image.empty()) throw Error("give exactly one of --sample-id or --image");
            const auto index = load_index(q_index);
            if (!q_id.empty() && index.find(q_id)) {
                print_results(out, query_sample(index, q_id, q_k), q_json);
            } else {
                if (q_ckpt.empty()) {
                    throw Error(q_id.empty() ? "--image queries need --checkpoint"
                                             : "sample '" + q_id + "' is not indexed; give --data and --checkpoint");
                }
                const auto ckpt = load_checkpoint(q_ckpt);
                if (checkpoint_id(ckpt) != index.checkpoint_id) {
                    throw Error("--checkpoint does not match the checkpoint the index was built from");
                }
                const auto model = ResNet::from_checkpoint(ckpt);
                GrayImage img;
                if (!q_image.empty()) {
                    img = decode_image(read_file(q_image));
                } else {
                    if (q_data.empty()) throw Error("sample '" + q_id + "' is not indexed; give --data");
                    const auto m = open_dataset(q_data);
                    if (!m.contains(q_id)) throw NotFoundError("unknown sample '" + q_id + "'");
                    img = read_pgm(m.root / m.find(q_id).path);
                }
                const int size = ckpt.arch.input_size;
                const auto plane = to_network_input(img, size);
                const auto emb = model.forward_eval(Tensor(Shape{1, 1, size, size}, plane.values));
                print_results(out, query(index, emb.data(), q_k), q_json);
            }
        } else if (*sv) {
            write_run_config(sv, s_ckpts.front() + ".serve.run.toml", err);
            std::vector<CheckpointSource> sources;
            for (const auto& c : s_ckpts) sources.push_back({c, std::nullopt});
            if (!s_index.empty()) sources.front().index = s_index;
            RetrievalService service(open_dataset(s_data), std::move(sources), parse_split(s_split));
            httplib::Server server;
            // httplib defaults to SO_REUSEPORT, which would share a busy port
            server.set_socket_options([](socket_t sock) {
                int yes = 1;
                setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
            });
            mount_routes(server, service);
            if (!server.bind_to_port(s_host, s_port)) {
                throw Error("cannot listen on " + s_host + ":" + std::to_string(s_port) + " (port busy?)");
            }
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            out << "serving on http://" << s_host << ":" << s_port << " (checkpoint "
                << service.snapshot()->checkpoint_id << ")\n"
                << std::flush;
            server.listen_after_bind();
            g_server = nullptr;
            out << "stopped\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace xdepict
