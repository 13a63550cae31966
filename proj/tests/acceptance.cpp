// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Progress goes to stderr.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "support/gradcheck_suite.hpp"
#include "support/metric_oracles.hpp"
#include "support/oracles.hpp"
#include "xdepict/cli.hpp"
#include "xdepict/container.hpp"
#include "xdepict/inference.hpp"
#include "xdepict/report.hpp"
#include "xdepict/service.hpp"
#include "xdepict/training.hpp"

using namespace xdepict;
using nlohmann::ordered_json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
    fs::path work = "acceptance_work";
    int cls_epochs = 30;
    int cls_batch = 8;
    int emb_epochs = 10;
    int emb_batch = 32;
    double margin = 10.0;
    int seeds = 3;
    std::uint64_t pair_seed = 99;
};

struct Outcome {
    std::string name;
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EpochCallback progress(std::string tag) {
    return [tag = std::move(tag)](const EpochReport& r) { std::cerr << tag << ' ' << r.to_json() << std::endl; };
}

double accuracy_on(const ResNet& model, const DatasetManifest& m, const ImageCache& cache, Split split) {
    return *evaluate_classifier(model, m, cache, split).accuracy;
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
    files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        if (rel == "run.toml") continue;
        if (!fs::exists(b / rel) || read_file(e.path()) != read_file(b / rel)) return false;
        ++files;
    }
    return true;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_op;
    std::size_t trials = 0, ops = 0;
    for (const auto& c : oracle::gradcheck_cases()) {
        Rng rng(derive_seed(7001, {std::hash<std::string>{}(c.name) & 0xffff}));
        for (int t = 0; t < 20; ++t, ++trials) {
            const double e = c.trial(rng);
            if (!(e <= worst)) {
                worst = e;
                worst_op = c.name;
            }
        }
        ++ops;
    }
    const double secs = seconds_since(t0);
    return {"gradient correctness", worst < 1e-3 && secs < 60.0,
            std::to_string(ops) + " ops x 20 trials, worst rel err " + fmt(worst, 6) + " (" + worst_op + "), " +
                fmt(secs, 2) + " s"};
}

Outcome oracle_equivalence() {
    Rng rng(7002);
    double conv_err = 0.0, lin_err = 0.0, bn_err = 0.0;
    for (int trial = 0; trial < 12; ++trial) {
        const int stride = 1 + trial % 2, pad = trial / 2 % 2;
        auto x = oracle::random_tensor<float>(rng, {2, 3, 9, 9});
        auto w = oracle::random_tensor<float>(rng, {4, 3, 3, 3});
        auto b = oracle::random_tensor<float>(rng, {4});
        Shape os;
        const auto ref = oracle::conv2d(oracle::to_double(x), x.shape(), oracle::to_double(w), w.shape(),
                                        oracle::to_double(b), stride, pad, os);
        conv_err = std::max(conv_err, oracle::normwise_rel_error(oracle::to_double(conv2d(x, w, b, stride, pad)), ref));

        auto lx = oracle::random_tensor<float>(rng, {6, 11});
        auto lw = oracle::random_tensor<float>(rng, {5, 11});
        auto lb = oracle::random_tensor<float>(rng, {5});
        const auto lref = oracle::linear(oracle::to_double(lx), 6, 11, oracle::to_double(lw), 5, oracle::to_double(lb));
        lin_err = std::max(lin_err, oracle::normwise_rel_error(oracle::to_double(linear(lx, lw, lb)), lref));

        auto bx = oracle::random_tensor<float>(rng, {4, 3, 5, 5}, -2.0, 3.0);
        auto g = oracle::random_tensor<float>(rng, {3}, 0.5, 1.5);
        auto beta = oracle::random_tensor<float>(rng, {3});
        RunningStats<float> stats;
        const auto bref = oracle::batch_norm_train(oracle::to_double(bx), bx.shape(), oracle::to_double(g),
                                                   oracle::to_double(beta), 1e-5);
        bn_err = std::max(bn_err,
                          oracle::normwise_rel_error(oracle::to_double(batch_norm2d(bx, g, beta, stats, Mode::train)), bref));
    }

    int fpr_mismatch = 0;
    for (int t = 0; t < 100; ++t) {
        const auto set = oracle::random_pair_set(rng);
        if (fpr95(set) != oracle::fpr95_scan(set)) ++fpr_mismatch;
    }

    int knn_mismatch = 0;
    for (int t = 0; t < 100; ++t) {
        const auto idx = oracle::random_index(rng, 1 + static_cast<int>(rng.below(80)), 1 + static_cast<int>(rng.below(5)));
        std::vector<float> q;
        for (int j = 0; j < idx.dimension; ++j) q.push_back(static_cast<float>(rng.below(4)));
        const int k = 1 + static_cast<int>(rng.below(12));
        const std::string exclude = t % 2 ? idx.records.front().sample_id : std::string();
        const auto got = exclude.empty() ? query(idx, q, k) : query(idx, q, k, exclude);
        const auto want = oracle::knn_scan(idx, q, k, exclude);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].sample_id == want[i].first && got[i].distance == want[i].second;
        }
        knn_mismatch += !same;
    }
    const bool pass = conv_err < 1e-5 && lin_err < 1e-5 && bn_err < 1e-5 && fpr_mismatch == 0 && knn_mismatch == 0;
    return {"oracle equivalence", pass,
            "conv2d " + fmt(conv_err * 1e6, 3) + "e-6, linear " + fmt(lin_err * 1e6, 3) + "e-6, batch_norm2d " +
                fmt(bn_err * 1e6, 3) + "e-6; fpr95 mismatches " + std::to_string(fpr_mismatch) +
                "/100; knn mismatches " + std::to_string(knn_mismatch) + "/100"};
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"xdepict acceptance run"};
    app.add_option("--work", opt.work, "Scratch directory")->capture_default_str();
    app.add_option("--cls-epochs", opt.cls_epochs)->capture_default_str();
    app.add_option("--cls-batch", opt.cls_batch)->capture_default_str();
    app.add_option("--emb-epochs", opt.emb_epochs)->capture_default_str();
    app.add_option("--emb-batch", opt.emb_batch)->capture_default_str();
    app.add_option("--margin", opt.margin, "Triplet margin for every embedder")->capture_default_str();
    app.add_option("--seeds", opt.seeds)->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    std::vector<Outcome> outcomes;
    ordered_json summary;
    auto report = [&](Outcome o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << o.name << ": " << o.detail << std::endl;
        summary["criteria"].push_back({{"name", o.name}, {"pass", o.pass}, {"detail", o.detail}});
        outcomes.push_back(std::move(o));
    };
    auto guarded = [&](const std::string& name, auto&& body) {
        try {
            body();
        } catch (const std::exception& e) {
            report({name, false, std::string("exception: ") + e.what()});
        }
    };

    fs::remove_all(opt.work);
    fs::create_directories(opt.work);
    const auto corpus = opt.work / "corpus";

    report(gradient_suite());
    report(oracle_equivalence());

    // Default corpus, classifier desk run.
    GenerateOptions gen;
    std::cerr << "generating default corpus\n";
    const auto manifest = generate_dataset(gen, corpus);
    const ImageCache cache(manifest, ArchConfig{}.input_size);
    std::optional<TrainResult> cls;
    guarded("classification desk run", [&] {
        ArchConfig arch;
        arch.num_classes = static_cast<int>(manifest.num_classes());
        TrainConfig cfg;
        cfg.epochs = opt.cls_epochs;
        cfg.batch_size = opt.cls_batch;
        cfg.learning_rate = 0.01;
        const auto t0 = Clock::now();
        cls = train_classifier(manifest, cache, arch, cfg, progress("cls"));
        const double secs = seconds_since(t0);
        save_checkpoint(cls->checkpoint, opt.work / "cls.ckpt");
        const auto best = ResNet::from_checkpoint(cls->checkpoint);
        const auto last = ResNet::from_checkpoint(cls->last);
        const double test_acc = accuracy_on(best, manifest, cache, Split::test);
        const double train_best = accuracy_on(best, manifest, cache, Split::train);
        const double train_last = accuracy_on(last, manifest, cache, Split::train);
        const double train_acc = std::max(train_best, train_last);
        const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
        summary["classifier"] = {{"epochs", cfg.epochs},     {"batch_size", cfg.batch_size}, {"best_epoch", cls->best_epoch},
                                 {"test_accuracy", test_acc}, {"train_accuracy_best", train_best},
                                 {"train_accuracy_last", train_last}, {"seconds", secs}, {"cores", cores}};
        report({"classification desk run", test_acc >= 0.90 && train_acc >= 0.99 && secs <= 900.0,
                "test acc " + fmt(test_acc) + " (>= 0.90), train acc " + fmt(train_acc) + " (>= 0.99), " +
                    std::to_string(cfg.epochs) + " epochs at batch " + std::to_string(cfg.batch_size) + ", best epoch " +
                    std::to_string(cls->best_epoch) + ", " + fmt(secs / 60.0, 1) + " min on " + std::to_string(cores) +
                    " core(s) (<= 15)"});
    });

    // Pretrained vs random-init embedders over several seeds.
    std::optional<Checkpoint> retrieval_model;
    guarded("pretrained vs random init FPR95", [&] {
        if (!cls) throw Error("no classifier checkpoint");
        std::vector<double> pre, rnd, ratios;
        for (int s = 1; s <= opt.seeds; ++s) {
            TrainConfig cfg;
            cfg.epochs = opt.emb_epochs;
            cfg.batch_size = opt.emb_batch;
            cfg.seed = static_cast<std::uint64_t>(s);
            cfg.margin = opt.margin;
            ArchConfig arch = cls->checkpoint.arch;
            for (bool pretrained : {true, false}) {
                const auto tag = std::string(pretrained ? "pre" : "rnd") + std::to_string(s);
                const auto r = train_embedder(manifest, cache, arch, pretrained ? &cls->checkpoint : nullptr, cfg,
                                              progress(tag));
                const auto model = ResNet::from_checkpoint(r.checkpoint);
                const auto m = evaluate_embedder(model, manifest, cache, Split::test, cfg.neg_per_pos, opt.pair_seed);
                (pretrained ? pre : rnd).push_back(*m.fpr95);
                summary["embedders"].push_back({{"init", pretrained ? "classifier" : "random"},
                                                {"seed", s},
                                                {"best_epoch", r.best_epoch},
                                                {"test_fpr95", *m.fpr95},
                                                {"top3_hit_rate", *m.top3_hit_rate},
                                                {"precision_at_6", m.precision_at_k.at(6)}});
                std::cerr << tag << " test fpr95 " << *m.fpr95 << " top3 " << *m.top3_hit_rate << " p@6 "
                          << m.precision_at_k.at(6) << std::endl;
                if (pretrained && s == 1) {
                    retrieval_model = r.checkpoint;
                    save_checkpoint(r.checkpoint, opt.work / "emb.ckpt");
                }
            }
            ratios.push_back(rnd.back() > 0.0 ? pre.back() / rnd.back() : 1.0);
        }
        const double med_pre = median(pre), med_rnd = median(rnd), med_ratio = median(ratios);
        std::string per_seed;
        for (std::size_t i = 0; i < pre.size(); ++i) {
            per_seed += (i ? ", " : "") + fmt(pre[i], 3) + "/" + fmt(rnd[i], 3);
        }
        report({"pretrained vs random init FPR95", med_pre < med_rnd && med_ratio <= 0.8,
                "median FPR95 pretrained " + fmt(med_pre) + " vs random " + fmt(med_rnd) + ", median ratio " +
                    fmt(med_ratio, 3) + " (<= 0.8); per seed pre/rnd " + per_seed + "; " +
                    std::to_string(opt.emb_epochs) + " epochs, margin " + fmt(opt.margin, 1)});
    });

    // Retrieval quality of the seed-1 pretrained embedder on the test split.
    std::optional<EmbeddingIndex> test_index;
    guarded("cross-depiction retrieval", [&] {
        if (!retrieval_model) throw Error("no embedder checkpoint");
        test_index = build_index(*retrieval_model, manifest, Split::test);
        const auto s = score_retrieval(*test_index, 6, 3);
        summary["retrieval"] = {{"top3_hit_rate", s.top_k_hit_rate},
                                {"precision_at_6", s.mean_precision_at_k},
                                {"queries", s.queries}};
        report({"cross-depiction retrieval", s.top_k_hit_rate >= 0.70 && s.mean_precision_at_k >= 0.80,
                "top-3 alternate-depiction hit rate " + fmt(s.top_k_hit_rate) + " (>= 0.70), mean P@6 " +
                    fmt(s.mean_precision_at_k) + " (>= 0.80) over " + std::to_string(s.queries) + " test queries"});
    });

    guarded("determinism and persistence", [&] {
        std::vector<std::string> failures;
        std::size_t files = 0;
        const auto corpus2 = opt.work / "corpus_again";
        generate_dataset(gen, corpus2);
        if (!same_tree(corpus, corpus2, files) || files != manifest.records.size() + 1) {
            failures.push_back("dataset bytes differ");
        }

        // epoch-1 loss twice with one seed
        ArchConfig arch;
        arch.num_classes = static_cast<int>(manifest.num_classes());
        TrainConfig one;
        one.epochs = 1;
        one.batch_size = opt.cls_batch;
        const auto a = train_classifier(manifest, cache, arch, one);
        double first_loss = a.reports.front().loss;
        if (cls) {
            if (cls->reports.front().loss != first_loss) failures.push_back("epoch-1 loss differs from the desk run");
        } else {
            const auto b = train_classifier(manifest, cache, arch, one);
            if (b.reports.front().loss != first_loss) failures.push_back("epoch-1 loss differs");
        }

        const Checkpoint& ckpt = retrieval_model ? *retrieval_model : a.checkpoint;
        const auto ckpt_path = opt.work / "roundtrip.ckpt";
        save_checkpoint(ckpt, ckpt_path);
        if (serialize_checkpoint(load_checkpoint(ckpt_path)) != read_file(ckpt_path)) {
            failures.push_back("checkpoint round trip");
        }

        std::size_t compared = 0;
        if (retrieval_model) {
            const auto index = test_index ? *test_index : build_index(*retrieval_model, manifest, Split::test);
            const auto idx_path = opt.work / "test.idx";
            save_index(index, idx_path);
            if (serialize_index(load_index(idx_path)) != read_file(idx_path)) failures.push_back("index round trip");

            const RetrievalService service(manifest, {{ckpt_path, idx_path}});
            for (const auto& rec : index.records) {
                std::vector<std::string> args{"xdepict", "query", "--index", idx_path.string(), "--sample-id",
                                              rec.sample_id, "--k", "6", "--json"};
                std::vector<const char*> argv_c;
                for (const auto& s : args) argv_c.push_back(s.c_str());
                std::ostringstream out, err;
                if (run_cli(static_cast<int>(argv_c.size()), argv_c.data(), out, err) != 0) {
                    failures.push_back("CLI query failed: " + err.str());
                    break;
                }
                QueryRequest q;
                q.sample_id = rec.sample_id;
                const auto doc = nlohmann::json::parse(service.handle_query_request(q).body);
                const auto cli_rows = nlohmann::json::parse(out.str());
                bool same = cli_rows.size() == doc.at("results").size();
                for (std::size_t i = 0; same && i < cli_rows.size(); ++i) {
                    same = cli_rows[i].at("sample_id") == doc.at("results")[i].at("sample_id") &&
                           cli_rows[i].at("distance") == doc.at("results")[i].at("distance");
                }
                if (!same) {
                    failures.push_back("CLI and service rankings differ for " + rec.sample_id);
                    break;
                }
                ++compared;
            }
        } else {
            failures.push_back("no embedder to test index persistence and CLI/service parity");
        }
        std::string detail = std::to_string(files) + " corpus files identical, epoch-1 loss " + fmt(first_loss, 6) +
                             ", checkpoint and index round trips, CLI = service on " + std::to_string(compared) +
                             " queries";
        for (const auto& f : failures) detail += "; " + f;
        report({"determinism and persistence", failures.empty(), detail});
    });

    int failed = 0;
    for (const auto& o : outcomes) failed += !o.pass;
    summary["passed"] = outcomes.size() - static_cast<std::size_t>(failed);
    summary["failed"] = failed;
    const auto text = summary.dump(2);
    write_file(opt.work / "acceptance_report.json", std::vector<std::uint8_t>(text.begin(), text.end()));
    std::cout << outcomes.size() - static_cast<std::size_t>(failed) << "/" << outcomes.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
