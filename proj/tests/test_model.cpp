#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support/oracles.hpp"
#include "xdepict/container.hpp"
#include "xdepict/model.hpp"

using namespace xdepict;

namespace {

Tensor random_batch(std::uint64_t seed, std::int64_t n, int size = 64) {
    Rng rng(seed);
    return oracle::random_tensor<float>(rng, {n, 1, size, size}, 0.0, 1.0);
}

bool bytes_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

// Closed form: stem conv + BN, then per stage the 3x3 convs, BNs and (when
// the width or resolution changes) the 1x1 projection, then the linear head.
std::int64_t closed_form_count(const ArchConfig& a, std::int64_t head_width) {
    std::int64_t n = 9LL * a.in_channels * a.stage_channels[0] + 2LL * a.stage_channels[0];
    std::int64_t in = a.stage_channels[0];
    for (std::size_t s = 0; s < a.stage_channels.size(); ++s) {
        const std::int64_t c = a.stage_channels[s];
        for (int b = 0; b < a.blocks_per_stage; ++b) {
            n += 9 * in * c + 9 * c * c + 4 * c;
            if (in != c || (s > 0 && b == 0)) n += in * c + 2 * c;
            in = c;
        }
    }
    return n + head_width * in + head_width;
}

ArchConfig tiny_arch() {
    ArchConfig a;
    a.stage_channels = {4, 8};
    a.blocks_per_stage = 1;
    a.num_classes = 3;
    a.embedding_dim = 6;
    a.input_size = 8;
    return a;
}

}  // namespace

TEST_CASE("default classifier has the frozen parameter count") {
    ArchConfig arch;
    ResNet model(arch, HeadKind::classifier, 1);
    CHECK(model.parameter_count() == 174840);
    CHECK(closed_form_count(arch, 8) == 174840);

    ResNet embedder(arch, HeadKind::embedder, 1);
    CHECK(embedder.parameter_count() == closed_form_count(arch, 128));
}

TEST_CASE("head output widths") {
    ArchConfig arch;
    ResNet cls(arch, HeadKind::classifier, 3);
    CHECK(cls.forward_logits(random_batch(1, 3), Mode::train).shape() == Shape{3, 8});
    ResNet emb(arch, HeadKind::embedder, 3);
    CHECK(emb.forward_embedding(random_batch(1, 2), Mode::train).shape() == Shape{2, 128});
    CHECK_THROWS_AS(cls.forward_embedding(random_batch(1, 2), Mode::eval), Error);
    CHECK_THROWS_AS(emb.forward_logits(random_batch(1, 2), Mode::eval), Error);
}

TEST_CASE("wrong input size is rejected") {
    ResNet model(tiny_arch(), HeadKind::classifier, 3);
    CHECK_THROWS_AS(model.forward_eval(random_batch(1, 2, 16)), ShapeError);
}

TEST_CASE("same seed gives bit-identical parameters") {
    ResNet a(tiny_arch(), HeadKind::classifier, 42);
    ResNet b(tiny_arch(), HeadKind::classifier, 42);
    ResNet c(tiny_arch(), HeadKind::classifier, 43);
    auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
    REQUIRE(ta.size() == tb.size());
    bool any_differs = false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].name == tb[i].name);
        CHECK(bytes_equal(ta[i].tensor, tb[i].tensor));
        any_differs |= !bytes_equal(ta[i].tensor, tc[i].tensor);
    }
    CHECK(any_differs);
}

TEST_CASE("He initialization scale") {
    ResNet model(ArchConfig{}, HeadKind::classifier, 5);
    for (const auto& t : model.named_tensors()) {
        if (t.tensor.rank() != 4) continue;
        const double fan_in = static_cast<double>(t.tensor.dim(1) * t.tensor.dim(2) * t.tensor.dim(3));
        if (t.tensor.numel() < 2000) continue;
        double ss = 0.0;
        for (float v : t.tensor.data()) ss += static_cast<double>(v) * v;
        const double sd = std::sqrt(ss / static_cast<double>(t.tensor.numel()));
        CHECK(sd == doctest::Approx(std::sqrt(2.0 / fan_in)).epsilon(0.1));
    }
}

TEST_CASE("eval forward is deterministic and finite") {
    ArchConfig arch;
    ResNet model(arch, HeadKind::classifier, 9);
    auto x = random_batch(4, 3);
    auto a = model.forward_eval(x);
    auto b = model.forward_eval(x);
    CHECK(bytes_equal(a, b));

    auto zeros = model.forward_eval(Tensor(Shape{2, 1, 64, 64}, 0.0f));
    for (float v : zeros.data()) CHECK(std::isfinite(v));

    ResNet emb(arch, HeadKind::embedder, 9);
    Tensor dup(Shape{2, 1, 64, 64});
    auto src = random_batch(6, 1);
    std::copy(src.data().begin(), src.data().end(), dup.data().begin());
    std::copy(src.data().begin(), src.data().end(), dup.data().begin() + 64 * 64);
    auto e = emb.forward_eval(dup);
    CHECK(std::memcmp(e.data().data(), e.data().data() + 128, 128 * sizeof(float)) == 0);
}

TEST_CASE("train-mode forward updates running statistics, eval does not") {
    ResNet model(tiny_arch(), HeadKind::classifier, 2);
    auto before = model.to_checkpoint();
    model.forward_eval(random_batch(1, 4, 8));
    CHECK(bytes_equal(before.find("stem.bn.running_mean")->tensor, model.to_checkpoint().find("stem.bn.running_mean")->tensor));
    model.forward(random_batch(1, 4, 8), Mode::train);
    CHECK_FALSE(bytes_equal(before.find("stem.bn.running_mean")->tensor,
                            model.to_checkpoint().find("stem.bn.running_mean")->tensor));
}

TEST_CASE("residual identity property") {
    Rng rng(7);
    ResidualBlock block(4, 4, 1, rng);
    CHECK_FALSE(block.has_projection());
    for (auto* w : {&block.conv1.weight, &block.conv2.weight}) {
        for (auto& v : w->data()) v = 0.0f;
    }
    Rng xr(8);
    auto x = oracle::random_tensor<float>(xr, {2, 4, 5, 5});
    for (auto mode : {Mode::train, Mode::eval}) {
        auto y = block.forward(x, mode);
        REQUIRE(y.shape() == x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == std::max(0.0f, x.data()[i]));
    }

    Rng rng2(7);
    CHECK(ResidualBlock(4, 8, 2, rng2).has_projection());
}

TEST_CASE("named tensors cover every parameter exactly once") {
    ResNet model(ArchConfig{}, HeadKind::classifier, 1);
    std::set<std::string> names;
    for (const auto& t : model.named_tensors()) CHECK(names.insert(t.name).second);
    CHECK(names.count("stem.conv.weight") == 1);
    CHECK(names.count("stage2.block0.shortcut.conv.weight") == 1);
    CHECK(names.count("stage2.block1.shortcut.conv.weight") == 0);
    CHECK(names.count("stage1.block0.shortcut.conv.weight") == 0);
    CHECK(names.count("classifier.weight") == 1);
}

TEST_CASE("head swap copies the backbone and replaces the head") {
    ArchConfig arch;
    ResNet cls(arch, HeadKind::classifier, 11);
    cls.forward(random_batch(2, 4), Mode::train);  // non-trivial running stats
    auto ckpt = cls.to_checkpoint({3, 0.5, 11});

    auto emb = swap_head_to_embedding(ckpt, arch, 99);
    CHECK(emb.head() == HeadKind::embedder);
    std::set<std::string> src_backbone, dst_backbone;
    for (const auto& t : ckpt.tensors) {
        if (!t.name.starts_with("classifier.")) src_backbone.insert(t.name);
    }
    for (const auto& t : emb.named_tensors()) {
        if (t.name.starts_with("embedding.")) {
            CHECK(ckpt.find(t.name) == nullptr);
            continue;
        }
        dst_backbone.insert(t.name);
        CHECK(bytes_equal(t.tensor, ckpt.find(t.name)->tensor));
    }
    CHECK(src_backbone == dst_backbone);
    CHECK(emb.forward_eval(random_batch(3, 2)).shape() == Shape{2, 128});

    auto again = swap_head_to_embedding(ckpt, arch, 99);
    auto other = swap_head_to_embedding(ckpt, arch, 100);
    auto head = [](const ResNet& m) { return m.to_checkpoint().find("embedding.weight")->tensor; };
    CHECK(bytes_equal(head(emb), head(again)));
    CHECK_FALSE(bytes_equal(head(emb), head(other)));

    ArchConfig wider = arch;
    wider.stage_channels = {16, 32, 96};
    CHECK_THROWS_AS(swap_head_to_embedding(ckpt, wider, 1), FormatError);
    CHECK_THROWS_AS(swap_head_to_embedding(emb.to_checkpoint(), arch, 1), Error);
}

TEST_CASE("checkpoint round trip is bit-identical") {
    ResNet model(tiny_arch(), HeadKind::classifier, 21);
    model.forward(random_batch(3, 4, 8), Mode::train);
    const TrainingMeta meta{7, 0.1234567890123, 21};
    auto ckpt = model.to_checkpoint(meta);
    auto bytes = serialize_checkpoint(ckpt);

    auto path = std::filesystem::temp_directory_path() / "xdepict_test_model" / "model.xdpt";
    save_checkpoint(ckpt, path);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.arch == ckpt.arch);
    CHECK(loaded.head == ckpt.head);
    CHECK(loaded.meta == meta);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].name == ckpt.tensors[i].name);
        CHECK(loaded.tensors[i].trainable == ckpt.tensors[i].trainable);
        CHECK(bytes_equal(loaded.tensors[i].tensor, ckpt.tensors[i].tensor));
    }
    CHECK(serialize_checkpoint(loaded) == bytes);

    auto restored = ResNet::from_checkpoint(loaded);
    auto x = random_batch(4, 2, 8);
    CHECK(bytes_equal(restored.forward_eval(x), model.forward_eval(x)));
    std::filesystem::remove_all(path.parent_path());
}

TEST_CASE("checkpoint container layout") {
    ResNet model(tiny_arch(), HeadKind::embedder, 1);
    auto bytes = serialize_checkpoint(model.to_checkpoint());
    REQUIRE(bytes.size() > 14);
    CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "XDPT1\n");
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | bytes[6 + i];
    std::int64_t floats = 0;
    for (const auto& t : model.named_tensors()) floats += t.tensor.numel();
    CHECK(bytes.size() == 14 + len + static_cast<std::uint64_t>(floats) * 4);
}

TEST_CASE("corrupt checkpoints raise structured errors") {
    ResNet model(tiny_arch(), HeadKind::classifier, 1);
    auto bytes = serialize_checkpoint(model.to_checkpoint());

    SUBCASE("truncated payload names the tensor") {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 8);
        try {
            parse_checkpoint(cut);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatError::Kind::truncated);
            CHECK(e.tensor() == "classifier.bias");
        }
    }
    SUBCASE("truncated header") {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 30);
        CHECK_THROWS_AS(parse_checkpoint(cut), FormatError);
    }
    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[0] = 'Y';
        try {
            parse_checkpoint(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatError::Kind::bad_magic);
        }
    }
    SUBCASE("shape mismatch on load names the tensor") {
        auto ckpt = model.to_checkpoint();
        for (auto& t : ckpt.tensors) {
            if (t.name == "stage2.block0.conv2.weight") t.tensor = Tensor(Shape{8, 8, 1, 1});
        }
        ResNet target(tiny_arch(), HeadKind::classifier, 2);
        try {
            target.load_state(ckpt);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatError::Kind::shape_mismatch);
            CHECK(e.tensor() == "stage2.block0.conv2.weight");
        }
    }
    SUBCASE("different architecture") {
        auto path = std::filesystem::temp_directory_path() / "xdepict_test_model_arch.xdpt";
        write_file(path, bytes);
        ArchConfig other = tiny_arch();
        other.stage_channels = {4, 16};
        try {
            load_checkpoint(path, other);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatError::Kind::arch_mismatch);
        }
        CHECK_NOTHROW(load_checkpoint(path, tiny_arch()));
        std::filesystem::remove(path);
    }
}

TEST_CASE("arch validation") {
    ArchConfig a;
    a.stage_channels = {32, 16};
    CHECK_THROWS_AS(a.validate(), Error);
    a.stage_channels = {};
    CHECK_THROWS_AS(a.validate(), Error);
    ArchConfig b;
    b.embedding_dim = 1;
    CHECK_THROWS_AS(ResNet(b, HeadKind::embedder, 0), Error);
}
