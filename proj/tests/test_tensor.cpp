#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "support/gradcheck_suite.hpp"
#include "support/oracles.hpp"
#include "xdepict/ops.hpp"
#include "xdepict/optim.hpp"
#include "xdepict/tensor.hpp"

using namespace xdepict;

TEST_CASE("tensor construction enforces the element count") {
    Tensor t(Shape{2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.data()[5] == 1.5f);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{0, 2}), ShapeError);
}

TEST_CASE("clone is independent, copies share storage") {
    Tensor a(Shape{3}, std::vector<float>{1, 2, 3});
    Tensor shared = a;
    Tensor deep = a.clone();
    a.data()[0] = 9;
    CHECK(shared.data()[0] == 9);
    CHECK(deep.data()[0] == 1);
}

TEST_CASE("conv2d identity and overlap counting") {
    SUBCASE("1x1 unit kernel reproduces the input") {
        Tensor x(Shape{1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
        Tensor w(Shape{1, 1, 1, 1}, 1.0f);
        Tensor b(Shape{1}, 0.0f);
        auto y = conv2d(x, w, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 3, 3});
        for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
    }
    SUBCASE("3x3 ones over 5x5 ones with pad 1") {
        Tensor x(Shape{1, 1, 5, 5}, 1.0f);
        Tensor w(Shape{1, 1, 3, 3}, 1.0f);
        Tensor b(Shape{1}, 0.0f);
        auto y = conv2d(x, w, b, 1, 1);
        auto at = [&](int r, int c) { return y.data()[r * 5 + c]; };
        CHECK(at(2, 2) == 9.0f);
        CHECK(at(1, 3) == 9.0f);
        CHECK(at(0, 0) == 4.0f);
        CHECK(at(4, 4) == 4.0f);
        CHECK(at(0, 4) == 4.0f);
        CHECK(at(0, 2) == 6.0f);
    }
    SUBCASE("channel mismatch is rejected with the offending shapes") {
        Tensor x(Shape{1, 2, 4, 4});
        Tensor w(Shape{1, 3, 3, 3});
        try {
            conv2d(x, w, 1, 0);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("2 channels") != std::string::npos);
        }
    }
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 6; ++trial) {
        const int stride = 1 + trial % 2;
        const int pad = trial / 2 % 2;
        auto x = oracle::random_tensor<float>(rng, {2, 3, 8, 8});
        auto w = oracle::random_tensor<float>(rng, {4, 3, 3, 3});
        auto b = oracle::random_tensor<float>(rng, {4});
        auto y = conv2d(x, w, b, stride, pad);
        Shape os;
        auto ref = oracle::conv2d(oracle::to_double(x), x.shape(), oracle::to_double(w), w.shape(),
                                  oracle::to_double(b), stride, pad, os);
        REQUIRE(y.shape() == os);
        CHECK(oracle::normwise_rel_error(oracle::to_double(y), ref) < 1e-5);
        // same kernel in double precision agrees elementwise
        TensorD xd(x.shape(), oracle::to_double(x)), wd(w.shape(), oracle::to_double(w)), bd(b.shape(), oracle::to_double(b));
        CHECK(oracle::max_rel_error(oracle::to_double(conv2d(xd, wd, bd, stride, pad)), ref) < 1e-10);
    }
}

TEST_CASE("conv2d output shape formula holds across a sweep") {
    Rng rng(5);
    for (int stride = 1; stride <= 3; ++stride)
        for (int pad = 0; pad <= 2; ++pad)
            for (int k = 1; k <= 4; ++k)
                for (int extent = 4; extent <= 7; ++extent) {
                    if (k > extent + 2 * pad) continue;
                    Tensor x(Shape{1, 1, extent, extent + 1}, 1.0f);
                    Tensor w(Shape{2, 1, k, k}, 1.0f);
                    auto y = conv2d(x, w, stride, pad);
                    CHECK(y.dim(2) == (extent + 2 * pad - k) / stride + 1);
                    CHECK(y.dim(3) == (extent + 1 + 2 * pad - k) / stride + 1);
                }
    Tensor x(Shape{1, 1, 2, 2});
    Tensor w(Shape{1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, 1, 1), ShapeError);
}

TEST_CASE("batch_norm2d") {
    SUBCASE("constant input normalizes to zero") {
        Tensor x(Shape{2, 2, 3, 3}, 4.0f);
        Tensor g(Shape{2}, 1.0f), b(Shape{2}, 0.0f);
        RunningStats<float> stats;
        auto y = batch_norm2d(x, g, b, stats, Mode::train);
        for (float v : y.data()) CHECK(v == doctest::Approx(0.0f));
        CHECK(stats.recorded());
    }
    SUBCASE("already normalized input passes through") {
        // per-channel values {-1, 1} in equal numbers: mean 0, biased variance 1
        Tensor x(Shape{2, 1, 1, 2}, std::vector<float>{-1, 1, 1, -1});
        Tensor g(Shape{1}, 1.0f), b(Shape{1}, 0.0f);
        RunningStats<float> stats;
        auto y = batch_norm2d(x, g, b, stats, Mode::train);
        for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));
    }
    SUBCASE("random batch matches per-channel statistics oracle") {
        Rng rng(3);
        auto x = oracle::random_tensor<float>(rng, {4, 3, 5, 5}, -2.0, 3.0);
        auto g = oracle::random_tensor<float>(rng, {3}, 0.5, 1.5);
        auto b = oracle::random_tensor<float>(rng, {3});
        RunningStats<float> stats;
        auto y = batch_norm2d(x, g, b, stats, Mode::train);
        auto ref = oracle::batch_norm_train(oracle::to_double(x), x.shape(), oracle::to_double(g),
                                            oracle::to_double(b), 1e-5);
        CHECK(oracle::normwise_rel_error(oracle::to_double(y), ref) < 1e-5);
    }
    SUBCASE("running stats follow an exponential moving average") {
        Tensor x(Shape{2, 1, 1, 1}, std::vector<float>{1, 3});
        Tensor g(Shape{1}, 1.0f), b(Shape{1}, 0.0f);
        RunningStats<float> stats;
        batch_norm2d(x, g, b, stats, Mode::train);
        CHECK(stats.mean.item() == doctest::Approx(0.2));   // 0.9*0 + 0.1*2
        CHECK(stats.var.item() == doctest::Approx(1.1));    // 0.9*1 + 0.1*2 (unbiased)
    }
    SUBCASE("eval before any statistics is an error") {
        Tensor x(Shape{1, 1, 2, 2}, 1.0f);
        Tensor g(Shape{1}, 1.0f), b(Shape{1}, 0.0f);
        RunningStats<float> stats;
        CHECK_THROWS_AS(batch_norm2d(x, g, b, stats, Mode::eval), Error);
    }
    SUBCASE("train mode needs two values per channel") {
        Tensor x(Shape{1, 1, 1, 1}, 1.0f);
        Tensor g(Shape{1}, 1.0f), b(Shape{1}, 0.0f);
        RunningStats<float> stats;
        CHECK_THROWS_AS(batch_norm2d(x, g, b, stats, Mode::train), ShapeError);
    }
}

TEST_CASE("relu forward and subgradient") {
    Tensor x(Shape{3}, std::vector<float>{-1, 0, 2});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);

    Tensor neg(Shape{2, 2}, -3.0f);
    auto zeros = relu(neg);
    for (float v : zeros.data()) CHECK(v == 0.0f);

    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tensor p(Shape{3}, std::vector<float>{-1, 1, 0});
    p.set_requires_grad(true);
    backward(sum(relu(p)));
    CHECK(p.grad()[0] == 0.0f);
    CHECK(p.grad()[1] == 1.0f);
    CHECK(p.grad()[2] == 0.0f);  // subgradient at 0
}

TEST_CASE("linear") {
    SUBCASE("identity weight") {
        Tensor x(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
        Tensor w(Shape{3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
        Tensor b(Shape{3}, 0.0f);
        auto y = linear(x, w, b);
        for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);
    }
    SUBCASE("zero weight yields the bias on every row") {
        Tensor x(Shape{4, 2}, 7.0f);
        Tensor w(Shape{3, 2}, 0.0f);
        Tensor b(Shape{3}, std::vector<float>{1, -2, 3});
        auto y = linear(x, w, b);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) CHECK(y.data()[i * 3 + j] == b.data()[j]);
    }
    SUBCASE("random case matches naive matmul") {
        Rng rng(9);
        auto x = oracle::random_tensor<float>(rng, {7, 13});
        auto w = oracle::random_tensor<float>(rng, {5, 13});
        auto b = oracle::random_tensor<float>(rng, {5});
        auto ref = oracle::linear(oracle::to_double(x), 7, 13, oracle::to_double(w), 5, oracle::to_double(b));
        CHECK(oracle::normwise_rel_error(oracle::to_double(linear(x, w, b)), ref) < 1e-5);
    }
    SUBCASE("feature mismatch is rejected") {
        CHECK_THROWS_AS(linear(Tensor(Shape{2, 3}), Tensor(Shape{4, 2}), Tensor(Shape{4})), ShapeError);
    }
}

TEST_CASE("global_avg_pool") {
    Tensor c(Shape{2, 3, 4, 4}, 2.5f);
    auto pooled = global_avg_pool(c);
    for (float v : pooled.data()) CHECK(v == 2.5f);
    Tensor p(Shape{1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
    CHECK(global_avg_pool(p).item() == 1.5f);

    Rng rng(4);
    auto x = oracle::random_tensor<float>(rng, {3, 2, 5, 6});
    auto y = global_avg_pool(x);
    for (int nc = 0; nc < 6; ++nc) {
        double s = 0.0;
        for (int j = 0; j < 30; ++j) s += x.data()[nc * 30 + j];
        CHECK(y.data()[nc] == doctest::Approx(s / 30.0).epsilon(1e-6));
    }
}

TEST_CASE("weighted_cross_entropy") {
    SUBCASE("uniform logits give ln K") {
        Tensor z(Shape{3, 4}, 0.0f);
        std::vector<std::int64_t> t{0, 1, 3};
        Tensor w(Shape{4}, 1.0f);
        CHECK(weighted_cross_entropy(z, t, w).item() == doctest::Approx(std::log(4.0)));
    }
    SUBCASE("saturated correct logit gives ~0 without overflow") {
        Tensor z(Shape{1, 3}, std::vector<float>{1000, 0, 0});
        std::vector<std::int64_t> t{0};
        Tensor w(Shape{3}, 1.0f);
        const float loss = weighted_cross_entropy(z, t, w).item();
        CHECK(std::isfinite(loss));
        CHECK(loss == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("weighted mixed batch matches per-sample enumeration") {
        Tensor z(Shape{4, 3}, std::vector<float>{2, 0, -1, 0.5f, 0.5f, 0, -1, 3, 1, 0, 0, 0});
        std::vector<std::int64_t> t{0, 1, 2, 2};
        Tensor w(Shape{3}, std::vector<float>{4.0f / 3, 2.0f / 3, 4.0f / 3});
        double expected = 0.0;
        for (int i = 0; i < 4; ++i) {
            double denom = 0.0;
            for (int j = 0; j < 3; ++j) denom += std::exp(static_cast<double>(z.data()[i * 3 + j]));
            const double p = std::exp(static_cast<double>(z.data()[i * 3 + t[i]])) / denom;
            expected += w.data()[t[i]] * -std::log(p);
        }
        expected /= 4.0;
        CHECK(weighted_cross_entropy(z, t, w).item() == doctest::Approx(expected).epsilon(1e-6));
    }
    SUBCASE("out-of-range target") {
        Tensor z(Shape{1, 3}, 0.0f);
        std::vector<std::int64_t> t{3};
        CHECK_THROWS_AS(weighted_cross_entropy(z, t, Tensor(Shape{3}, 1.0f)), Error);
    }
}

TEST_CASE("backward basics") {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    SUBCASE("grad of sum is ones") {
        Tensor x(Shape{2, 3, 2}, 0.3f);
        x.set_requires_grad(true);
        backward(sum(x));
        for (float g : x.grad()) CHECK(g == 1.0f);
    }
    SUBCASE("grad of sum(x*x)") {
        Tensor x(Shape{2}, std::vector<float>{1, 2});
        x.set_requires_grad(true);
        backward(sum(mul(x, x)));
        CHECK(x.grad()[0] == 2.0f);
        CHECK(x.grad()[1] == 4.0f);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x(Shape{2}, 1.0f);
        x.set_requires_grad(true);
        CHECK_THROWS_AS(backward(relu(x)), ShapeError);
    }
    SUBCASE("gradients accumulate until zeroed") {
        Tensor x(Shape{2}, 1.0f);
        x.set_requires_grad(true);
        backward(sum(x));
        backward(sum(x));
        CHECK(x.grad()[0] == 2.0f);
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0f);
    }
}

TEST_CASE("tape records in topological order and replays in reverse") {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tensor x(Shape{2}, 1.0f);
    x.set_requires_grad(true);
    auto a = scale(x, 2.0f);
    auto b = relu(a);
    auto c = sum(b);
    auto names = tape.op_names();
    REQUIRE(names.size() == 3);
    CHECK(names[0] == "scale");
    CHECK(names[1] == "relu");
    CHECK(names[2] == "sum");
    tape.backward(c);
    CHECK(x.grad()[0] == 2.0f);
}

TEST_CASE("no recording without an active tape or grad-requiring input") {
    Tape<float> tape;
    Tensor x(Shape{2}, 1.0f);
    x.set_requires_grad(true);
    relu(x);  // no scope
    CHECK(tape.size() == 0);
    TapeScope<float> scope(tape);
    relu(Tensor(Shape{2}, 1.0f));  // nothing requires grad
    CHECK(tape.size() == 0);
    relu(x);
    CHECK(tape.size() == 1);
}

TEST_CASE("finite-difference gradient checks for every op") {
    for (const auto& c : oracle::gradcheck_cases()) {
        Rng rng(derive_seed(2024, {std::hash<std::string>{}(c.name) & 0xffff}));
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, c.trial(rng));
        INFO(c.name << " worst relative error " << worst);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("linearity: backward through a sum of graphs adds gradients") {
    Rng rng(21);
    auto x = oracle::random_tensor<double>(rng, {3, 4});
    auto w = oracle::random_tensor<double>(rng, {2, 4});
    auto b = oracle::random_tensor<double>(rng, {2});
    auto grad_of = [&](int which) {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        auto xc = x.clone();
        xc.set_requires_grad(true);
        auto f = sum(relu(linear(xc, w, b)));
        auto g = sum(mul(xc, xc));
        auto loss = which == 0 ? f : which == 1 ? g : add(f, g);
        tape.backward(loss);
        auto gr = xc.grad();
        return std::vector<double>(gr.begin(), gr.end());
    };
    auto gf = grad_of(0), gg = grad_of(1), gsum = grad_of(2);
    for (std::size_t i = 0; i < gsum.size(); ++i) CHECK(gsum[i] == doctest::Approx(gf[i] + gg[i]));
}

TEST_CASE("identical inputs give bit-identical outputs and gradients") {
    auto run = [] {
        Rng rng(77);
        auto x = oracle::random_tensor<float>(rng, {4, 2, 6, 6});
        auto w = oracle::random_tensor<float>(rng, {3, 2, 3, 3});
        w.set_requires_grad(true);
        auto g = Tensor(Shape{3}, 1.0f).set_requires_grad(true);
        auto be = Tensor(Shape{3}, 0.0f).set_requires_grad(true);
        RunningStats<float> stats;
        Tape<float> tape;
        TapeScope<float> scope(tape);
        auto y = global_avg_pool(relu(batch_norm2d(conv2d(x, w, 2, 1), g, be, stats, Mode::train)));
        auto loss = sum(mul(y, y));
        tape.backward(loss);
        std::vector<float> out(y.data().begin(), y.data().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("sgd_step") {
    SUBCASE("single update") {
        std::vector<Tensor> params{Tensor(Shape{1}, 1.0f)};
        params[0].grad_buffer()[0] = 0.5f;
        sgd_step(params, 0.01f);
        CHECK(params[0].item() == doctest::Approx(0.995f));
        CHECK(params[0].grad()[0] == 0.0f);
    }
    SUBCASE("zero gradient leaves the parameter unchanged") {
        std::vector<Tensor> params{Tensor(Shape{2}, 3.0f)};
        params[0].grad_buffer();
        sgd_step(params, 0.1f);
        CHECK(params[0].data()[0] == 3.0f);
    }
    SUBCASE("missing gradient is an error") {
        std::vector<Tensor> params{Tensor(Shape{1}, 1.0f)};
        CHECK_THROWS_AS(sgd_step(params, 0.1f), Error);
    }
    SUBCASE("two steps on a quadratic decrease the loss monotonically") {
        // loss(p) = (p - 3)^2, oracle value evaluated directly
        auto loss_at = [](float p) { return (p - 3.0f) * (p - 3.0f); };
        std::vector<Tensor> params{Tensor(Shape{1}, 0.0f).set_requires_grad(true)};
        Tensor target(Shape{1}, 3.0f);
        float previous = loss_at(params[0].item());
        for (int step = 0; step < 2; ++step) {
            Tape<float> tape;
            TapeScope<float> scope(tape);
            auto d = sub(params[0], target);
            tape.backward(sum(mul(d, d)));
            sgd_step(params, 0.1f);
            const float now = loss_at(params[0].item());
            CHECK(now < previous);
            previous = now;
        }
    }
}
