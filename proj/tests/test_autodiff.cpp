#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "erode/erosion.hpp"
#include "erode/graph.hpp"
#include "erode/model.hpp"
#include "erode/rng.hpp"

using namespace erode;

namespace {

// Scale-relative comparison for gradient vectors.
double rel_error(const Tensor& got, const Tensor& want) {
    const double denom = std::max(1e-12, (std::max)(linf_distance(want, Tensor(want.shape())), 1e-12));
    return linf_distance(got, want) / denom;
}

}  // namespace

TEST_CASE("dense_forward spec examples") {
    CHECK(bit_equal(dense_forward(Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})),
                    Tensor({1, 2}, {1, 2})));
    Tensor out = dense_forward(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}), Tensor({1}, {1}));
    CHECK(out[0] == doctest::Approx(12.0));
    CHECK(bit_equal(dense_forward(Tensor({1, 2}), Tensor({2, 2}, {9, 9, 9, 9}), Tensor({2}, {5, -5})),
                    Tensor({1, 2}, {5, -5})));
}

TEST_CASE("dense_forward names the offending axis") {
    try {
        dense_forward(Tensor({1, 3}), Tensor({2, 1}), Tensor({1}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
    CHECK_THROWS_AS(dense_forward(Tensor({1, 2}), Tensor({2, 3}), Tensor({2})), DimensionError);
}

TEST_CASE("conv2d_forward spec examples") {
    // Delta kernel reproduces the input.
    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor delta({1, 1, 3, 3});
    delta[4] = 1.0;
    CHECK(bit_equal(conv2d_forward(x, delta, Tensor({1})), x));

    // All-ones 2x2 input with an all-ones 3x3 kernel: every zero-padded
    // window covers all four ones.
    Tensor ones({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor kernel = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor out = conv2d_forward(ones, kernel, Tensor({1}));
    for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(4.0));

    // Zero kernel passes the bias through.
    CHECK(bit_equal(conv2d_forward(x, Tensor({1, 1, 3, 3}), Tensor({1}, {2.5})),
                    Tensor::full({1, 1, 3, 3}, 2.5)));
}

TEST_CASE("conv2d_forward rejects bad configurations") {
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 3, 3}), Tensor({1, 1, 2, 2}), Tensor({1})), ConfigError);
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 2, 3, 3}), Tensor({1, 1, 3, 3}), Tensor({1})),
                    DimensionError);
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 3, 3}), Tensor({2, 1, 3, 3}), Tensor({1})),
                    DimensionError);
}

TEST_CASE("relu spec examples") {
    CHECK(bit_equal(relu(Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2})));
    Tensor pos({3}, {0.5, 1, 2});
    CHECK(bit_equal(relu(pos), pos));

    Tape t;
    Value x = t.input(Tensor({2}, {-1, 3}));
    Value loss = t.sum(t.relu(x));
    CHECK(bit_equal(t.backward(loss).at(x), Tensor({2}, {0, 1})));
}

TEST_CASE("relu subgradient at zero is zero") {
    Tape t;
    Value x = t.input(Tensor({3}, {-1, 0, 1}));
    Value loss = t.sum(t.relu(x));
    CHECK(bit_equal(t.backward(loss).at(x), Tensor({3}, {0, 0, 1})));
}

TEST_CASE("cross_entropy_from_logits spec examples") {
    CHECK(cross_entropy_from_logits(Tensor({1, 2}), {0})[0] == doctest::Approx(std::log(2.0)));
    CHECK(cross_entropy_from_logits(Tensor({1, 4}), {2})[0] == doctest::Approx(std::log(4.0)));
    CHECK(cross_entropy_from_logits(Tensor({1, 2}, {10, 0}), {0})[0] ==
          doctest::Approx(std::log(1.0 + std::exp(-10.0))));
    CHECK_THROWS_AS(cross_entropy_from_logits(Tensor({1, 2}), {2}), IndexError);
    CHECK_THROWS_AS(cross_entropy_from_logits(Tensor({1, 2}), {-1}), IndexError);
}

TEST_CASE("cross entropy is invariant to per-row logit shifts") {
    Tensor logits({2, 3}, {1.0, -2.0, 0.5, 3.0, 3.0, -1.0});
    Tensor shifted = logits;
    for (int c = 0; c < 3; ++c) {
        shifted[c] += 1234.5;
        shifted[3 + c] -= 987.0;
    }
    const double a = cross_entropy_from_logits(logits, {1, 0})[0];
    const double b = cross_entropy_from_logits(shifted, {1, 0})[0];
    CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("cross entropy stays finite for extreme logits") {
    Tensor logits({1, 2}, {1000.0, -1000.0});
    Tensor loss = cross_entropy_from_logits(logits, {1});
    CHECK(std::isfinite(loss[0]));

    Tape t;
    Value l = t.input(logits);
    Gradients g = t.backward(t.cross_entropy(l, {1}));
    CHECK(g.at(l).all_finite());
}

TEST_CASE("backward spec examples") {
    {
        Tape t;
        Value x = t.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Gradients g = t.backward(t.sum(x));
        CHECK(bit_equal(g.at(x), Tensor::full({2, 3}, 1.0)));
    }
    {
        Tape t;
        Value x = t.input(Tensor({2}, {1, -2}));
        Gradients g = t.backward(t.sum(t.mul(x, x)));
        CHECK(bit_equal(g.at(x), Tensor({2}, {2, -4})));
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Value x = t.input(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("nodes not contributing to the loss get zero gradients") {
    Tape t;
    Value x = t.input(Tensor({2}, {1, 2}));
    Value unused = t.input(Tensor({3}, {7, 8, 9}));
    Gradients g = t.backward(t.sum(x));
    CHECK(bit_equal(g.at(unused), Tensor({3})));
}

TEST_CASE("finite_diff_check spec examples") {
    auto sum_f = [](const Tensor& v) { return sum_value(v); };
    Tensor g = finite_diff_check(sum_f, Tensor({3}, {0.3, -2.0, 5.0}), 1e-4);
    CHECK(linf_distance(g, Tensor::full({3}, 1.0)) < 1e-10);

    auto square = [](const Tensor& v) { return v[0] * v[0]; };
    Tensor g2 = finite_diff_check(square, Tensor({1}, {3.0}), 1e-4);
    CHECK(std::abs(g2[0] - 6.0) < 1e-6);

    auto constant = [](const Tensor&) { return 4.2; };
    CHECK(bit_equal(finite_diff_check(constant, Tensor({4}, {1, 2, 3, 4}), 1e-4), Tensor({4})));

    CHECK_THROWS_AS(finite_diff_check(sum_f, Tensor({1}), 0.0), ContractError);
}

TEST_CASE("dense network gradients match finite differences") {
    // Small two-layer MLP with cross-entropy loss, checked per seed.
    for (std::uint64_t seed : {3u, 4u}) {
        CounterRng rng(seed, 0, 0);
        Tensor x({2, 5});
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
        Tensor w1({5, 4}), b1({4}), w2({4, 3}), b2({3});
        for (std::int64_t i = 0; i < w1.size(); ++i) w1[i] = rng.uniform(-0.8, 0.8);
        for (std::int64_t i = 0; i < w2.size(); ++i) w2[i] = rng.uniform(-0.8, 0.8);
        for (std::int64_t i = 0; i < b1.size(); ++i) b1[i] = rng.uniform(-0.3, 0.3);
        const std::vector<int> labels{1, 2};

        auto loss_at = [&](const Tensor& probe) {
            Tensor h = relu(dense_forward(probe, w1, b1));
            return cross_entropy_from_logits(dense_forward(h, w2, b2), labels)[0];
        };

        Tape t;
        Value xv = t.input(x);
        Value h = t.relu(t.dense(xv, t.input(w1), t.input(b1)));
        Value logits = t.dense(h, t.input(w2), t.input(b2));
        Gradients g = t.backward(t.cross_entropy(logits, labels));

        CHECK(rel_error(g.at(xv), finite_diff_check(loss_at, x, 1e-4)) < 1e-4);
    }
}

TEST_CASE("conv network gradients match finite differences") {
    CounterRng rng(12, 0, 0);
    Tensor x({1, 2, 4, 4});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor k({3, 2, 3, 3}), kb({3});
    for (std::int64_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-0.5, 0.5);
    Tensor w({48, 2}), b({2});
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.4, 0.4);
    const std::vector<int> labels{1};

    auto loss_at = [&](const Tensor& probe) {
        Tensor h = relu(conv2d_forward(probe, k, kb));
        return cross_entropy_from_logits(dense_forward(h.reshaped({1, 48}), w, b), labels)[0];
    };

    Tape t;
    Value xv = t.input(x);
    Value h = t.relu(t.conv2d(xv, t.input(k), t.input(kb)));
    Value logits = t.dense(t.reshape(h, {1, 48}), t.input(w), t.input(b));
    Gradients g = t.backward(t.cross_entropy(logits, labels));

    CHECK(rel_error(g.at(xv), finite_diff_check(loss_at, x, 1e-4)) < 1e-4);
}

TEST_CASE("conv kernel and bias gradients match finite differences") {
    CounterRng rng(13, 0, 0);
    Tensor x({2, 1, 3, 3});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor k({2, 1, 3, 3}), kb({2});
    for (std::int64_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-0.5, 0.5);

    auto loss_at_kernel = [&](const Tensor& probe) {
        return sum_value(hadamard(conv2d_forward(x, probe, kb), conv2d_forward(x, probe, kb)));
    };

    Tape t;
    Value kv = t.input(k);
    Value y = t.conv2d(t.input(x), kv, t.input(kb));
    Gradients g = t.backward(t.sum(t.mul(y, y)));
    CHECK(rel_error(g.at(kv), finite_diff_check(loss_at_kernel, k, 1e-4)) < 1e-4);
}

TEST_CASE("eroded two-layer network input gradient matches finite differences") {
    ArchitectureSpec spec;
    spec.family = Family::Plain;
    spec.block_kind = BlockKind::Dense;
    spec.input_shape = {1, 3, 3};
    spec.class_count = 3;
    spec.block_count = 2;
    spec.width = 6;
    Model m = build_model(spec, 7);

    ErosionSpec es;
    es.mode = ErosionMode::DsnePlain;
    es.lambda_u = 0.2;
    es.lambda_b = 0.15;
    es.seed = 7;
    ErosionSample sample = sample_erosion(es, m, 0);

    CounterRng rng(99, 0, 0);
    Tensor x({1, 1, 3, 3});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(10.0, 240.0);
    const std::vector<int> labels{1};

    auto loss_at = [&](const Tensor& probe) {
        return cross_entropy_from_logits(eroded_forward(m, sample, probe), labels)[0];
    };
    Tensor want = finite_diff_check(loss_at, x, 1e-4);
    Tensor got = eroded_input_gradient(m, sample, x, labels);
    CHECK(rel_error(got, want) < 1e-4);
}

TEST_CASE("tape evaluation is deterministic") {
    auto run = [] {
        Tape t;
        Value x = t.input(Tensor({2, 3}, {1, -2, 3, 4, 0.5, -0.25}));
        Value w = t.input(Tensor({3, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6}));
        Value y = t.dense(t.relu(x), w, t.input(Tensor({2}, {0.05, -0.05})));
        Gradients g = t.backward(t.cross_entropy(y, {0, 1}));
        return std::pair<Tensor, Tensor>(t.value(y), g.at(x));
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    CHECK(bit_equal(y1, y2));
    CHECK(bit_equal(g1, g2));
}
