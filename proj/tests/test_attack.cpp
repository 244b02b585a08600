#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "erode/attack.hpp"
#include "erode/dataset.hpp"
#include "erode/graph.hpp"
#include "erode/rng.hpp"

using namespace erode;

namespace {

ArchitectureSpec small_spec(Family family) {
    ArchitectureSpec s;
    s.family = family;
    s.block_kind = BlockKind::Dense;
    s.input_shape = {1, 4, 4};
    s.class_count = 3;
    s.block_count = 2;
    s.width = 8;
    return s;
}

Tensor sample_image() {
    Dataset ds = make_synthetic_dataset(55, 3, 5, {1, 4, 4});
    return Tensor({1, 4, 4}, ds.example(0).a());
}

// Constant-logit model: all weights zero, logits equal the head bias.
Model constant_model(const Tensor& logits_bias, std::uint64_t seed) {
    ArchitectureSpec s = small_spec(Family::Plain);
    Model m = build_model(s, seed);
    for (Tensor* p : m.parameters()) p->a().setZero();
    m.head_bias = logits_bias;
    return m;
}

}  // namespace

TEST_CASE("clip_ball spec examples") {
    Tensor x({1}, {100.0});
    CHECK(clip_ball(x, Tensor({1}, {130.0}), 16.0)[0] == 116.0);
    Tensor low({1}, {10.0});
    CHECK(clip_ball(low, Tensor({1}, {-5.0}), 16.0)[0] == 0.0);
    Tensor same({3}, {0.0, 128.0, 255.0});
    CHECK(bit_equal(clip_ball(same, same, 4.0), same));
    CHECK_THROWS_AS(clip_ball(Tensor({2}), Tensor({3}), 1.0), DimensionError);
}

TEST_CASE("clip_ball matches the formula on random triples") {
    CounterRng rng(31, 0, 0);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(0.0, 255.0);
        const double cand = rng.uniform(-64.0, 320.0);
        const double eps = rng.uniform(0.0, 32.0);
        const double expected = std::min({255.0, x + eps, std::max({0.0, x - eps, cand})});
        const double got = clip_ball(Tensor({1}, {x}), Tensor({1}, {cand}), eps)[0];
        REQUIRE(got == expected);
        REQUIRE(within_ball(Tensor({1}, {x}), Tensor({1}, {got}), eps));
    }
}

TEST_CASE("make_ti_kernel spec examples") {
    Kernel k1 = make_ti_kernel(1, 3.0);
    CHECK(k1.weights.size() == 1);
    CHECK(k1.weights[0] == 1.0);

    Kernel k3 = make_ti_kernel(3, 0.5);
    const double center = k3.weights[4];
    for (int i = 0; i < 9; ++i)
        if (i != 4) CHECK(center > k3.weights[i]);
    // Closed form: w(i,j) ∝ exp(-(i²+j²)/(2·0.25)).
    const double e1 = std::exp(-2.0), e2 = std::exp(-4.0);
    const double total = 1.0 + 4.0 * e1 + 4.0 * e2;
    CHECK(k3.weights[4] == doctest::Approx(1.0 / total).epsilon(1e-12));
    CHECK(k3.weights[1] == doctest::Approx(e1 / total).epsilon(1e-12));
    CHECK(k3.weights[0] == doctest::Approx(e2 / total).epsilon(1e-12));

    CHECK(std::abs(sum_value(k3.weights) - 1.0) < 1e-12);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            CHECK(k3.weights[i * 3 + j] == k3.weights[(2 - i) * 3 + j]);
            CHECK(k3.weights[i * 3 + j] == k3.weights[i * 3 + (2 - j)]);
        }

    CHECK_THROWS_AS(make_ti_kernel(2, 1.0), ConfigError);
    CHECK_THROWS_AS(make_ti_kernel(3, 0.0), ConfigError);
}

TEST_CASE("smooth_gradient spec examples") {
    CounterRng rng(8, 0, 0);
    Tensor g({2, 4, 4});
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1.0, 1.0);

    CHECK(bit_equal(smooth_gradient(g, make_ti_kernel(1, 2.0)), g));

    // Constant field under a uniform 3x3 kernel: interior keeps its value,
    // corners see 4/9 of the window mass, edges 6/9.
    Kernel uniform;
    uniform.size = 3;
    uniform.sigma = 1.0;
    uniform.weights = Tensor::full({3, 3}, 1.0 / 9.0);
    Tensor c = Tensor::full({1, 3, 3}, 1.0);
    Tensor sm = smooth_gradient(c, uniform);
    CHECK(sm[4] == doctest::Approx(1.0));
    CHECK(sm[0] == doctest::Approx(4.0 / 9.0));
    CHECK(sm[1] == doctest::Approx(6.0 / 9.0));

    Tensor twice = smooth_gradient(Tensor(g.shape(), 2.0 * g.a()), make_ti_kernel(3, 1.0));
    Tensor once = smooth_gradient(g, make_ti_kernel(3, 1.0));
    CHECK(linf_distance(twice, Tensor(once.shape(), 2.0 * once.a())) < 1e-12);
}

TEST_CASE("mi_update spec examples") {
    MomentumState s0{Tensor({2}), 0};
    MomentumState s1 = mi_update(s0, Tensor({2}, {1, 3}), 1.0);
    CHECK(s1.g[0] == doctest::Approx(0.25));
    CHECK(s1.g[1] == doctest::Approx(0.75));
    CHECK(s1.t == 1);

    MomentumState hist{Tensor({2}, {9.0, -9.0}), 3};
    MomentumState r = mi_update(hist, Tensor({2}, {1, 3}), 0.0);
    CHECK(r.g[0] == doctest::Approx(0.25));
    CHECK(r.g[1] == doctest::Approx(0.75));

    MomentumState g1{Tensor({2}, {0.5, -0.5}), 1};
    MomentumState g2 = mi_update(g1, Tensor({2}, {1, 3}), 1.0);
    CHECK(g2.g[0] == doctest::Approx(0.75));
    CHECK(g2.g[1] == doctest::Approx(0.25));

    MomentumState z = mi_update(g1, Tensor({2}), 1.0);
    CHECK(bit_equal(z.g, g1.g));
}

TEST_CASE("attack spec defaults and validation") {
    AttackSpec s;
    s.epsilon = 16.0;
    s.iterations = 10;
    CHECK(s.step_size() == 1.6);
    s.step = 0.5;
    CHECK(s.step_size() == 0.5);
    s.step.reset();
    s.iterations = 4;
    CHECK(s.step_size() == 4.0);

    AttackSpec bad;
    bad.epsilon = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.epsilon = 0.0;  // degenerate zero-radius ball is allowed
    CHECK_NOTHROW(bad.validate());
    bad = AttackSpec{};
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ensemble validation") {
    Model m = build_model(small_spec(Family::Plain), 1);
    EnsembleSpec e;
    CHECK_THROWS_AS(e.validate(), ConfigError);
    e.members.push_back({&m, ErosionSpec{}});
    e.weights = {0.5, 0.5};
    CHECK_THROWS_AS(e.validate(), ConfigError);
    e.weights = {0.7};
    CHECK_THROWS_AS(e.validate(), ConfigError);
    e.weights = {1.0};
    CHECK_NOTHROW(e.validate());
}

TEST_CASE("fused_logits spec examples") {
    Model a = constant_model(Tensor({3}, {2, 0, 0}), 1);
    Model b = constant_model(Tensor({3}, {0, 2, 0}), 2);
    Tensor x = sample_image().reshaped({1, 1, 4, 4});

    EnsembleSpec single;
    single.members.push_back({&a, ErosionSpec{}});
    single.weights = {1.0};
    std::vector<ErosionSample> samples1{sample_erosion(ErosionSpec{}, a, 0)};
    CHECK(bit_equal(fused_logits(single, samples1, x), model_logits(a, x)));

    EnsembleSpec pair;
    pair.members.push_back({&a, ErosionSpec{}});
    pair.members.push_back({&b, ErosionSpec{}});
    pair.weights = {0.5, 0.5};
    std::vector<ErosionSample> samples2{sample_erosion(ErosionSpec{}, a, 0),
                                        sample_erosion(ErosionSpec{}, b, 0)};
    Tensor fused = fused_logits(pair, samples2, x);
    CHECK(fused[0] == doctest::Approx(1.0));
    CHECK(fused[1] == doctest::Approx(1.0));
    CHECK(fused[2] == doctest::Approx(0.0));

    pair.weights = {1.0, 0.0};
    CHECK(bit_equal(fused_logits(pair, samples2, x), model_logits(a, x)));

    std::vector<ErosionSample> wrong_count{samples2[0]};
    CHECK_THROWS_AS(fused_logits(pair, wrong_count, x), ConfigError);
}

TEST_CASE("fused gradient is the weighted sum of member gradients") {
    Model a = build_model(small_spec(Family::Plain), 7);
    Model b = build_model(small_spec(Family::Residual), 8);
    Tensor x = sample_image().reshaped({1, 1, 4, 4});
    const double wa = 0.3, wb = 0.7;

    // Check the fused-logit linearity at the logit level (the loss itself is
    // nonlinear in the fusion weights).
    Tape t;
    Value in = t.input(x);
    ForwardNodes fa = forward_graph(t, a, in, nullptr);
    ForwardNodes fb = forward_graph(t, b, in, nullptr);
    Value fused = t.add(t.scale(fa.logits, wa), t.scale(fb.logits, wb));
    Value probe = t.sum(fused);
    Tensor got = t.backward(probe).at(in);

    auto sum_grad_of = [&](const Model& m) {
        Tape tt;
        Value inn = tt.input(x);
        ForwardNodes f = forward_graph(tt, m, inn, nullptr);
        return tt.backward(tt.sum(f.logits)).at(inn);
    };
    Tensor want(x.shape(), wa * sum_grad_of(a).a() + wb * sum_grad_of(b).a());
    CHECK(linf_distance(got, want) < 1e-12);
}

TEST_CASE("single-step attack on a linear two-pixel model is hand-checkable") {
    // Logits: class0 = x0 - x1, others 0; untargeted ascent on y=0 pushes
    // x0 down and x1 up by alpha.
    ArchitectureSpec s;
    s.family = Family::Plain;
    s.block_kind = BlockKind::Dense;
    s.input_shape = {1, 1, 2};
    s.class_count = 2;
    s.block_count = 1;
    s.width = 2;
    Model m = build_model(s, 1);
    m.block_weight[0] = Tensor({2, 2}, {127.5, 0, 0, 127.5});
    m.block_bias[0] = Tensor({2}, {127.5, 127.5});
    m.head_weight = Tensor({2, 2}, {1, -1, -1, 1});
    m.head_bias = Tensor({2});

    // Keep the margin small so the softmax is far from saturation.
    Tensor x({1, 1, 2}, {100.0, 98.0});
    // Sanity: logits equal (x0-x1, x1-x0).
    Tensor lg = model_logits(m, x.reshaped({1, 1, 1, 2}));
    CHECK(lg[0] == doctest::Approx(2.0));
    CHECK(lg[1] == doctest::Approx(-2.0));

    EnsembleSpec ens;
    ens.members.push_back({&m, ErosionSpec{}});
    ens.weights = {1.0};

    AttackSpec spec;
    spec.epsilon = 16.0;
    spec.iterations = 1;
    spec.mu = 1.0;
    spec.use_momentum = true;
    // N=1 means the default step is the full budget; raising the loss of
    // label 0 pushes x0 down and x1 up by exactly alpha.
    CHECK(spec.step_size() == 16.0);
    Tensor adv = run_attack(ens, x, 0, spec);
    CHECK(adv[0] == 84.0);
    CHECK(adv[1] == 114.0);

    spec.step = 1.6;
    adv = run_attack(ens, x, 0, spec);
    CHECK(adv[0] == doctest::Approx(98.4));
    CHECK(adv[1] == doctest::Approx(99.6));
}

TEST_CASE("zero-erosion attack reduces to an independently coded MI loop") {
    Model m = build_model(small_spec(Family::Residual), 9);
    Tensor x = sample_image();
    const int y = 1;

    AttackSpec spec;
    spec.epsilon = 16.0;
    spec.iterations = 10;
    spec.mu = 1.0;
    spec.master_seed = 77;

    EnsembleSpec ens;
    ens.members.push_back({&m, ErosionSpec{}});
    ens.weights = {1.0};
    Tensor got = run_attack(ens, x, y, spec);

    // Reference loop assembled from the public primitives.
    const double alpha = spec.epsilon / spec.iterations;
    MomentumState state{Tensor(x.shape()), 0};
    Tensor adv = x;
    for (int t = 0; t < spec.iterations; ++t) {
        Tape tape;
        Value in = tape.input(adv.reshaped({1, 1, 4, 4}));
        ForwardNodes f = forward_graph(tape, m, in, nullptr);
        Tensor grad = tape.backward(tape.cross_entropy(f.logits, {y})).at(in).reshaped(x.shape());
        state = mi_update(state, grad, spec.mu);
        adv = clip_ball(x, adv + alpha * sign(state.g), spec.epsilon);
    }
    CHECK(bit_equal(got, adv));
}

TEST_CASE("dsne attack with zero erosion magnitudes equals the none-mode attack") {
    Model m = build_model(small_spec(Family::Residual), 10);
    Tensor x = sample_image();
    AttackSpec spec;
    spec.epsilon = 8.0;
    spec.iterations = 6;
    spec.master_seed = 3;

    ErosionSpec zero;
    zero.mode = ErosionMode::DsneResidual;
    zero.lambda_u = 0.0;
    zero.gamma = 1.0;

    EnsembleSpec none_ens;
    none_ens.members.push_back({&m, ErosionSpec{}});
    none_ens.weights = {1.0};
    EnsembleSpec zero_ens;
    zero_ens.members.push_back({&m, zero});
    zero_ens.weights = {1.0};

    CHECK(bit_equal(run_attack(none_ens, x, 2, spec), run_attack(zero_ens, x, 2, spec)));
}

TEST_CASE("mi with zero decay equals plain iterative sign steps") {
    Model m = build_model(small_spec(Family::Plain), 11);
    Tensor x = sample_image();
    AttackSpec mi;
    mi.epsilon = 12.0;
    mi.iterations = 8;
    mi.mu = 0.0;
    mi.use_momentum = true;
    mi.master_seed = 5;
    AttackSpec ifgsm = mi;
    ifgsm.use_momentum = false;

    EnsembleSpec ens;
    ens.members.push_back({&m, ErosionSpec{}});
    ens.weights = {1.0};
    CHECK(bit_equal(run_attack(ens, x, 0, mi), run_attack(ens, x, 0, ifgsm)));
}

TEST_CASE("ti with the delta kernel equals the no-ti path") {
    Model m = build_model(small_spec(Family::Residual), 12);
    Tensor x = sample_image();
    AttackSpec plain;
    plain.epsilon = 10.0;
    plain.iterations = 5;
    plain.master_seed = 6;
    AttackSpec ti = plain;
    ti.ti_kernel = make_ti_kernel(1, 3.0);
    EnsembleSpec ens;
    ens.members.push_back({&m, ErosionSpec{}});
    ens.weights = {1.0};
    CHECK(bit_equal(run_attack(ens, x, 1, plain), run_attack(ens, x, 1, ti)));
}

TEST_CASE("every iterate stays inside the ball and pixel range") {
    Model m = build_model(small_spec(Family::Residual), 13);
    Tensor x = sample_image();
    ErosionSpec e;
    e.mode = ErosionMode::DsneResidual;
    e.lambda_u = 0.3;
    e.gamma = 0.8;
    EnsembleSpec ens;
    ens.members.push_back({&m, e});
    ens.weights = {1.0};
    AttackSpec spec;
    spec.epsilon = 16.0;
    spec.iterations = 10;
    spec.master_seed = 9;
    std::vector<Tensor> iterates;
    run_attack(ens, x, 2, spec, &iterates);
    CHECK(iterates.size() == 10);
    for (const Tensor& it : iterates) CHECK(within_ball(x, it, spec.epsilon));
}

TEST_CASE("attacks are deterministic in the master seed") {
    Model m = build_model(small_spec(Family::Residual), 14);
    Tensor x = sample_image();
    ErosionSpec e;
    e.mode = ErosionMode::DsneResidual;
    e.lambda_u = 0.2;
    e.gamma = 0.8;
    EnsembleSpec ens;
    ens.members.push_back({&m, e});
    ens.weights = {1.0};
    AttackSpec spec;
    spec.epsilon = 16.0;
    spec.iterations = 5;
    spec.master_seed = 42;
    Tensor a = run_attack(ens, x, 0, spec);
    Tensor b = run_attack(ens, x, 0, spec);
    CHECK(bit_equal(a, b));
}

TEST_CASE("attack input contract") {
    Model m = build_model(small_spec(Family::Plain), 15);
    EnsembleSpec ens;
    ens.members.push_back({&m, ErosionSpec{}});
    ens.weights = {1.0};
    AttackSpec spec;
    CHECK_THROWS_AS(run_attack(ens, Tensor({1, 4, 4}, Eigen::ArrayXd::Constant(16, 300.0)), 0, spec),
                    ContractError);
    CHECK_THROWS_AS(run_attack(ens, Tensor({4, 4}), 0, spec), DimensionError);
}
