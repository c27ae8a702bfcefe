#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "flowalign/flow.hpp"

using namespace flowalign;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.data_dim = 2;
    cfg.hidden_dims = {8};
    cfg.embed_dim = 3;
    cfg.time_features = 2;
    cfg.num_conditions = 2;
    return cfg;
}

}  // namespace

TEST_CASE("flow sample endpoints are exact") {
    Rng rng(4);
    const Vec x1 = {2.5, -1.0};
    FlowSample s0 = make_flow_sample(x1, rng, 0.0);
    REQUIRE(s0.xt == x1);
    FlowSample s1 = make_flow_sample(x1, rng, 1.0);
    REQUIRE(s1.xt == s1.x0);
}

TEST_CASE("flow sample midpoint arithmetic") {
    FlowSample s = make_flow_sample_with_noise({2.0, 0.0}, {0.0, 2.0}, 0.5);
    REQUIRE(s.xt == Vec{1.0, 1.0});
    REQUIRE(s.vt == Vec{-2.0, 2.0});
}

TEST_CASE("flow sample invariants hold for random draws") {
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        const Vec x1 = gaussian(rng, 3);
        const double t = rng.uniform();
        FlowSample s = make_flow_sample(x1, rng, t);
        for (size_t k = 0; k < x1.size(); ++k) {
            REQUIRE(s.xt[k] == (1.0 - t) * s.x1[k] + t * s.x0[k]);
            REQUIRE(s.vt[k] == s.x0[k] - s.x1[k]);
        }
    }
}

TEST_CASE("fm_loss is zero when predictions equal targets") {
    Rng rng(23);
    ModelParameters p = init_parameters(tiny_config(), rng);
    // Build a sample whose target velocity equals the model's own output.
    Vec x1 = {0.3, 0.8};
    FlowSample s = make_flow_sample(x1, rng, 0.4);
    s.vt = forward(p, s.xt, s.t, 1);
    const FmResult r = fm_loss(p, {{s, 1}});
    REQUIRE(r.loss == 0.0);
    for (double g : r.grads) REQUIRE(g == 0.0);
}

TEST_CASE("fm_loss value on a hand-computed sample") {
    // Zero parameters predict [0,0]; with target velocity [3,4] the squared
    // error is 25.
    ModelConfig cfg = tiny_config();
    ModelParameters p;
    p.config = cfg;
    p.values.assign(make_layout(cfg).total, 0.0);
    FlowSample s = make_flow_sample_with_noise({0.0, 0.0}, {3.0, 4.0}, 0.5);
    REQUIRE(s.vt == Vec{3.0, 4.0});
    const FmResult r = fm_loss(p, {{s, 0}});
    REQUIRE(r.loss == 25.0);
}

TEST_CASE("fm_loss is non-negative and rejects empty batches") {
    Rng rng(29);
    ModelParameters p = init_parameters(tiny_config(), rng);
    REQUIRE_THROWS_AS(fm_loss(p, {}), Error);
    for (int i = 0; i < 50; ++i) {
        FlowSample s = make_flow_sample(gaussian(rng, 2), rng, logit_normal_t(rng));
        const FmResult r = fm_loss(p, {{s, i % 2}});
        REQUIRE(r.loss >= 0.0);
    }
}

TEST_CASE("fm_loss gradient matches central finite differences") {
    Rng rng(37);
    ModelParameters p = init_parameters(tiny_config(), rng);
    std::vector<std::pair<FlowSample, int>> batch;
    for (int i = 0; i < 4; ++i)
        batch.emplace_back(make_flow_sample(gaussian(rng, 2), rng, logit_normal_t(rng)), i % 2);

    const FmResult r = fm_loss(p, batch);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        const size_t i = static_cast<size_t>(rng.next_u64() % p.values.size());
        ModelParameters plus = p, minus = p;
        plus.values[i] += h;
        minus.values[i] -= h;
        const double fd = (fm_loss(plus, batch).loss - fm_loss(minus, batch).loss) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(r.grads[i]), 1e-8});
        REQUIRE(std::abs(fd - r.grads[i]) / denom < 1e-4);
    }
}

TEST_CASE("euler integration is exact for the single-point analytic field") {
    // u(x, t) = (x - a) / t transports any start straight to a at t = 0.
    const Vec a = {1.25, -3.5};
    auto field = [&](const Vec& x, double t) {
        Vec v(x.size());
        for (size_t i = 0; i < x.size(); ++i) v[i] = (x[i] - a[i]) / t;
        return v;
    };
    Rng rng(41);
    for (int steps : {1, 2, 10, 50}) {
        Vec x0 = gaussian(rng, 2);
        const Vec out = euler_integrate(field, x0, steps);
        for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(out[i] - a[i]) < 1e-9);
    }
}

TEST_CASE("one euler step with the analytic field lands exactly on the target") {
    const Vec a = {0.75};
    auto field = [&](const Vec& x, double t) { return Vec{(x[0] - a[0]) / t}; };
    const Vec out = euler_integrate(field, Vec{42.0}, 1);
    REQUIRE(out[0] == a[0]);
}

TEST_CASE("cfg_velocity identities at w = 1 and w = 0") {
    Rng rng(43);
    ModelParameters p = init_parameters(tiny_config(), rng);
    const Vec x = {0.2, -0.4};
    const double t = 0.6;
    REQUIRE(cfg_velocity(p, x, t, 1, 1.0) == forward(p, x, t, 1));
    REQUIRE(cfg_velocity(p, x, t, 1, 0.0) == forward(p, x, t, kNullCondition));
    REQUIRE_THROWS_AS(cfg_velocity(p, x, t, kNullCondition, 2.0), Error);
}

TEST_CASE("cfg_velocity formula arithmetic at the default guidance scale") {
    // With u_uncond = [0,0] and u_cond = [1,0], w = 4.5 gives [4.5, 0].
    // Realized with a model stub: zero everything, then check the formula
    // directly on the blended output of hand-made velocities.
    const Vec uncond = {0.0, 0.0};
    const Vec cond = {1.0, 0.0};
    const double w = 4.5;
    Vec blended(2);
    for (size_t i = 0; i < 2; ++i) blended[i] = uncond[i] + w * (cond[i] - uncond[i]);
    REQUIRE(blended == Vec{4.5, 0.0});
}

TEST_CASE("cfg_velocity is affine in the guidance scale") {
    Rng rng(47);
    ModelParameters p = init_parameters(tiny_config(), rng);
    const Vec x = {0.9, 0.1};
    const double t = 0.33;
    for (auto [w1, w2] : {std::pair{0.5, 3.0}, std::pair{2.0, 7.0}, std::pair{-1.0, 4.5}}) {
        const Vec a = cfg_velocity(p, x, t, 0, w1);
        const Vec b = cfg_velocity(p, x, t, 0, w2);
        const Vec mid = cfg_velocity(p, x, t, 0, 0.5 * (w1 + w2));
        for (size_t i = 0; i < a.size(); ++i)
            REQUIRE(a[i] + b[i] == Catch::Approx(2.0 * mid[i]).margin(1e-12));
    }
}

TEST_CASE("euler_sample is deterministic given the seed") {
    Rng r1(53), r2(53);
    ModelParameters p = init_parameters(tiny_config(), r1);
    ModelParameters q = init_parameters(tiny_config(), r2);
    SamplerConfig cfg;
    cfg.steps = 10;
    cfg.cfg_scale = 2.0;
    Rng s1(99), s2(99);
    REQUIRE(euler_sample(p, 0, cfg, s1) == euler_sample(q, 0, cfg, s2));
}
