#pragma once

// Rectified-flow path construction, the flow-matching loss with gradients,
// and the Euler sampler with classifier-free guidance. The path runs from
// data at t = 0 to noise at t = 1:
//
//   x_t = (1 - t) x1 + t x0,   v_t = x0 - x1.

#include <functional>
#include <utility>
#include <vector>

#include "flowalign/numkit.hpp"
#include "flowalign/vectorfield.hpp"

namespace flowalign {

struct FlowSample {
    Vec x1;    // data
    Vec x0;    // noise
    double t = 0.0;
    Vec xt;    // (1-t) x1 + t x0
    Vec vt;    // x0 - x1
};

struct SamplerConfig {
    int steps = 50;
    double cfg_scale = 4.5;

    void validate() const {
        if (steps < 1) throw Error(ErrorKind::BadConfig, "SamplerConfig: steps must be >= 1");
        if (cfg_scale < 0.0)
            throw Error(ErrorKind::BadConfig, "SamplerConfig: cfg_scale must be >= 0");
    }
};

inline FlowSample make_flow_sample_with_noise(Vec x1, Vec x0, double t) {
    if (x1.size() != x0.size())
        throw Error(ErrorKind::ShapeMismatch, "flow sample: x1/x0 dimension mismatch");
    FlowSample s;
    s.t = t;
    const size_t n = x1.size();
    s.xt.resize(n);
    s.vt.resize(n);
    for (size_t i = 0; i < n; ++i) {
        s.xt[i] = (1.0 - t) * x1[i] + t * x0[i];
        s.vt[i] = x0[i] - x1[i];
    }
    s.x1 = std::move(x1);
    s.x0 = std::move(x0);
    return s;
}

inline FlowSample make_flow_sample(const Vec& x1, Rng& rng, double t) {
    return make_flow_sample_with_noise(x1, gaussian(rng, static_cast<int>(x1.size())), t);
}

// ============================================================================
//  Flow-matching loss: mean over the batch of |u(x_t, t, c) - v_t|^2.
//  Reduction is in index order so results are bit-reproducible.
// ============================================================================

struct FmResult {
    double loss = 0.0;
    std::vector<double> grads;
};

inline FmResult fm_loss(const ModelParameters& params,
                        const std::vector<std::pair<FlowSample, int>>& batch) {
    if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "fm_loss: empty batch");
    FmResult res;
    res.grads.assign(params.values.size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& [sample, c] : batch) {
        const ForwardTape tape = forward_tape(params, sample.xt, sample.t, c);
        const Vec& u = tape.output();
        Vec upstream(u.size());
        double err = 0.0;
        for (size_t i = 0; i < u.size(); ++i) {
            const double d = u[i] - sample.vt[i];
            err += d * d;
            upstream[i] = 2.0 * inv_b * d;
        }
        res.loss += inv_b * err;
        backward_from_tape(params, tape, upstream, res.grads);
    }
    return res;
}

// ============================================================================
//  Classifier-free guidance and the Euler sampler
// ============================================================================

// u_uncond + w (u_cond - u_uncond). w = 1 and w = 0 return the conditional
// and unconditional velocities without blending, keeping those identities
// bit-exact (and halving the cost).
inline Vec cfg_velocity(const ModelParameters& params, const Vec& x, double t, int c, double w) {
    if (c == kNullCondition)
        throw Error(ErrorKind::BadCondition, "cfg_velocity: condition must not be NULL");
    if (w == 1.0) return forward(params, x, t, c);
    if (w == 0.0) return forward(params, x, t, kNullCondition);
    const Vec uncond = forward(params, x, t, kNullCondition);
    const Vec cond = forward(params, x, t, c);
    Vec out(uncond.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + w * (cond[i] - uncond[i]);
    return out;
}

// Integrates dx/dt = vel(x, t) from t = 1 down to t = 0 on the uniform grid
// t_k = 1 - k/steps, evaluating the field at the left endpoint of each step.
template <typename VelocityFn>
Vec euler_integrate(VelocityFn&& vel, Vec x, int steps) {
    if (steps < 1) throw Error(ErrorKind::BadConfig, "euler_integrate: steps must be >= 1");
    for (int k = 0; k < steps; ++k) {
        const double tk = 1.0 - static_cast<double>(k) / steps;
        const double tk1 = 1.0 - static_cast<double>(k + 1) / steps;
        const Vec v = vel(x, tk);
        for (size_t i = 0; i < x.size(); ++i) x[i] += (tk1 - tk) * v[i];
    }
    return x;
}

inline Vec euler_sample(const ModelParameters& params, int c, const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    Vec x0 = gaussian(rng, params.config.data_dim);
    return euler_integrate(
        [&](const Vec& x, double t) { return cfg_velocity(params, x, t, c, cfg.cfg_scale); },
        std::move(x0), cfg.steps);
}

}  // namespace flowalign
