#pragma once

// Preference losses for rectified flows, trained against a frozen reference
// model. Per item the four regression terms share one timestep t, with
// independent noise per side reused across theta and theta_ref:
//
//   B  = (Lw - Ll) - (Lw_ref - Ll_ref)
//   L_DPO-FM = mean -log sigmoid(-beta B)
//   L_CRPO   = L_DPO-FM + mean Lw          (winning flow-matching term)

#include <utility>
#include <vector>

#include "flowalign/flow.hpp"
#include "flowalign/numkit.hpp"
#include "flowalign/synthdata.hpp"
#include "flowalign/vectorfield.hpp"

namespace flowalign {

enum class LossKind { DpoFm, Crpo };

inline std::string loss_kind_name(LossKind k) { return k == LossKind::Crpo ? "crpo" : "dpo-fm"; }

inline LossKind loss_kind_from_name(const std::string& s) {
    if (s == "crpo") return LossKind::Crpo;
    if (s == "dpo-fm" || s == "dpo_fm") return LossKind::DpoFm;
    throw Error(ErrorKind::BadConfig, "unknown loss kind: " + s);
}

struct DpoConfig {
    double beta = 1.0;
    LossKind loss_kind = LossKind::Crpo;

    void validate() const {
        if (beta <= 0.0) throw Error(ErrorKind::BadConfig, "DpoConfig: beta must be > 0");
    }
};

struct PreferenceBatchItem {
    int condition = 0;
    Vec winner;
    Vec loser;
    Vec noise_w;
    Vec noise_l;
    double t = 0.5;
};

// Materializes noise and timesteps for a set of pairs. Draw order per item:
// t (logit-normal), winner noise, loser noise.
inline std::vector<PreferenceBatchItem> make_preference_batch(
    const std::vector<PreferencePair>& pairs, Rng& rng) {
    std::vector<PreferenceBatchItem> items;
    items.reserve(pairs.size());
    for (const PreferencePair& p : pairs) {
        PreferenceBatchItem it;
        it.condition = p.c;
        it.winner = p.winner;
        it.loser = p.loser;
        it.t = logit_normal_t(rng);
        it.noise_w = gaussian(rng, static_cast<int>(p.winner.size()));
        it.noise_l = gaussian(rng, static_cast<int>(p.loser.size()));
        items.push_back(std::move(it));
    }
    return items;
}

// -log sigmoid(-x), computed as softplus(x) without overflow.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// The bracket-to-loss mapping of the preference objective, exposed on its own
// so term-level arithmetic can be checked directly.
inline double dpo_bracket(double lw, double ll, double lw_ref, double ll_ref) {
    return (lw - ll) - (lw_ref - ll_ref);
}

inline double dpo_nll(double bracket, double beta) { return softplus(beta * bracket); }

struct PreferenceResult {
    double loss = 0.0;
    std::vector<double> grads;
    // Diagnostics under theta (no reference, no sigmoid).
    double mean_winning_loss = 0.0;
    double mean_losing_loss = 0.0;
    double mean_margin = 0.0;  // mean (Ll - Lw)
};

namespace detail {

inline double squared_error(const Vec& u, const Vec& target) {
    double s = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - target[i];
        s += d * d;
    }
    return s;
}

inline PreferenceResult preference_loss(const ModelParameters& params,
                                        const ModelParameters& ref_params,
                                        const std::vector<PreferenceBatchItem>& batch,
                                        const DpoConfig& cfg, bool with_grads) {
    cfg.validate();
    if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "preference loss: empty batch");
    if (params.values.size() != ref_params.values.size())
        throw Error(ErrorKind::ShapeMismatch, "preference loss: theta/theta_ref shape mismatch");

    PreferenceResult res;
    if (with_grads) res.grads.assign(params.values.size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const PreferenceBatchItem& item : batch) {
        const FlowSample sw = make_flow_sample_with_noise(item.winner, item.noise_w, item.t);
        const FlowSample sl = make_flow_sample_with_noise(item.loser, item.noise_l, item.t);

        const ForwardTape tape_w = forward_tape(params, sw.xt, sw.t, item.condition);
        const ForwardTape tape_l = forward_tape(params, sl.xt, sl.t, item.condition);
        const double lw = squared_error(tape_w.output(), sw.vt);
        const double ll = squared_error(tape_l.output(), sl.vt);
        const double lw_ref =
            squared_error(forward(ref_params, sw.xt, sw.t, item.condition), sw.vt);
        const double ll_ref =
            squared_error(forward(ref_params, sl.xt, sl.t, item.condition), sl.vt);

        const double bracket = dpo_bracket(lw, ll, lw_ref, ll_ref);
        res.loss += inv_b * dpo_nll(bracket, cfg.beta);
        res.mean_winning_loss += inv_b * lw;
        res.mean_losing_loss += inv_b * ll;
        res.mean_margin += inv_b * (ll - lw);
        if (cfg.loss_kind == LossKind::Crpo) res.loss += inv_b * lw;

        if (with_grads) {
            // d nll / d bracket = beta * sigmoid(beta * bracket)
            const double coef = inv_b * cfg.beta * sigmoid(cfg.beta * bracket);
            double coef_w = coef;
            if (cfg.loss_kind == LossKind::Crpo) coef_w += inv_b;  // winning FM term
            Vec upstream_w(sw.vt.size());
            for (size_t i = 0; i < upstream_w.size(); ++i)
                upstream_w[i] = 2.0 * coef_w * (tape_w.output()[i] - sw.vt[i]);
            backward_from_tape(params, tape_w, upstream_w, res.grads);

            Vec upstream_l(sl.vt.size());
            for (size_t i = 0; i < upstream_l.size(); ++i)
                upstream_l[i] = -2.0 * coef * (tape_l.output()[i] - sl.vt[i]);
            backward_from_tape(params, tape_l, upstream_l, res.grads);
        }
    }
    return res;
}

}  // namespace detail

inline PreferenceResult dpo_fm_loss(const ModelParameters& params,
                                    const ModelParameters& ref_params,
                                    const std::vector<PreferenceBatchItem>& batch,
                                    DpoConfig cfg = {}) {
    cfg.loss_kind = LossKind::DpoFm;
    return detail::preference_loss(params, ref_params, batch, cfg, true);
}

inline PreferenceResult crpo_loss(const ModelParameters& params, const ModelParameters& ref_params,
                                  const std::vector<PreferenceBatchItem>& batch,
                                  DpoConfig cfg = {}) {
    cfg.loss_kind = LossKind::Crpo;
    return detail::preference_loss(params, ref_params, batch, cfg, true);
}

// Mean winning/losing regression losses of a parameter set on materialized
// items; no reference terms, no sigmoid, no gradients.
struct TrajectoryLosses {
    double winning = 0.0;
    double losing = 0.0;
};

inline TrajectoryLosses trajectory_losses(const ModelParameters& params,
                                          const std::vector<PreferenceBatchItem>& items) {
    if (items.empty()) throw Error(ErrorKind::EmptyDataset, "trajectory_losses: empty dataset");
    TrajectoryLosses out;
    const double inv_n = 1.0 / static_cast<double>(items.size());
    for (const PreferenceBatchItem& item : items) {
        const FlowSample sw = make_flow_sample_with_noise(item.winner, item.noise_w, item.t);
        const FlowSample sl = make_flow_sample_with_noise(item.loser, item.noise_l, item.t);
        out.winning +=
            inv_n * detail::squared_error(forward(params, sw.xt, sw.t, item.condition), sw.vt);
        out.losing +=
            inv_n * detail::squared_error(forward(params, sl.xt, sl.t, item.condition), sl.vt);
    }
    return out;
}

inline TrajectoryLosses loss_trajectory(const ModelParameters& params,
                                        const std::vector<PreferencePair>& dataset, Rng& rng) {
    return trajectory_losses(params, make_preference_batch(dataset, rng));
}

}  // namespace flowalign
