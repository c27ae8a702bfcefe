#pragma once

// Proxy reward models standing in for a learned text-audio embedder: cosine
// similarity against per-condition anchor directions, or negative distance to
// per-condition means. Plus candidate ranking and the best-of-N policy.

#include <vector>

#include "flowalign/flow.hpp"
#include "flowalign/numkit.hpp"
#include "flowalign/synthdata.hpp"

namespace flowalign {

enum class RewardKind { CosineEmbed, NegDistance };

struct RewardModel {
    RewardKind kind = RewardKind::CosineEmbed;
    std::vector<Vec> anchors;  // one per condition; unit norm for CosineEmbed
};

inline RewardModel make_cosine_reward(const SyntheticTask& task) {
    RewardModel model;
    model.kind = RewardKind::CosineEmbed;
    for (int c = 0; c < task.num_conditions; ++c) {
        Vec anchor = task.condition_mean(c);
        const double n = norm(anchor);
        if (n <= 0.0)
            throw Error(ErrorKind::BadConfig,
                        "cosine reward needs conditions with nonzero mean");
        for (double& v : anchor) v /= n;
        model.anchors.push_back(std::move(anchor));
    }
    return model;
}

inline RewardModel make_negdistance_reward(const SyntheticTask& task) {
    RewardModel model;
    model.kind = RewardKind::NegDistance;
    for (int c = 0; c < task.num_conditions; ++c) model.anchors.push_back(task.condition_mean(c));
    return model;
}

inline double score(const RewardModel& model, int c, const Vec& x) {
    if (c < 0 || c >= static_cast<int>(model.anchors.size()))
        throw Error(ErrorKind::BadCondition, "score: condition out of range");
    const Vec& anchor = model.anchors[static_cast<size_t>(c)];
    if (x.size() != anchor.size())
        throw Error(ErrorKind::ShapeMismatch, "score: dimension mismatch");
    if (model.kind == RewardKind::CosineEmbed) {
        const double n = norm(x);
        if (n == 0.0) return -1.0;  // degenerate output never wins a pair
        return dot(x, anchor) / n;
    }
    return -std::sqrt(squared_distance(x, anchor));
}

struct RankedCandidates {
    int condition = 0;
    std::vector<Vec> candidates;
    Vec rewards;
    int winner_index = 0;
    int loser_index = 0;
    bool degenerate = false;  // all rewards tied; no usable preference pair
};

// Ties break toward the lowest index for both winner and loser.
inline RankedCandidates rank_candidates(const RewardModel& model, int c,
                                        std::vector<Vec> candidates) {
    if (candidates.size() < 2)
        throw Error(ErrorKind::TooFewCandidates, "rank_candidates: need at least 2 candidates");
    RankedCandidates out;
    out.condition = c;
    out.rewards.resize(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) out.rewards[i] = score(model, c, candidates[i]);
    for (size_t i = 1; i < out.rewards.size(); ++i) {
        if (out.rewards[i] > out.rewards[static_cast<size_t>(out.winner_index)])
            out.winner_index = static_cast<int>(i);
        if (out.rewards[i] < out.rewards[static_cast<size_t>(out.loser_index)])
            out.loser_index = static_cast<int>(i);
    }
    out.degenerate = out.rewards[static_cast<size_t>(out.winner_index)] ==
                     out.rewards[static_cast<size_t>(out.loser_index)];
    if (out.degenerate) {
        out.winner_index = 0;
        out.loser_index = 0;
    }
    out.candidates = std::move(candidates);
    return out;
}

struct BestOfN {
    Vec sample;
    double reward = 0.0;
    Vec all_rewards;
};

// Draws n candidates sequentially from the given stream, so candidate sets
// for increasing n are nested prefixes of one another.
inline BestOfN best_of_n(const RewardModel& model, const ModelParameters& params, int c, int n,
                         const SamplerConfig& sampler, Rng& rng) {
    if (n < 1) throw Error(ErrorKind::BadConfig, "best_of_n: n must be >= 1");
    BestOfN out;
    out.all_rewards.reserve(static_cast<size_t>(n));
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        Vec x = euler_sample(params, c, sampler, rng);
        const double r = score(model, c, x);
        out.all_rewards.push_back(r);
        if (r > best) {
            best = r;
            out.sample = std::move(x);
        }
    }
    out.reward = best;
    return out;
}

}  // namespace flowalign
