#pragma once

// Objective metric proxies (Frechet distance, label-KL, inception-score
// analogue) computed against the known synthetic task, and the subjective
// score statistics: per-annotator z-scores, rank aggregation, and Elo.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowalign/numkit.hpp"
#include "flowalign/synthdata.hpp"

namespace flowalign {

// ============================================================================
//  Gaussian fits and the Frechet distance proxy
// ============================================================================

struct GaussianFit {
    Vec mean;
    Matrix cov;  // unbiased (n-1) estimator
};

inline GaussianFit fit_gaussian(const std::vector<Vec>& samples) {
    if (samples.empty()) throw Error(ErrorKind::TooFewSamples, "fit_gaussian: empty sample set");
    const size_t d = samples[0].size();
    const size_t n = samples.size();
    GaussianFit fit;
    fit.mean.assign(d, 0.0);
    for (const Vec& x : samples)
        for (size_t i = 0; i < d; ++i) fit.mean[i] += x[i];
    for (double& m : fit.mean) m /= static_cast<double>(n);
    fit.cov = Matrix(static_cast<int>(d), static_cast<int>(d));
    if (n < 2) return fit;
    for (const Vec& x : samples)
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j)
                fit.cov(static_cast<int>(i), static_cast<int>(j)) +=
                    (x[i] - fit.mean[i]) * (x[j] - fit.mean[j]);
    for (double& v : fit.cov.data) v /= static_cast<double>(n - 1);
    return fit;
}

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
inline double frechet_gaussian(const Vec& mu1, const Matrix& cov1, const Vec& mu2,
                               const Matrix& cov2) {
    double dist = squared_distance(mu1, mu2);
    const Matrix root1 = matrix_sqrt_psd(cov1);
    const Matrix inner = matmul(matmul(root1, cov2), root1);
    const Matrix cross = matrix_sqrt_psd(inner);
    for (int i = 0; i < cov1.rows; ++i) dist += cov1(i, i) + cov2(i, i) - 2.0 * cross(i, i);
    return dist;
}

inline double frechet_proxy(const std::vector<Vec>& gen, const std::vector<Vec>& ref) {
    if (gen.empty() || ref.empty())
        throw Error(ErrorKind::TooFewSamples, "frechet_proxy: empty sample set");
    const int d = static_cast<int>(gen[0].size());
    if (static_cast<int>(gen.size()) < d + 1 || static_cast<int>(ref.size()) < d + 1)
        throw Error(ErrorKind::TooFewSamples, "frechet_proxy: need at least dim+1 samples");
    const GaussianFit fg = fit_gaussian(gen);
    const GaussianFit fr = fit_gaussian(ref);
    return frechet_gaussian(fg.mean, fg.cov, fr.mean, fr.cov);
}

// ============================================================================
//  Label-distribution proxies via the task posterior
// ============================================================================

inline Vec mean_posterior(const SyntheticTask& task, const std::vector<Vec>& samples) {
    Vec mean(static_cast<size_t>(task.num_conditions), 0.0);
    for (const Vec& x : samples) {
        const Vec post = posterior(task, x);
        for (size_t c = 0; c < mean.size(); ++c) mean[c] += post[c];
    }
    for (double& v : mean) v /= static_cast<double>(samples.size());
    return mean;
}

// Sum_c p_c ln(p_c / q_c), with the 0 ln 0 = 0 convention.
inline double kl_divergence(const Vec& p, const Vec& q) {
    if (p.size() != q.size()) throw Error(ErrorKind::ShapeMismatch, "kl_divergence: size mismatch");
    double kl = 0.0;
    for (size_t c = 0; c < p.size(); ++c)
        if (p[c] > 0.0) kl += p[c] * std::log(p[c] / q[c]);
    return kl;
}

// KL(p_ref || q_gen) over mean label posteriors, with additive smoothing
// eps = 1e-8 on q before renormalization.
inline double kl_label_proxy(const SyntheticTask& task, const std::vector<Vec>& gen,
                             const std::vector<Vec>& ref) {
    if (gen.empty() || ref.empty())
        throw Error(ErrorKind::TooFewSamples, "kl_label_proxy: empty sample set");
    const Vec p = mean_posterior(task, ref);
    Vec q = mean_posterior(task, gen);
    constexpr double kEps = 1e-8;
    double total = 0.0;
    for (double& v : q) {
        v += kEps;
        total += v;
    }
    for (double& v : q) v /= total;
    // Round-off can push the sum a few ulps below zero when p ~ q.
    return std::max(kl_divergence(p, q), 0.0);
}

// exp(mean_x KL(posterior(x) || mean posterior))
inline double is_proxy(const SyntheticTask& task, const std::vector<Vec>& gen) {
    if (gen.empty()) throw Error(ErrorKind::TooFewSamples, "is_proxy: empty sample set");
    const Vec marginal = mean_posterior(task, gen);
    double mean_kl = 0.0;
    for (const Vec& x : gen) mean_kl += kl_divergence(posterior(task, x), marginal);
    mean_kl /= static_cast<double>(gen.size());
    return std::exp(mean_kl);
}

struct MetricsReport {
    double mean_reward = 0.0;
    double fd_proxy = 0.0;
    double kl_proxy = 0.0;
    double is_proxy = 1.0;
    int gen_count = 0;
    int ref_count = 0;
};

// ============================================================================
//  Subjective score table
// ============================================================================

struct ScoreEntry {
    std::string annotator;
    std::string model;
    std::string prompt;
    double score = 0.0;
};

struct ScoreTable {
    std::vector<ScoreEntry> entries;
};

// CSV with header "annotator,model,prompt,score"; raw scores must lie in
// [0, 100]. Parse failures report the 1-based line number.
inline ScoreTable read_score_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
    ScoreTable table;
    std::string line;
    int lineno = 0;
    auto chomp = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    if (!std::getline(in, line))
        throw Error(ErrorKind::ParseError, path + ":1: empty file, expected header");
    ++lineno;
    chomp(line);
    if (line != "annotator,model,prompt,score")
        throw Error(ErrorKind::ParseError,
                    path + ":1: expected header 'annotator,model,prompt,score'");
    while (std::getline(in, line)) {
        ++lineno;
        chomp(line);
        if (line.empty()) continue;
        std::stringstream ss(line);
        ScoreEntry e;
        std::string score_str;
        if (!std::getline(ss, e.annotator, ',') || !std::getline(ss, e.model, ',') ||
            !std::getline(ss, e.prompt, ',') || !std::getline(ss, score_str))
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(lineno) + ": expected 4 fields");
        try {
            size_t pos = 0;
            e.score = std::stod(score_str, &pos);
            if (pos != score_str.size()) throw std::invalid_argument(score_str);
        } catch (const std::exception&) {
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(lineno) + ": bad score '" + score_str + "'");
        }
        if (e.score < 0.0 || e.score > 100.0)
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(lineno) + ": score outside [0,100]");
        table.entries.push_back(std::move(e));
    }
    return table;
}

// Per-annotator standardization: z = (s - mean) / sample std (n-1).
inline ScoreTable zscore_normalize(const ScoreTable& table) {
    std::map<std::string, std::pair<double, int>> acc;  // annotator -> (sum, count)
    for (const ScoreEntry& e : table.entries) {
        acc[e.annotator].first += e.score;
        acc[e.annotator].second += 1;
    }
    std::map<std::string, std::pair<double, double>> stats;  // annotator -> (mean, std)
    for (const auto& [annotator, sc] : acc) {
        if (sc.second < 2)
            throw Error(ErrorKind::BadConfig,
                        "zscore: annotator '" + annotator + "' has fewer than 2 scores");
        const double mean = sc.first / sc.second;
        double ss = 0.0;
        for (const ScoreEntry& e : table.entries)
            if (e.annotator == annotator) ss += (e.score - mean) * (e.score - mean);
        const double stdev = std::sqrt(ss / (sc.second - 1));
        if (stdev == 0.0)
            throw Error(ErrorKind::ZeroVariance,
                        "zscore: annotator '" + annotator + "' gave identical scores");
        stats[annotator] = {mean, stdev};
    }
    ScoreTable out = table;
    for (ScoreEntry& e : out.entries) {
        const auto& [mean, stdev] = stats[e.annotator];
        e.score = (e.score - mean) / stdev;
    }
    return out;
}

inline std::map<std::string, double> mean_score_by_model(const ScoreTable& table) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const ScoreEntry& e : table.entries) {
        acc[e.model].first += e.score;
        acc[e.model].second += 1;
    }
    std::map<std::string, double> out;
    for (const auto& [model, sc] : acc) out[model] = sc.first / sc.second;
    return out;
}

// ============================================================================
//  Rank aggregation
// ============================================================================

struct RankSummary {
    std::vector<std::string> models;          // sorted
    std::map<std::string, double> mean_rank;  // average over (annotator, prompt) cells
    std::map<std::string, int> mode_rank;     // most frequent floored rank, lowest on ties
};

// Ranks models 1..M per (annotator, prompt) cell by descending score; ties
// share the mean of the occupied positions. Every cell must contain exactly
// one score per model.
inline RankSummary rank_stats(const ScoreTable& table) {
    std::set<std::string> model_set;
    for (const ScoreEntry& e : table.entries) model_set.insert(e.model);
    const std::vector<std::string> models(model_set.begin(), model_set.end());
    const int m = static_cast<int>(models.size());

    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
    for (const ScoreEntry& e : table.entries) {
        auto& cell = cells[{e.annotator, e.prompt}];
        if (cell.count(e.model))
            throw Error(ErrorKind::MissingCell, "rank_stats: duplicate score for model '" +
                                                    e.model + "' in one (annotator, prompt) cell");
        cell[e.model] = e.score;
    }

    std::map<std::string, double> rank_sum;
    std::map<std::string, std::map<int, int>> floor_counts;
    int cell_count = 0;
    for (const auto& [key, cell] : cells) {
        if (static_cast<int>(cell.size()) != m)
            throw Error(ErrorKind::MissingCell,
                        "rank_stats: cell (" + key.first + ", " + key.second +
                            ") is missing scores for some models");
        // Sort by descending score; assign tied runs the mean position.
        std::vector<std::pair<double, std::string>> ordered;
        for (const auto& [model, score] : cell) ordered.emplace_back(score, model);
        std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        size_t i = 0;
        while (i < ordered.size()) {
            size_t j = i;
            while (j + 1 < ordered.size() && ordered[j + 1].first == ordered[i].first) ++j;
            const double shared = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
            for (size_t k = i; k <= j; ++k) {
                rank_sum[ordered[k].second] += shared;
                floor_counts[ordered[k].second][static_cast<int>(shared)] += 1;
            }
            i = j + 1;
        }
        ++cell_count;
    }
    if (cell_count == 0) throw Error(ErrorKind::MissingCell, "rank_stats: no cells");

    RankSummary out;
    out.models = models;
    for (const std::string& model : models) {
        out.mean_rank[model] = rank_sum[model] / cell_count;
        int best_rank = 0, best_count = -1;
        for (const auto& [rank, count] : floor_counts[model])
            if (count > best_count || (count == best_count && rank < best_rank)) {
                best_rank = rank;
                best_count = count;
            }
        out.mode_rank[model] = best_rank;
    }
    return out;
}

// ============================================================================
//  Elo
//
//  One comparison per (annotator, prompt, model pair); the higher score wins,
//  equal scores split the point. Comparisons are processed in a seed-shuffled
//  order with the update R <- R + k (S - E), E = 1 / (1 + 10^((R_opp - R)/400)).
//  Rating deltas are quantized to 2^-20 rating units and accumulated in
//  integers, making the zero-sum invariant exact no matter how many updates
//  run.
// ============================================================================

struct EloConfig {
    double k_factor = 32.0;
    double initial = 1500.0;
    uint64_t seed = 0;
};

inline std::map<std::string, double> elo_scores(const ScoreTable& table,
                                                const EloConfig& cfg = {}) {
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, double>>>
        cells;
    std::set<std::string> model_set;
    for (const ScoreEntry& e : table.entries) {
        cells[{e.annotator, e.prompt}].emplace_back(e.model, e.score);
        model_set.insert(e.model);
    }

    struct Comparison {
        std::string a, b;
        double score_a = 0.0;  // 1 win, 0.5 tie, 0 loss
    };
    std::vector<Comparison> comparisons;
    for (auto& [key, cell] : cells) {
        std::sort(cell.begin(), cell.end());
        for (size_t i = 0; i < cell.size(); ++i)
            for (size_t j = i + 1; j < cell.size(); ++j) {
                Comparison c;
                c.a = cell[i].first;
                c.b = cell[j].first;
                c.score_a = cell[i].second > cell[j].second   ? 1.0
                            : cell[i].second < cell[j].second ? 0.0
                                                              : 0.5;
                comparisons.push_back(std::move(c));
            }
    }
    if (comparisons.empty())
        throw Error(ErrorKind::NoComparisons, "elo: no comparable pairs in the table");

    Rng rng(cfg.seed);
    for (size_t i = comparisons.size() - 1; i > 0; --i)
        std::swap(comparisons[i], comparisons[rng.next_u64() % (i + 1)]);

    constexpr double kQuantum = 0x1.0p-20;  // rating resolution
    std::map<std::string, int64_t> offsets;
    for (const std::string& model : model_set) offsets[model] = 0;

    for (const Comparison& c : comparisons) {
        const double ra = cfg.initial + static_cast<double>(offsets[c.a]) * kQuantum;
        const double rb = cfg.initial + static_cast<double>(offsets[c.b]) * kQuantum;
        const double expect_a = 1.0 / (1.0 + std::pow(10.0, (rb - ra) / 400.0));
        const int64_t delta =
            static_cast<int64_t>(std::llround(cfg.k_factor * (c.score_a - expect_a) / kQuantum));
        offsets[c.a] += delta;
        offsets[c.b] -= delta;
    }

    std::map<std::string, double> ratings;
    for (const auto& [model, off] : offsets)
        ratings[model] = cfg.initial + static_cast<double>(off) * kQuantum;
    return ratings;
}

// Average ratings over `repeats` independently shuffled passes.
inline std::map<std::string, double> elo_scores_averaged(const ScoreTable& table, EloConfig cfg,
                                                         int repeats = 10) {
    if (repeats < 1) throw Error(ErrorKind::BadConfig, "elo: repeats must be >= 1");
    std::map<std::string, double> total;
    for (int r = 0; r < repeats; ++r) {
        EloConfig pass = cfg;
        pass.seed = mix64(cfg.seed + static_cast<uint64_t>(r));
        for (const auto& [model, rating] : elo_scores(table, pass)) total[model] += rating;
    }
    for (auto& [model, rating] : total) rating /= repeats;
    return total;
}

}  // namespace flowalign
