#pragma once

// Synthetic conditional tasks: per-condition Gaussian mixtures with exact
// densities and Bayes posteriors, the prompt bank, and the JSON Lines dataset
// formats.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowalign/numkit.hpp"

namespace flowalign {

struct MixtureComponent {
    Vec mean;
    Matrix cov;
    double weight = 1.0;

    // Derived at task construction.
    Matrix cov_sqrt;
    Matrix cov_inv;
    double log_norm = 0.0;  // -0.5 * ln((2 pi)^d det cov)
};

struct SyntheticTask {
    int data_dim = 0;
    int num_conditions = 0;
    std::vector<std::vector<MixtureComponent>> conditions;  // [condition][component]
    Vec prior;  // over conditions, sums to 1

    const Vec& condition_mean(int c) const { return conditions[static_cast<size_t>(c)][0].mean; }
};

inline void finalize_task(SyntheticTask& task) {
    if (task.num_conditions < 1 || task.data_dim < 1)
        throw Error(ErrorKind::BadConfig, "task: need at least one condition and dimension");
    if (static_cast<int>(task.conditions.size()) != task.num_conditions)
        throw Error(ErrorKind::BadConfig, "task: condition count mismatch");
    if (task.prior.empty())
        task.prior.assign(static_cast<size_t>(task.num_conditions),
                          1.0 / static_cast<double>(task.num_conditions));
    double prior_sum = 0.0;
    for (double p : task.prior) prior_sum += p;
    if (std::abs(prior_sum - 1.0) > 1e-9)
        throw Error(ErrorKind::BadConfig, "task: prior must sum to 1");

    for (auto& comps : task.conditions) {
        if (comps.empty()) throw Error(ErrorKind::BadConfig, "task: empty mixture");
        double wsum = 0.0;
        for (auto& comp : comps) {
            if (static_cast<int>(comp.mean.size()) != task.data_dim)
                throw Error(ErrorKind::ShapeMismatch, "task: component mean dimension");
            wsum += comp.weight;
            comp.cov_sqrt = matrix_sqrt_psd(comp.cov);
            const SymEig eig = eigh_sym(comp.cov);
            double log_det = 0.0;
            for (double lambda : eig.values) {
                if (lambda <= 1e-12)
                    throw Error(ErrorKind::NotPsd, "task: covariance must be positive definite");
                log_det += std::log(lambda);
            }
            const int d = task.data_dim;
            comp.cov_inv = Matrix(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < d; ++k)
                        acc += eig.vectors(i, k) * eig.vectors(j, k) /
                               eig.values[static_cast<size_t>(k)];
                    comp.cov_inv(i, j) = acc;
                }
            comp.log_norm = -0.5 * (d * std::log(2.0 * M_PI) + log_det);
        }
        if (std::abs(wsum - 1.0) > 1e-9)
            throw Error(ErrorKind::BadConfig, "task: component weights must sum to 1");
    }
}

// The default benchmark task: K single-Gaussian conditions with means on a
// circle of the given radius and isotropic covariance var * I.
inline SyntheticTask make_rings_task(int num_conditions = 4, int data_dim = 2,
                                     double radius = 3.0, double var = 0.25) {
    if (data_dim < 2) throw Error(ErrorKind::BadConfig, "rings task needs data_dim >= 2");
    SyntheticTask task;
    task.data_dim = data_dim;
    task.num_conditions = num_conditions;
    for (int c = 0; c < num_conditions; ++c) {
        const double angle = 2.0 * M_PI * c / num_conditions;
        MixtureComponent comp;
        comp.mean.assign(static_cast<size_t>(data_dim), 0.0);
        comp.mean[0] = radius * std::cos(angle);
        comp.mean[1] = radius * std::sin(angle);
        comp.cov = Matrix(data_dim, data_dim);
        for (int i = 0; i < data_dim; ++i) comp.cov(i, i) = var;
        comp.weight = 1.0;
        task.conditions.push_back({comp});
    }
    finalize_task(task);
    return task;
}

inline Vec draw_data(const SyntheticTask& task, int c, Rng& rng) {
    if (c < 0 || c >= task.num_conditions)
        throw Error(ErrorKind::BadCondition, "draw_data: condition out of range");
    const auto& comps = task.conditions[static_cast<size_t>(c)];
    size_t pick = comps.size() - 1;
    if (comps.size() > 1) {
        const double u = rng.uniform();
        double acc = 0.0;
        for (size_t j = 0; j < comps.size(); ++j) {
            acc += comps[j].weight;
            if (u < acc) {
                pick = j;
                break;
            }
        }
    }
    const MixtureComponent& comp = comps[pick];
    const Vec z = gaussian(rng, task.data_dim);
    Vec x = comp.mean;
    for (int i = 0; i < task.data_dim; ++i)
        for (int j = 0; j < task.data_dim; ++j)
            x[static_cast<size_t>(i)] += comp.cov_sqrt(i, j) * z[static_cast<size_t>(j)];
    return x;
}

inline double log_component_density(const MixtureComponent& comp, const Vec& x) {
    const size_t d = comp.mean.size();
    Vec diff(d);
    for (size_t i = 0; i < d; ++i) diff[i] = x[i] - comp.mean[i];
    double quad = 0.0;
    for (size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < d; ++j)
            acc += comp.cov_inv(static_cast<int>(i), static_cast<int>(j)) * diff[j];
        quad += diff[i] * acc;
    }
    return comp.log_norm - 0.5 * quad;
}

// Bayes posterior p(c | x) under the task's mixtures and prior, normalized
// with log-sum-exp.
inline Vec posterior(const SyntheticTask& task, const Vec& x) {
    Vec logp(static_cast<size_t>(task.num_conditions));
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < task.num_conditions; ++c) {
        const auto& comps = task.conditions[static_cast<size_t>(c)];
        double m = -std::numeric_limits<double>::infinity();
        Vec terms(comps.size());
        for (size_t j = 0; j < comps.size(); ++j) {
            terms[j] = std::log(comps[j].weight) + log_component_density(comps[j], x);
            m = std::max(m, terms[j]);
        }
        double s = 0.0;
        for (double v : terms) s += std::exp(v - m);
        logp[static_cast<size_t>(c)] = std::log(task.prior[static_cast<size_t>(c)]) + m + std::log(s);
        best = std::max(best, logp[static_cast<size_t>(c)]);
    }
    double z = 0.0;
    for (double v : logp) z += std::exp(v - best);
    Vec post(logp.size());
    for (size_t c = 0; c < logp.size(); ++c) post[c] = std::exp(logp[c] - best) / z;
    return post;
}

// ============================================================================
//  Prompt bank
// ============================================================================

struct PromptBank {
    std::vector<int> conditions;
};

inline PromptBank make_prompt_bank(const SyntheticTask& task, int size) {
    if (size < 1) throw Error(ErrorKind::BadConfig, "prompt bank must be non-empty");
    PromptBank bank;
    bank.conditions.resize(static_cast<size_t>(size));
    for (int i = 0; i < size; ++i)
        bank.conditions[static_cast<size_t>(i)] = i % task.num_conditions;
    return bank;
}

inline std::vector<int> sample_prompts(const PromptBank& bank, int m, Rng& rng) {
    if (bank.conditions.empty()) throw Error(ErrorKind::BadConfig, "prompt bank is empty");
    if (m < 1) throw Error(ErrorKind::BadConfig, "sample_prompts: m must be >= 1");
    std::vector<int> out(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i)
        out[static_cast<size_t>(i)] =
            bank.conditions[static_cast<size_t>(rng.next_u64() % bank.conditions.size())];
    return out;
}

// Partial Fisher-Yates draw of m distinct bank entries.
inline std::vector<int> sample_prompts_without_replacement(const PromptBank& bank, int m,
                                                           Rng& rng) {
    if (bank.conditions.empty()) throw Error(ErrorKind::BadConfig, "prompt bank is empty");
    if (m < 1 || static_cast<size_t>(m) > bank.conditions.size())
        throw Error(ErrorKind::BadConfig,
                    "sample_prompts_without_replacement: need 1 <= m <= bank size");
    std::vector<int> pool = bank.conditions;
    std::vector<int> out(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const size_t j =
            static_cast<size_t>(i) + rng.next_u64() % (pool.size() - static_cast<size_t>(i));
        std::swap(pool[static_cast<size_t>(i)], pool[j]);
        out[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    return out;
}

// ============================================================================
//  JSON Lines formats
//
//  Samples:  {"c": int, "x": [floats]}
//  Pairs:    {"c": int, "xw": [...], "xl": [...], "rw": f, "rl": f, "iter": int}
//  Floats are written with 17 significant digits so round-trips are exact.
// ============================================================================

struct DataRecord {
    int c = 0;
    Vec x;
};

struct PreferencePair {
    int c = 0;
    Vec winner;
    Vec loser;
    double winner_reward = 0.0;
    double loser_reward = 0.0;
    int iteration = 0;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_vec(const Vec& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += format_double(v[i]);
    }
    s += "]";
    return s;
}

inline void write_samples_jsonl(const std::string& path, const std::vector<DataRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    for (const DataRecord& r : records)
        out << "{\"c\":" << r.c << ",\"x\":" << format_vec(r.x) << "}\n";
}

inline std::vector<DataRecord> read_samples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
    std::vector<DataRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            DataRecord r;
            r.c = j.at("c").get<int>();
            r.x = j.at("x").get<Vec>();
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

inline void write_pairs_jsonl(const std::string& path, const std::vector<PreferencePair>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    for (const PreferencePair& p : pairs) {
        out << "{\"c\":" << p.c << ",\"xw\":" << format_vec(p.winner)
            << ",\"xl\":" << format_vec(p.loser) << ",\"rw\":" << format_double(p.winner_reward)
            << ",\"rl\":" << format_double(p.loser_reward) << ",\"iter\":" << p.iteration << "}\n";
    }
}

inline std::vector<PreferencePair> read_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
    std::vector<PreferencePair> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            PreferencePair p;
            p.c = j.at("c").get<int>();
            p.winner = j.at("xw").get<Vec>();
            p.loser = j.at("xl").get<Vec>();
            p.winner_reward = j.at("rw").get<double>();
            p.loser_reward = j.at("rl").get<double>();
            p.iteration = j.at("iter").get<int>();
            pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return pairs;
}

}  // namespace flowalign
