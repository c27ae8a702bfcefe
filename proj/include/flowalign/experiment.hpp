#pragma once

// Experiment wiring shared by the CLI and the acceptance harness: the run
// configuration file, the flow-matching pretraining stage, and the
// steps/CFG/best-of-N evaluation grid.
//
// All randomness forks from one top-level seed through named child streams
// (pretrain.*, align.*, eval, sample), so each stage is independently
// reproducible.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowalign/crpo.hpp"
#include "flowalign/flow.hpp"
#include "flowalign/metrics.hpp"
#include "flowalign/numkit.hpp"
#include "flowalign/preference.hpp"
#include "flowalign/reward.hpp"
#include "flowalign/synthdata.hpp"
#include "flowalign/vectorfield.hpp"

namespace flowalign {

enum class TimestepDist { LogitNormal, Uniform };

inline double draw_timestep(TimestepDist dist, Rng& rng) {
    return dist == TimestepDist::LogitNormal ? logit_normal_t(rng) : rng.uniform();
}

inline int draw_condition(const SyntheticTask& task, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int c = 0; c < task.num_conditions; ++c) {
        acc += task.prior[static_cast<size_t>(c)];
        if (u < acc) return c;
    }
    return task.num_conditions - 1;
}

// ============================================================================
//  Pretraining
// ============================================================================

struct PretrainConfig {
    int epochs = 20;
    int samples = 4096;  // training set size, drawn once up front
    int batch_size = 16;
    double lr = 5e-4;
    int warmup_steps = 100;
    double cond_dropout = 0.1;  // probability of replacing c with NULL
    TimestepDist t_dist = TimestepDist::LogitNormal;

    void validate() const {
        if (epochs < 1 || samples < 1 || batch_size < 1)
            throw Error(ErrorKind::BadConfig, "PretrainConfig: counts must be >= 1");
        if (cond_dropout < 0.0 || cond_dropout > 1.0)
            throw Error(ErrorKind::BadConfig, "PretrainConfig: cond_dropout must be in [0,1]");
    }
};

struct PretrainOutcome {
    ModelParameters params;
    std::vector<double> epoch_losses;
    long long steps = 0;
};

inline PretrainOutcome pretrain(const ModelConfig& model_cfg, const SyntheticTask& task,
                                const PretrainConfig& cfg, const Rng& root) {
    cfg.validate();
    Rng init_rng = root.child("pretrain.init");
    Rng data_rng = root.child("pretrain.data");
    Rng train_rng = root.child("pretrain.train");

    PretrainOutcome out;
    out.params = init_parameters(model_cfg, init_rng);

    std::vector<DataRecord> dataset;
    dataset.reserve(static_cast<size_t>(cfg.samples));
    for (int i = 0; i < cfg.samples; ++i) {
        const int c = draw_condition(task, data_rng);
        dataset.push_back({c, draw_data(task, c, data_rng)});
    }

    OptimizerState opt = make_optimizer(out.params, cfg.lr, cfg.warmup_steps);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[train_rng.next_u64() % i]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<std::pair<FlowSample, int>> batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) {
                const DataRecord& rec = dataset[order[i]];
                const double t = draw_timestep(cfg.t_dist, train_rng);
                FlowSample s = make_flow_sample(rec.x, train_rng, t);
                const int c =
                    (train_rng.uniform() < cfg.cond_dropout) ? kNullCondition : rec.c;
                batch.emplace_back(std::move(s), c);
            }
            const FmResult res = fm_loss(out.params, batch);
            adamw_step(opt, out.params, res.grads);
            epoch_loss += res.loss;
            ++batches;
        }
        out.epoch_losses.push_back(epoch_loss / batches);
    }
    out.steps = opt.step;
    return out;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& epoch_losses) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    out << "epoch,loss\n";
    for (size_t i = 0; i < epoch_losses.size(); ++i)
        out << (i + 1) << ',' << format_double(epoch_losses[i]) << '\n';
}

// ============================================================================
//  Evaluation grid: steps x cfg x best-of-N
// ============================================================================

struct EvalGridConfig {
    std::vector<int> steps_list = {50};
    std::vector<double> cfg_list = {4.5};
    std::vector<int> bon_list = {1};
    int num_samples = 256;  // per combination

    void validate() const {
        if (steps_list.empty() || cfg_list.empty() || bon_list.empty())
            throw Error(ErrorKind::BadConfig, "eval grid: sweep lists must be non-empty");
        for (int s : steps_list)
            if (s < 1) throw Error(ErrorKind::BadConfig, "eval grid: steps must be >= 1");
        for (int n : bon_list)
            if (n < 1) throw Error(ErrorKind::BadConfig, "eval grid: N must be >= 1");
        if (num_samples < 2) throw Error(ErrorKind::BadConfig, "eval grid: num_samples too small");
    }
};

struct EvalRow {
    int steps = 0;
    double cfg_scale = 0.0;
    int bon_n = 0;
    MetricsReport metrics;
    double sampling_ms = 0.0;
};

// Each combination gets its own child stream, so adding or removing
// combinations never perturbs the others.
inline std::vector<EvalRow> eval_grid(const ModelParameters& params, const SyntheticTask& task,
                                      const RewardModel& reward, const EvalGridConfig& grid,
                                      const Rng& root) {
    grid.validate();
    std::vector<EvalRow> rows;
    for (int steps : grid.steps_list)
        for (double w : grid.cfg_list)
            for (int n : grid.bon_list) {
                EvalRow row;
                row.steps = steps;
                row.cfg_scale = w;
                row.bon_n = n;
                SamplerConfig sampler;
                sampler.steps = steps;
                sampler.cfg_scale = w;

                const std::string tag = "eval.s" + std::to_string(steps) + ".w" +
                                        format_double(w) + ".n" + std::to_string(n);
                Rng gen_rng = root.child(tag + ".gen");
                Rng ref_rng = root.child(tag + ".ref");

                std::vector<Vec> gen, ref;
                gen.reserve(static_cast<size_t>(grid.num_samples));
                ref.reserve(static_cast<size_t>(grid.num_samples));
                double reward_sum = 0.0;
                const auto t0 = std::chrono::steady_clock::now();
                for (int i = 0; i < grid.num_samples; ++i) {
                    const int c = i % task.num_conditions;
                    BestOfN bon = best_of_n(reward, params, c, n, sampler, gen_rng);
                    reward_sum += bon.reward;
                    gen.push_back(std::move(bon.sample));
                    ref.push_back(draw_data(task, c, ref_rng));
                }
                row.sampling_ms = std::chrono::duration<double, std::milli>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count();
                row.metrics.mean_reward = reward_sum / grid.num_samples;
                row.metrics.fd_proxy = frechet_proxy(gen, ref);
                row.metrics.kl_proxy = kl_label_proxy(task, gen, ref);
                row.metrics.is_proxy = is_proxy(task, gen);
                row.metrics.gen_count = grid.num_samples;
                row.metrics.ref_count = grid.num_samples;
                rows.push_back(std::move(row));
            }
    return rows;
}

// The sampling_ms column is wall-clock and is the one field exempt from the
// bit-identical re-run contract.
inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    out << "steps,cfg,bon_n,mean_reward,fd_proxy,kl_proxy,is_proxy,sampling_ms\n";
    for (const EvalRow& r : rows)
        out << r.steps << ',' << format_double(r.cfg_scale) << ',' << r.bon_n << ','
            << format_double(r.metrics.mean_reward) << ',' << format_double(r.metrics.fd_proxy)
            << ',' << format_double(r.metrics.kl_proxy) << ','
            << format_double(r.metrics.is_proxy) << ',' << format_double(r.sampling_ms) << '\n';
}

// ============================================================================
//  Run configuration
// ============================================================================

struct TaskConfig {
    std::string kind = "rings";
    int conditions = 4;
    int data_dim = 2;
    double radius = 3.0;
    double var = 0.25;

    SyntheticTask build() const {
        if (kind != "rings") throw Error(ErrorKind::BadConfig, "unknown task kind: " + kind);
        return make_rings_task(conditions, data_dim, radius, var);
    }
};

struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/default";
    TaskConfig task;
    ModelConfig model;
    PretrainConfig pretrain_cfg;
    AlignConfig align_cfg;
    SamplerConfig sampler;  // inference defaults (sample/eval)
    EvalConfig eval_cfg;    // per-iteration alignment evaluation
    EvalGridConfig grid;
    int bank_size = 256;
};

namespace detail {

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig rc;
    detail::maybe_get(j, "seed", rc.seed);
    detail::maybe_get(j, "out_dir", rc.out_dir);
    detail::maybe_get(j, "bank_size", rc.bank_size);
    if (j.contains("task")) {
        const auto& t = j.at("task");
        detail::maybe_get(t, "kind", rc.task.kind);
        detail::maybe_get(t, "conditions", rc.task.conditions);
        detail::maybe_get(t, "data_dim", rc.task.data_dim);
        detail::maybe_get(t, "radius", rc.task.radius);
        detail::maybe_get(t, "var", rc.task.var);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::maybe_get(m, "hidden_dims", rc.model.hidden_dims);
        detail::maybe_get(m, "embed_dim", rc.model.embed_dim);
        detail::maybe_get(m, "time_features", rc.model.time_features);
        if (m.contains("activation"))
            rc.model.activation = activation_from_name(m.at("activation").get<std::string>());
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        detail::maybe_get(p, "epochs", rc.pretrain_cfg.epochs);
        detail::maybe_get(p, "samples", rc.pretrain_cfg.samples);
        detail::maybe_get(p, "batch_size", rc.pretrain_cfg.batch_size);
        detail::maybe_get(p, "lr", rc.pretrain_cfg.lr);
        detail::maybe_get(p, "warmup_steps", rc.pretrain_cfg.warmup_steps);
        detail::maybe_get(p, "cond_dropout", rc.pretrain_cfg.cond_dropout);
        if (p.contains("t_dist"))
            rc.pretrain_cfg.t_dist = p.at("t_dist").get<std::string>() == "uniform"
                                         ? TimestepDist::Uniform
                                         : TimestepDist::LogitNormal;
    }
    if (j.contains("align")) {
        const auto& a = j.at("align");
        detail::maybe_get(a, "iterations", rc.align_cfg.iterations);
        detail::maybe_get(a, "prompts_per_iter", rc.align_cfg.prompts_per_iter);
        detail::maybe_get(a, "candidates_per_prompt", rc.align_cfg.candidates_per_prompt);
        detail::maybe_get(a, "epochs_per_iter", rc.align_cfg.epochs_per_iter);
        detail::maybe_get(a, "batch_size", rc.align_cfg.batch_size);
        detail::maybe_get(a, "beta", rc.align_cfg.beta);
        detail::maybe_get(a, "lr", rc.align_cfg.lr);
        detail::maybe_get(a, "warmup_steps", rc.align_cfg.warmup_steps);
        detail::maybe_get(a, "prompts_with_replacement", rc.align_cfg.prompts_with_replacement);
        if (a.contains("loss")) rc.align_cfg.loss_kind = loss_kind_from_name(a.at("loss"));
        if (a.contains("mode")) rc.align_cfg.mode = align_mode_from_name(a.at("mode"));
        if (a.contains("sampler_steps")) rc.align_cfg.sampler.steps = a.at("sampler_steps");
        if (a.contains("sampler_cfg_scale"))
            rc.align_cfg.sampler.cfg_scale = a.at("sampler_cfg_scale");
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        detail::maybe_get(s, "steps", rc.sampler.steps);
        detail::maybe_get(s, "cfg_scale", rc.sampler.cfg_scale);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::maybe_get(e, "num_samples", rc.eval_cfg.num_samples);
        detail::maybe_get(e, "steps_sweep", rc.grid.steps_list);
        detail::maybe_get(e, "cfg_sweep", rc.grid.cfg_list);
        detail::maybe_get(e, "bon", rc.grid.bon_list);
        detail::maybe_get(e, "grid_samples", rc.grid.num_samples);
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, path + ": " + e.what());
    }
    return run_config_from_json(j);
}

// Output root override. When FLOWALIGN_OUT_ROOT is set, relative output
// directories are resolved under it.
inline std::string resolve_out_dir(const std::string& out_dir) {
    const char* root = std::getenv("FLOWALIGN_OUT_ROOT");
    if (root == nullptr || out_dir.empty() || std::filesystem::path(out_dir).is_absolute())
        return out_dir;
    return (std::filesystem::path(root) / out_dir).string();
}

}  // namespace flowalign
