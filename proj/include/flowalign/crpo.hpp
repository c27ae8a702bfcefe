#pragma once

// The alignment orchestrator: iterative cycles of batched candidate
// generation, reward ranking into preference pairs, and preference
// optimization against a per-iteration refreshed reference model. Supports
// online mode (regenerate the dataset from the current checkpoint every
// iteration) and offline mode (generate once from the base checkpoint and
// reuse it).

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowalign/flow.hpp"
#include "flowalign/metrics.hpp"
#include "flowalign/numkit.hpp"
#include "flowalign/preference.hpp"
#include "flowalign/reward.hpp"
#include "flowalign/synthdata.hpp"
#include "flowalign/vectorfield.hpp"

namespace flowalign {

enum class AlignMode { Online, Offline };

inline std::string align_mode_name(AlignMode m) {
    return m == AlignMode::Online ? "online" : "offline";
}

inline AlignMode align_mode_from_name(const std::string& s) {
    if (s == "online") return AlignMode::Online;
    if (s == "offline") return AlignMode::Offline;
    throw Error(ErrorKind::BadConfig, "unknown align mode: " + s);
}

struct AlignConfig {
    int iterations = 5;
    int prompts_per_iter = 64;      // m, drawn from the bank with replacement
    int candidates_per_prompt = 5;  // N
    int epochs_per_iter = 8;
    int batch_size = 16;
    LossKind loss_kind = LossKind::Crpo;
    AlignMode mode = AlignMode::Online;
    double beta = 1.0;
    double lr = 1e-3;
    int warmup_steps = 10;
    bool prompts_with_replacement = true;  // bank draw mode for M_k
    SamplerConfig sampler;                 // used for candidate generation

    void validate() const {
        if (iterations < 1 || prompts_per_iter < 1 || candidates_per_prompt < 1 ||
            epochs_per_iter < 1 || batch_size < 1)
            throw Error(ErrorKind::BadConfig, "AlignConfig: all counts must be >= 1");
        if (beta <= 0.0) throw Error(ErrorKind::BadConfig, "AlignConfig: beta must be > 0");
        sampler.validate();
    }
};

struct PreferenceDataset {
    std::vector<PreferencePair> pairs;
    int degenerate_prompts = 0;  // prompts skipped because all rewards tied
    int iteration = 0;
};

// Candidate generation with an injectable sampler, so tests can stub the
// model out. sample_fn(condition, rng) must return one candidate.
template <typename SampleFn>
PreferenceDataset generate_preference_dataset_with(SampleFn&& sample_fn, const RewardModel& reward,
                                                   const std::vector<int>& prompts,
                                                   int candidates_per_prompt, const Rng& gen_rng,
                                                   int iteration) {
    if (candidates_per_prompt < 2)
        throw Error(ErrorKind::BadConfig, "preference generation needs N >= 2");
    PreferenceDataset out;
    out.iteration = iteration;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const int c = prompts[pi];
        // Per-prompt child stream: results do not depend on prompt scheduling.
        Rng prompt_rng = gen_rng.child(pi);
        std::vector<Vec> candidates;
        candidates.reserve(static_cast<size_t>(candidates_per_prompt));
        for (int j = 0; j < candidates_per_prompt; ++j)
            candidates.push_back(sample_fn(c, prompt_rng));
        RankedCandidates ranked = rank_candidates(reward, c, std::move(candidates));
        if (ranked.degenerate) {
            ++out.degenerate_prompts;
            continue;
        }
        PreferencePair pair;
        pair.c = c;
        pair.winner = ranked.candidates[static_cast<size_t>(ranked.winner_index)];
        pair.loser = ranked.candidates[static_cast<size_t>(ranked.loser_index)];
        pair.winner_reward = ranked.rewards[static_cast<size_t>(ranked.winner_index)];
        pair.loser_reward = ranked.rewards[static_cast<size_t>(ranked.loser_index)];
        pair.iteration = iteration;
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

inline PreferenceDataset generate_preference_dataset(const ModelParameters& params,
                                                     const SyntheticTask& task,
                                                     const PromptBank& bank,
                                                     const RewardModel& reward,
                                                     const AlignConfig& cfg, Rng& rng,
                                                     int iteration) {
    cfg.validate();
    (void)task;
    const std::vector<int> prompts =
        cfg.prompts_with_replacement
            ? sample_prompts(bank, cfg.prompts_per_iter, rng)
            : sample_prompts_without_replacement(bank, cfg.prompts_per_iter, rng);
    return generate_preference_dataset_with(
        [&](int c, Rng& prompt_rng) { return euler_sample(params, c, cfg.sampler, prompt_rng); },
        reward, prompts, cfg.candidates_per_prompt, rng, iteration);
}

// ============================================================================
//  One preference-optimization iteration
// ============================================================================

struct AlignOutcome {
    ModelParameters params;
    double first_batch_loss = 0.0;        // evaluated at theta = theta_ref
    double first_batch_winning_fm = 0.0;  // winning FM term of that batch
    std::vector<double> epoch_losses;     // mean loss per epoch
};

// Freezes theta_ref at pi_k, then runs epochs of minibatch AdamW on the
// configured preference loss. Returns the last-epoch parameters.
inline AlignOutcome align_iteration(const ModelParameters& pi_k,
                                    const std::vector<PreferencePair>& dataset,
                                    const AlignConfig& cfg, Rng& rng) {
    cfg.validate();
    if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "align_iteration: empty dataset");

    const ModelParameters theta_ref = clone_frozen(pi_k);
    AlignOutcome out;
    out.params = pi_k;
    OptimizerState opt = make_optimizer(out.params, cfg.lr, cfg.warmup_steps);

    DpoConfig dpo_cfg;
    dpo_cfg.beta = cfg.beta;
    dpo_cfg.loss_kind = cfg.loss_kind;

    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool first_batch = true;
    for (int epoch = 0; epoch < cfg.epochs_per_iter; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_u64() % i]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<PreferencePair> chunk;
            chunk.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) chunk.push_back(dataset[order[i]]);
            const auto items = make_preference_batch(chunk, rng);
            const PreferenceResult res =
                detail::preference_loss(out.params, theta_ref, items, dpo_cfg, true);
            if (first_batch) {
                out.first_batch_loss = res.loss;
                out.first_batch_winning_fm = res.mean_winning_loss;
                first_batch = false;
            }
            adamw_step(opt, out.params, res.grads);
            epoch_loss += res.loss;
            ++batches;
        }
        out.epoch_losses.push_back(epoch_loss / batches);
    }
    return out;
}

// ============================================================================
//  Evaluation
// ============================================================================

struct EvalConfig {
    int num_samples = 512;  // generated and reference samples per report
    SamplerConfig sampler;
};

// Balanced round-robin over conditions; generated and reference sets share
// the condition sequence.
inline MetricsReport evaluate_model(const ModelParameters& params, const SyntheticTask& task,
                                    const RewardModel& reward, const EvalConfig& cfg, Rng& rng) {
    cfg.sampler.validate();
    if (cfg.num_samples < task.data_dim + 1)
        throw Error(ErrorKind::TooFewSamples, "evaluate_model: need at least dim+1 samples");
    MetricsReport report;
    std::vector<Vec> gen, ref;
    gen.reserve(static_cast<size_t>(cfg.num_samples));
    ref.reserve(static_cast<size_t>(cfg.num_samples));
    Rng gen_rng = rng.child("eval.gen");
    Rng ref_rng = rng.child("eval.ref");
    double reward_sum = 0.0;
    for (int i = 0; i < cfg.num_samples; ++i) {
        const int c = i % task.num_conditions;
        Vec x = euler_sample(params, c, cfg.sampler, gen_rng);
        reward_sum += score(reward, c, x);
        gen.push_back(std::move(x));
        ref.push_back(draw_data(task, c, ref_rng));
    }
    report.mean_reward = reward_sum / cfg.num_samples;
    report.fd_proxy = frechet_proxy(gen, ref);
    report.kl_proxy = kl_label_proxy(task, gen, ref);
    report.is_proxy = is_proxy(task, gen);
    report.gen_count = cfg.num_samples;
    report.ref_count = cfg.num_samples;
    return report;
}

// ============================================================================
//  The full loop
// ============================================================================

struct IterationRecord {
    int iteration = 0;  // 1-based
    MetricsReport metrics;
    double win_loss = 0.0;
    double lose_loss = 0.0;
    double margin = 0.0;  // lose_loss - win_loss
    int pair_count = 0;
    int degenerate_prompts = 0;
    std::string dataset_path;
    std::string checkpoint_path;
};

inline nlohmann::json metrics_to_json(const IterationRecord& rec) {
    return nlohmann::json{{"iteration", rec.iteration},
                          {"mean_reward", rec.metrics.mean_reward},
                          {"fd_proxy", rec.metrics.fd_proxy},
                          {"kl_proxy", rec.metrics.kl_proxy},
                          {"is_proxy", rec.metrics.is_proxy},
                          {"win_loss", rec.win_loss},
                          {"lose_loss", rec.lose_loss},
                          {"margin", rec.margin},
                          {"pair_count", rec.pair_count},
                          {"degenerate_prompts", rec.degenerate_prompts}};
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<IterationRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    out << "iter,mean_reward,fd_proxy,kl_proxy,is_proxy,win_loss,lose_loss,margin\n";
    for (const IterationRecord& r : records)
        out << r.iteration << ',' << format_double(r.metrics.mean_reward) << ','
            << format_double(r.metrics.fd_proxy) << ',' << format_double(r.metrics.kl_proxy) << ','
            << format_double(r.metrics.is_proxy) << ',' << format_double(r.win_loss) << ','
            << format_double(r.lose_loss) << ',' << format_double(r.margin) << '\n';
}

// Runs the configured number of alignment iterations from pi_0. If run_dir is
// non-empty, writes iter_k/pairs.jsonl, iter_k/model.rfck, iter_k/metrics.json
// and a top-level trajectory.csv.
//
// Randomness forks off `root` via named streams (align.iter_k.gen / .train and
// a shared align.loss_eval), so generation, training, and evaluation are
// independently reproducible. Winning/losing losses are evaluated on the
// iteration's dataset with the same loss_eval seed every iteration, which
// keeps the trajectory comparable across iterations.
inline std::vector<IterationRecord> run_alignment(const ModelParameters& pi_0,
                                                  const SyntheticTask& task,
                                                  const PromptBank& bank,
                                                  const RewardModel& reward,
                                                  const AlignConfig& cfg,
                                                  const EvalConfig& eval_cfg, const Rng& root,
                                                  const std::string& run_dir = "") {
    cfg.validate();
    namespace fs = std::filesystem;
    if (!run_dir.empty()) fs::create_directories(run_dir);

    std::vector<IterationRecord> records;
    ModelParameters pi = pi_0;
    PreferenceDataset dataset;

    for (int k = 1; k <= cfg.iterations; ++k) {
        const std::string tag = "align.iter_" + std::to_string(k);
        if (cfg.mode == AlignMode::Online || k == 1) {
            Rng gen_rng = root.child(tag + ".gen");
            dataset = generate_preference_dataset(pi, task, bank, reward, cfg, gen_rng, k);
        }
        if (dataset.pairs.empty())
            throw Error(ErrorKind::EmptyDataset,
                        "alignment iteration " + std::to_string(k) + ": all prompts degenerate");

        Rng train_rng = root.child(tag + ".train");
        AlignOutcome outcome = align_iteration(pi, dataset.pairs, cfg, train_rng);
        pi = std::move(outcome.params);

        IterationRecord rec;
        rec.iteration = k;
        rec.pair_count = static_cast<int>(dataset.pairs.size());
        rec.degenerate_prompts = dataset.degenerate_prompts;

        Rng eval_rng = root.child(tag + ".eval");
        rec.metrics = evaluate_model(pi, task, reward, eval_cfg, eval_rng);

        Rng traj_rng = root.child("align.loss_eval");
        const TrajectoryLosses tl = loss_trajectory(pi, dataset.pairs, traj_rng);
        rec.win_loss = tl.winning;
        rec.lose_loss = tl.losing;
        rec.margin = tl.losing - tl.winning;

        if (!run_dir.empty()) {
            const fs::path iter_dir = fs::path(run_dir) / ("iter_" + std::to_string(k));
            fs::create_directories(iter_dir);
            rec.dataset_path = (iter_dir / "pairs.jsonl").string();
            rec.checkpoint_path = (iter_dir / "model.rfck").string();
            write_pairs_jsonl(rec.dataset_path, dataset.pairs);
            save_checkpoint(rec.checkpoint_path, pi, k);
            std::ofstream mj(iter_dir / "metrics.json", std::ios::trunc);
            mj << metrics_to_json(rec).dump(2) << "\n";
        }
        records.push_back(std::move(rec));
    }
    if (!run_dir.empty())
        write_trajectory_csv((fs::path(run_dir) / "trajectory.csv").string(), records);
    return records;
}

}  // namespace flowalign
