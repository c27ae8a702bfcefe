// flowalign CLI: pretrain / align / sample / eval / subjective / selfcheck.
//
// All commands take an optional --config JSON file; flags override config
// values. Outputs are deterministic functions of (seed, config) except for
// wall-clock columns.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowalign/flowalign.hpp"

namespace fs = std::filesystem;
using namespace flowalign;

namespace {

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run-config file");
    cmd->add_option("--seed", args.seed, "top-level seed (overrides config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig rc;
    if (!args.config_path.empty()) rc = load_run_config(args.config_path);
    if (args.seed_set) rc.seed = args.seed;
    if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
    rc.out_dir = resolve_out_dir(rc.out_dir);
    return rc;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

int cmd_pretrain(const CommonArgs& common, int epochs_override) {
    RunConfig rc = resolve_config(common);
    if (epochs_override != 0) rc.pretrain_cfg.epochs = epochs_override;
    rc.pretrain_cfg.validate();

    const SyntheticTask task = rc.task.build();
    rc.model.num_conditions = task.num_conditions;
    rc.model.data_dim = task.data_dim;

    fs::create_directories(rc.out_dir);
    const Rng root(rc.seed);
    const PretrainOutcome out = pretrain(rc.model, task, rc.pretrain_cfg, root.child("pretrain"));

    const std::string ckpt = (fs::path(rc.out_dir) / "model.rfck").string();
    save_checkpoint(ckpt, out.params, out.steps);
    write_loss_csv((fs::path(rc.out_dir) / "pretrain_loss.csv").string(), out.epoch_losses);
    std::cout << "pretrained " << out.steps << " steps, first-epoch loss "
              << out.epoch_losses.front() << ", final-epoch loss " << out.epoch_losses.back()
              << "\ncheckpoint: " << ckpt << "\n";
    return 0;
}

int cmd_align(const CommonArgs& common, const std::string& checkpoint, const std::string& mode,
              const std::string& loss, int iterations, bool without_replacement) {
    RunConfig rc = resolve_config(common);
    if (!mode.empty()) rc.align_cfg.mode = align_mode_from_name(mode);
    if (!loss.empty()) rc.align_cfg.loss_kind = loss_kind_from_name(loss);
    if (iterations != 0) rc.align_cfg.iterations = iterations;
    if (without_replacement) rc.align_cfg.prompts_with_replacement = false;
    rc.align_cfg.validate();

    const Checkpoint ck = load_checkpoint(checkpoint);
    const SyntheticTask task = rc.task.build();
    if (ck.params.config.num_conditions != task.num_conditions ||
        ck.params.config.data_dim != task.data_dim)
        throw Error(ErrorKind::ShapeMismatch, "checkpoint does not match the configured task");

    const PromptBank bank = make_prompt_bank(task, rc.bank_size);
    const RewardModel reward = make_cosine_reward(task);
    rc.eval_cfg.sampler = rc.sampler;

    const std::string run_dir =
        (fs::path(rc.out_dir) / (align_mode_name(rc.align_cfg.mode) + "_" +
                                 loss_kind_name(rc.align_cfg.loss_kind)))
            .string();
    const Rng root(rc.seed);
    const auto records = run_alignment(ck.params, task, bank, reward, rc.align_cfg, rc.eval_cfg,
                                       root.child("align"), run_dir);
    std::cout << "alignment finished: " << records.size() << " iterations\n";
    for (const auto& r : records)
        std::cout << "  iter " << r.iteration << " mean_reward " << r.metrics.mean_reward
                  << " kl " << r.metrics.kl_proxy << " margin " << r.margin << "\n";
    std::cout << "run dir: " << run_dir << "\n";
    return 0;
}

int cmd_sample(const CommonArgs& common, const std::string& checkpoint, int condition, int count,
               int steps, double cfg_scale) {
    RunConfig rc = resolve_config(common);
    if (steps != 0) rc.sampler.steps = steps;
    if (cfg_scale >= 0.0) rc.sampler.cfg_scale = cfg_scale;
    rc.sampler.validate();
    if (count < 1) throw Error(ErrorKind::BadConfig, "sample: count must be >= 1");

    const Checkpoint ck = load_checkpoint(checkpoint);
    const int k = ck.params.config.num_conditions;
    if (condition >= k || condition < -1)
        throw Error(ErrorKind::BadCondition,
                    "sample: condition must be in [0," + std::to_string(k) + ") or -1");

    fs::create_directories(rc.out_dir);
    Rng rng = Rng(rc.seed).child("sample");
    std::vector<DataRecord> records;
    records.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int c = condition >= 0 ? condition : i % k;
        records.push_back({c, euler_sample(ck.params, c, rc.sampler, rng)});
    }
    const std::string path = (fs::path(rc.out_dir) / "samples.jsonl").string();
    write_samples_jsonl(path, records);
    std::cout << "wrote " << count << " samples to " << path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint, const std::string& steps_csv,
             const std::string& cfg_csv, const std::string& bon_csv, int num_samples) {
    RunConfig rc = resolve_config(common);
    if (!steps_csv.empty()) rc.grid.steps_list = parse_int_list(steps_csv);
    if (!cfg_csv.empty()) rc.grid.cfg_list = parse_double_list(cfg_csv);
    if (!bon_csv.empty()) rc.grid.bon_list = parse_int_list(bon_csv);
    if (num_samples != 0) rc.grid.num_samples = num_samples;
    rc.grid.validate();

    const Checkpoint ck = load_checkpoint(checkpoint);
    const SyntheticTask task = rc.task.build();
    if (ck.params.config.num_conditions != task.num_conditions ||
        ck.params.config.data_dim != task.data_dim)
        throw Error(ErrorKind::ShapeMismatch, "checkpoint does not match the configured task");
    const RewardModel reward = make_cosine_reward(task);

    fs::create_directories(rc.out_dir);
    const Rng root(rc.seed);
    const auto rows = eval_grid(ck.params, task, reward, rc.grid, root.child("eval"));
    const std::string path = (fs::path(rc.out_dir) / "eval.csv").string();
    write_eval_csv(path, rows);
    std::cout << "wrote " << rows.size() << " rows to " << path << "\n";
    return 0;
}

int cmd_subjective(const std::string& scores_csv, const std::string& out_path, double elo_k,
                   double elo_initial, uint64_t elo_seed, int elo_repeats) {
    const ScoreTable raw = read_score_csv(scores_csv);
    if (raw.entries.empty())
        throw Error(ErrorKind::ParseError, scores_csv + ": no score rows");
    const ScoreTable z = zscore_normalize(raw);
    const auto zmeans = mean_score_by_model(z);
    const RankSummary ranks = rank_stats(raw);
    EloConfig elo_cfg;
    elo_cfg.k_factor = elo_k;
    elo_cfg.initial = elo_initial;
    elo_cfg.seed = elo_seed;
    const auto elo = elo_scores(z, elo_cfg);
    const auto elo_avg = elo_scores_averaged(z, elo_cfg, elo_repeats);

    nlohmann::json leaderboard = nlohmann::json::array();
    for (const std::string& model : ranks.models) {
        leaderboard.push_back({{"model", model},
                               {"zscore_mean", zmeans.at(model)},
                               {"mean_rank", ranks.mean_rank.at(model)},
                               {"mode_rank", ranks.mode_rank.at(model)},
                               {"elo", elo.at(model)},
                               {"elo_avg", elo_avg.at(model)}});
    }
    const std::string json_text = leaderboard.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << json_text;
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot open " + out_path + " for writing");
        out << json_text;
        std::cout << "wrote leaderboard to " << out_path << "\n";
    }
    return 0;
}

// Exactness harness: the Euler sampler on the analytic single-point field
// must hit the target to 1e-9 for every step count, and the PRNG must
// reproduce its known-answer vectors.
int cmd_selfcheck() {
    bool ok = true;

    const Vec target = {1.25, -3.5};
    auto field = [&](const Vec& x, double t) {
        Vec v(x.size());
        for (size_t i = 0; i < x.size(); ++i) v[i] = (x[i] - target[i]) / t;
        return v;
    };
    Rng rng(20240);
    for (int steps : {1, 2, 10, 50, 100}) {
        Vec x0 = gaussian(rng, 2);
        const Vec out = euler_integrate(field, x0, steps);
        double err = 0.0;
        for (size_t i = 0; i < out.size(); ++i) err = std::max(err, std::abs(out[i] - target[i]));
        const bool pass = err < 1e-9;
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " euler steps=" << steps << " max_err=" << err
                  << "\n";
    }

    Rng zero(0);
    const bool prng_ok = zero.next_u64() == 0xe220a8397b1dcdafull &&
                         zero.next_u64() == 0x6e789e6aa1b965f4ull;
    ok = ok && prng_ok;
    std::cout << (prng_ok ? "PASS" : "FAIL") << " splitmix64 known-answer vectors\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rectified-flow training and preference alignment on synthetic tasks"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* pre = app.add_subcommand("pretrain", "train the base velocity-field model");
    add_common(pre, common);
    int pre_epochs = 0;
    pre->add_option("--epochs", pre_epochs, "pretraining epochs")->check(CLI::PositiveNumber);

    auto* align = app.add_subcommand("align", "run preference-alignment iterations");
    add_common(align, common);
    std::string align_ckpt, align_mode, align_loss;
    int align_iters = 0;
    bool align_without_replacement = false;
    align->add_option("--checkpoint", align_ckpt, "base checkpoint (.rfck)")->required();
    align->add_option("--mode", align_mode, "online|offline")
        ->check(CLI::IsMember({"online", "offline"}));
    align->add_option("--loss", align_loss, "crpo|dpo-fm")
        ->check(CLI::IsMember({"crpo", "dpo-fm"}));
    align->add_option("--iterations", align_iters, "alignment iterations")
        ->check(CLI::PositiveNumber);
    align->add_flag("--prompts-without-replacement", align_without_replacement,
                    "draw each iteration's prompts without replacement");

    auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    add_common(sample, common);
    std::string sample_ckpt;
    int sample_condition = -1, sample_count = 16, sample_steps = 0;
    double sample_cfg = -1.0;
    sample->add_option("--checkpoint", sample_ckpt, "checkpoint (.rfck)")->required();
    sample->add_option("--condition", sample_condition,
                       "condition index (-1 cycles all conditions)");
    sample->add_option("--count", sample_count, "number of samples");
    sample->add_option("--steps", sample_steps, "euler steps")->check(CLI::PositiveNumber);
    sample->add_option("--cfg", sample_cfg, "guidance scale");

    auto* ev = app.add_subcommand("eval", "metric grid over steps, CFG scales and best-of-N");
    add_common(ev, common);
    std::string eval_ckpt, eval_steps, eval_cfgs, eval_bon;
    int eval_samples = 0;
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint (.rfck)")->required();
    ev->add_option("--steps", eval_steps, "comma-separated step counts");
    ev->add_option("--cfg", eval_cfgs, "comma-separated guidance scales");
    ev->add_option("--bon", eval_bon, "comma-separated best-of-N values");
    ev->add_option("--samples", eval_samples, "samples per combination")
        ->check(CLI::PositiveNumber);

    auto* subj = app.add_subcommand("subjective", "subjective score statistics from a CSV");
    std::string subj_csv, subj_out;
    double elo_k = 32.0, elo_initial = 1500.0;
    uint64_t elo_seed = 0;
    int elo_repeats = 10;
    subj->add_option("scores", subj_csv, "CSV with header annotator,model,prompt,score")
        ->required();
    subj->add_option("--out", subj_out, "leaderboard JSON path (default: stdout)");
    subj->add_option("--elo-k", elo_k, "Elo K-factor");
    subj->add_option("--elo-initial", elo_initial, "Elo initial rating");
    subj->add_option("--elo-seed", elo_seed, "Elo shuffle seed");
    subj->add_option("--elo-repeats", elo_repeats, "shuffle passes in the averaged Elo");

    app.add_subcommand("selfcheck", "run the analytic exactness harness");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return cmd_pretrain(common, pre_epochs);
        if (align->parsed())
            return cmd_align(common, align_ckpt, align_mode, align_loss, align_iters,
                             align_without_replacement);
        if (sample->parsed())
            return cmd_sample(common, sample_ckpt, sample_condition, sample_count, sample_steps,
                              sample_cfg);
        if (ev->parsed())
            return cmd_eval(common, eval_ckpt, eval_steps, eval_cfgs, eval_bon, eval_samples);
        if (subj->parsed())
            return cmd_subjective(subj_csv, subj_out, elo_k, elo_initial, elo_seed, elo_repeats);
        return cmd_selfcheck();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
