#include <cmath>
#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "flowalign/crpo.hpp"

using namespace flowalign;

namespace {

constexpr double kLn2 = 0.6931471805599453;

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.data_dim = 2;
    cfg.hidden_dims = {16};
    cfg.embed_dim = 4;
    cfg.time_features = 3;
    cfg.num_conditions = 4;
    return cfg;
}

AlignConfig fast_align() {
    AlignConfig cfg;
    cfg.iterations = 2;
    cfg.prompts_per_iter = 12;
    cfg.candidates_per_prompt = 3;
    cfg.epochs_per_iter = 2;
    cfg.batch_size = 6;
    cfg.sampler.steps = 6;
    cfg.sampler.cfg_scale = 1.0;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("identical stubbed candidates produce zero pairs") {
    SyntheticTask task = make_rings_task();
    RewardModel reward = make_negdistance_reward(task);
    const std::vector<int> prompts = {0, 1, 2, 3};
    const PreferenceDataset d = generate_preference_dataset_with(
        [](int, Rng&) { return Vec{1.0, 1.0}; }, reward, prompts, 2, Rng(5), 1);
    REQUIRE(d.pairs.empty());
    REQUIRE(d.degenerate_prompts == 4);
}

TEST_CASE("stubbed rewards select argmax winner and argmin loser") {
    // 1-D task with the anchor at 0; candidates [0.9, 0.1, 0.6, 0.8, 0.4]
    // realize the reward order [0.1, 0.9, 0.4, 0.2, 0.6] up to monotone
    // relabeling: winner is candidate 1, loser candidate 0.
    SyntheticTask task;
    task.data_dim = 1;
    task.num_conditions = 1;
    MixtureComponent comp;
    comp.mean = {0.0};
    comp.cov = Matrix(1, 1);
    comp.cov(0, 0) = 1.0;
    task.conditions = {{comp}};
    finalize_task(task);
    RewardModel reward = make_negdistance_reward(task);

    const Vec stub_values = {0.9, 0.1, 0.6, 0.8, 0.4};
    int call = 0;
    const PreferenceDataset d = generate_preference_dataset_with(
        [&](int, Rng&) {
            return Vec{stub_values[static_cast<size_t>(call++ % 5)]};
        },
        reward, std::vector<int>{0}, 5, Rng(6), 1);
    REQUIRE(d.pairs.size() == 1);
    REQUIRE(d.pairs[0].winner == Vec{0.1});
    REQUIRE(d.pairs[0].loser == Vec{0.9});
}

TEST_CASE("generated pairs always have strictly higher winner reward") {
    Rng init(1234);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 64);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    Rng gen(777);
    const PreferenceDataset d = generate_preference_dataset(p, task, bank, reward, cfg, gen, 1);
    REQUIRE_FALSE(d.pairs.empty());
    double wsum = 0.0, lsum = 0.0;
    for (const PreferencePair& pair : d.pairs) {
        REQUIRE(pair.winner_reward > pair.loser_reward);
        wsum += pair.winner_reward;
        lsum += pair.loser_reward;
    }
    REQUIRE(wsum / d.pairs.size() > lsum / d.pairs.size());
}

TEST_CASE("dataset generation is deterministic given the stream") {
    Rng init(4321);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    Rng g1(55), g2(55);
    const PreferenceDataset a = generate_preference_dataset(p, task, bank, reward, cfg, g1, 1);
    const PreferenceDataset b = generate_preference_dataset(p, task, bank, reward, cfg, g2, 1);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (size_t i = 0; i < a.pairs.size(); ++i) {
        REQUIRE(a.pairs[i].winner == b.pairs[i].winner);
        REQUIRE(a.pairs[i].loser == b.pairs[i].loser);
    }
}

TEST_CASE("align_iteration with zero learning rate is the identity") {
    Rng init(9);
    ModelParameters p = init_parameters(toy_config(), init);
    Rng data_rng(10);
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 8; ++i) {
        PreferencePair pr;
        pr.c = i % 4;
        pr.winner = gaussian(data_rng, 2);
        pr.loser = gaussian(data_rng, 2);
        pr.winner_reward = 1.0;
        pr.loser_reward = 0.0;
        pairs.push_back(std::move(pr));
    }
    AlignConfig cfg = fast_align();
    cfg.epochs_per_iter = 1;
    cfg.lr = 0.0;
    Rng train(11);
    const AlignOutcome out = align_iteration(p, pairs, cfg, train);
    REQUIRE(out.params.values == p.values);
}

TEST_CASE("first batch of an iteration evaluates at the reference point") {
    Rng init(12);
    ModelParameters p = init_parameters(toy_config(), init);
    Rng data_rng(13);
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 10; ++i) {
        PreferencePair pr;
        pr.c = i % 4;
        pr.winner = gaussian(data_rng, 2);
        pr.loser = gaussian(data_rng, 2);
        pairs.push_back(std::move(pr));
    }
    AlignConfig cfg = fast_align();

    cfg.loss_kind = LossKind::Crpo;
    Rng t1(14);
    const AlignOutcome crpo = align_iteration(p, pairs, cfg, t1);
    REQUIRE(std::abs(crpo.first_batch_loss - (kLn2 + crpo.first_batch_winning_fm)) < 1e-12);

    cfg.loss_kind = LossKind::DpoFm;
    Rng t2(14);
    const AlignOutcome dpo = align_iteration(p, pairs, cfg, t2);
    REQUIRE(std::abs(dpo.first_batch_loss - kLn2) < 1e-12);
}

TEST_CASE("align_iteration rejects an empty dataset") {
    Rng init(15);
    ModelParameters p = init_parameters(toy_config(), init);
    AlignConfig cfg = fast_align();
    Rng train(16);
    REQUIRE_THROWS_AS(align_iteration(p, {}, cfg, train), Error);
}

TEST_CASE("training reduces the configured loss across epochs on a toy run") {
    for (uint64_t seed : {17ull, 99ull, 1234ull}) {
        Rng init(seed);
        ModelParameters p = init_parameters(toy_config(), init);
        SyntheticTask task = make_rings_task();
        PromptBank bank = make_prompt_bank(task, 64);
        RewardModel reward = make_cosine_reward(task);
        AlignConfig cfg = fast_align();
        cfg.epochs_per_iter = 8;
        cfg.prompts_per_iter = 48;
        cfg.batch_size = 8;
        cfg.lr = 3e-3;
        Rng gen(seed + 1);
        const PreferenceDataset d =
            generate_preference_dataset(p, task, bank, reward, cfg, gen, 1);
        Rng train(seed + 2);
        const AlignOutcome out = align_iteration(p, d.pairs, cfg, train);
        REQUIRE(out.epoch_losses.size() == 8);
        REQUIRE(out.epoch_losses.back() < out.epoch_losses.front());
    }
}

TEST_CASE("online and offline coincide for a single iteration") {
    Rng init(20);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    cfg.iterations = 1;
    EvalConfig eval;
    eval.num_samples = 64;
    eval.sampler = cfg.sampler;

    cfg.mode = AlignMode::Online;
    const auto online = run_alignment(p, task, bank, reward, cfg, eval, Rng(21));
    cfg.mode = AlignMode::Offline;
    const auto offline = run_alignment(p, task, bank, reward, cfg, eval, Rng(21));
    REQUIRE(online.size() == 1);
    REQUIRE(online[0].metrics.mean_reward == offline[0].metrics.mean_reward);
    REQUIRE(online[0].metrics.fd_proxy == offline[0].metrics.fd_proxy);
    REQUIRE(online[0].win_loss == offline[0].win_loss);
}

TEST_CASE("run_alignment is bitwise deterministic in its seed") {
    Rng init(22);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    EvalConfig eval;
    eval.num_samples = 64;
    eval.sampler = cfg.sampler;

    const auto a = run_alignment(p, task, bank, reward, cfg, eval, Rng(23));
    const auto b = run_alignment(p, task, bank, reward, cfg, eval, Rng(23));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].metrics.mean_reward == b[i].metrics.mean_reward);
        REQUIRE(a[i].metrics.kl_proxy == b[i].metrics.kl_proxy);
        REQUIRE(a[i].win_loss == b[i].win_loss);
        REQUIRE(a[i].lose_loss == b[i].lose_loss);
    }
}

TEST_CASE("offline runs reuse the identical dataset file every iteration") {
    namespace fs = std::filesystem;
    Rng init(24);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    cfg.iterations = 3;
    cfg.mode = AlignMode::Offline;
    EvalConfig eval;
    eval.num_samples = 64;
    eval.sampler = cfg.sampler;

    const fs::path dir = fs::temp_directory_path() / "flowalign_test_offline_run";
    fs::remove_all(dir);
    const auto records = run_alignment(p, task, bank, reward, cfg, eval, Rng(25), dir.string());
    REQUIRE(records.size() == 3);
    const std::string first = read_file((dir / "iter_1" / "pairs.jsonl").string());
    REQUIRE_FALSE(first.empty());
    for (int k = 2; k <= 3; ++k)
        REQUIRE(read_file((dir / ("iter_" + std::to_string(k)) / "pairs.jsonl").string()) == first);
    REQUIRE(fs::exists(dir / "trajectory.csv"));
    REQUIRE(fs::exists(dir / "iter_2" / "model.rfck"));
    REQUIRE(fs::exists(dir / "iter_2" / "metrics.json"));
    fs::remove_all(dir);
}

TEST_CASE("online datasets change across iterations while the model moves") {
    namespace fs = std::filesystem;
    Rng init(26);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    cfg.iterations = 2;
    cfg.mode = AlignMode::Online;
    cfg.lr = 1e-3;
    EvalConfig eval;
    eval.num_samples = 64;
    eval.sampler = cfg.sampler;

    const fs::path dir = fs::temp_directory_path() / "flowalign_test_online_run";
    fs::remove_all(dir);
    run_alignment(p, task, bank, reward, cfg, eval, Rng(27), dir.string());
    const std::string d1 = read_file((dir / "iter_1" / "pairs.jsonl").string());
    const std::string d2 = read_file((dir / "iter_2" / "pairs.jsonl").string());
    REQUIRE(d1 != d2);
    fs::remove_all(dir);
}

TEST_CASE("trajectory csv has one row per iteration plus the header") {
    namespace fs = std::filesystem;
    Rng init(28);
    ModelParameters p = init_parameters(toy_config(), init);
    SyntheticTask task = make_rings_task();
    PromptBank bank = make_prompt_bank(task, 32);
    RewardModel reward = make_cosine_reward(task);
    AlignConfig cfg = fast_align();
    cfg.iterations = 2;
    EvalConfig eval;
    eval.num_samples = 64;
    eval.sampler = cfg.sampler;

    const fs::path dir = fs::temp_directory_path() / "flowalign_test_traj_run";
    fs::remove_all(dir);
    run_alignment(p, task, bank, reward, cfg, eval, Rng(29), dir.string());
    std::ifstream in(dir / "trajectory.csv");
    std::string line;
    int rows = 0;
    REQUIRE(std::getline(in, line));
    REQUIRE(line == "iter,mean_reward,fd_proxy,kl_proxy,is_proxy,win_loss,lose_loss,margin");
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2);
    fs::remove_all(dir);
}
