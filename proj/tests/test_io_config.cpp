#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "grlab/config.hpp"
#include "grlab/io.hpp"

using namespace grlab;

namespace {

const char* kBandit = R"(
[task]
kind = bandit
arm_rewards = 0, 0.8, 1

[algorithm]
kind = REINFORCE

[optimizer]
eta = 0.5
steps = 10
group_size = 8
)";

std::string config_error(const std::string& text) {
  try {
    parse_experiment(parse_ini(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const PolicyShape shape{4, 3, 2, true};
  RandomStream rng(6);
  Checkpoint ck{random_policy(shape, 3.0, rng), 42, 17};
  ck.policy = TabularPolicy(shape, std::vector<double>(ck.policy.logits().begin(), ck.policy.logits().end()), 9);
  std::stringstream ss;
  write_checkpoint(ss, ck);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "GRLABCK1");
  EXPECT_EQ(bytes.size(), 8 + 16 + 32 + 8 * ck.policy.logits().size());
  const auto back = read_checkpoint(ss);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.next_step, 17u);
  EXPECT_EQ(back.policy.version(), 9u);
  EXPECT_EQ(back.policy.shape(), shape);
  EXPECT_TRUE(std::equal(back.policy.logits().begin(), back.policy.logits().end(), ck.policy.logits().begin()));
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), DataError);
  const PolicyShape shape{2, 1, 1, true};
  std::stringstream ss;
  write_checkpoint(ss, {TabularPolicy(shape), 0, 0});
  std::string truncated = ss.str();
  truncated.pop_back();
  std::stringstream t(truncated);
  EXPECT_THROW(read_checkpoint(t), DataError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "grlab_test_checkpoint.bin";
  const PolicyShape shape{3, 1, 1, true};
  save_checkpoint(path, {policy_from_probabilities(shape, std::vector<double>{0.3, 0.6, 0.1}), 1, 2});
  const auto back = load_checkpoint(path);
  EXPECT_NEAR(std::exp(back.policy.log_prob(0, 1)), 0.6, 1e-15);
  std::filesystem::remove(path);
}

TEST(Metrics, JsonFieldNamesAndRoundTrip) {
  MetricsRecord m{3, 0.25, 0.01, 1.05, 0.375, 2.5, 0.125, 2, 4};
  const auto j = to_json(m);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"step", "mean_reward", "kl_to_init", "entropy_root", "clip_fraction",
                                            "mean_response_length", "grad_norm", "generator_version",
                                            "off_policyness"}));
  EXPECT_EQ(metrics_from_json(nlohmann::json::parse(j.dump())), m);
}

TEST(Metrics, WriterReaderRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "grlab_test_metrics.jsonl";
  std::vector<MetricsRecord> recs{{0, 0.1, 0.0, 1.0, 0.0, 1.0, 0.3, 0, 0}, {1, 1.0 / 3.0, 1e-17, 0.9, 1.0, 2.0, 0.2, 1, 1}};
  {
    MetricsWriter w(path);
    for (const auto& r : recs) w.write(r);
  }
  EXPECT_EQ(read_metrics(path), recs);
  std::filesystem::remove(path);
}

TEST(Config, ParsesBanditWithDefaults) {
  const auto cfg = parse_experiment(parse_ini(kBandit));
  ASSERT_TRUE(std::holds_alternative<BanditTask>(cfg.task));
  EXPECT_EQ(std::get<BanditTask>(cfg.task).arm_rewards, (std::vector<double>{0.0, 0.8, 1.0}));
  EXPECT_EQ(cfg.algorithm.kind, AlgorithmKind::reinforce);
  EXPECT_EQ(cfg.schedule.sync_interval, 1);
  EXPECT_EQ(cfg.optimizer.group_size, 8);
  EXPECT_FALSE(cfg.optimizer.grad_clip_norm);
}

TEST(Config, ReportsEveryProblemAtOnce) {
  const std::string msg = config_error(R"(
[task]
kind = bandit
arm_rewards = 0, 1

[algorithm]
kind = REC_OneSide_IS
eps_low = -0.1
tau = abc

[optimizer]
eta = 0.1
steps = 5
group_size = 1
)");
  EXPECT_NE(msg.find("algorithm.tau"), std::string::npos) << msg;
  EXPECT_NE(msg.find("clip margins"), std::string::npos) << msg;
  EXPECT_NE(msg.find("group_size"), std::string::npos) << msg;
}

TEST(Config, MissingAndUnknownKeys) {
  const std::string msg = config_error("[task]\nkind = sequence\ncolour = red\n[optimizer]\neta = 1\n");
  EXPECT_NE(msg.find("task.vocab_size"), std::string::npos) << msg;
  EXPECT_NE(msg.find("task.max_len"), std::string::npos) << msg;
  EXPECT_NE(msg.find("algorithm.kind"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key 'task.colour'"), std::string::npos) << msg;
  EXPECT_NE(config_error(std::string(kBandit) + "[algorithm]\nkind = PPO\n").size(), 0u);
  EXPECT_THROW(parse_ini("stray = 1\n[task]\nkind = bandit\n"), ConfigError);
  EXPECT_THROW(parse_ini("[task\n"), ConfigError);
}

TEST(Config, OverridesApply) {
  auto kv = parse_ini(kBandit);
  apply_overrides(kv, {"algorithm.kind=GRPO", "schedule.sync_offset=3", "optimizer.grad_clip_norm=1.5"});
  const auto cfg = parse_experiment(kv);
  EXPECT_EQ(cfg.algorithm.kind, AlgorithmKind::grpo);
  EXPECT_EQ(cfg.schedule.sync_offset, 3);
  EXPECT_EQ(cfg.optimizer.grad_clip_norm, 1.5);
  EXPECT_THROW(apply_overrides(kv, {"noequals"}), ConfigError);
  EXPECT_THROW(apply_overrides(kv, {"nosection=1"}), ConfigError);
}

TEST(Config, SnapshotRoundTrip) {
  const std::string seq = R"(
[task]
kind = sequence
vocab_size = 4
max_len = 4
num_prompts = 2
prompt_weights = 0.25, 0.75
targets = 0 1 2 3 | 2 1 0

[policy]
init = random
init_scale = 0.7

[algorithm]
kind = rec-ring-nois
eps_low_outer = 0.7
loss_norm = batch_token_mean

[schedule]
sync_interval = 2
sync_offset = 4

[optimizer]
eta = 0.1
steps = 3
group_size = 5
seed = 99
)";
  const auto cfg = parse_experiment(parse_ini(seq));
  const std::string snap = to_ini(cfg);
  const auto again = parse_experiment(parse_ini(snap));
  EXPECT_EQ(to_ini(again), snap);
  EXPECT_EQ(std::get<SequenceTask>(again.task).targets, (std::vector<TokenSeq>{{0, 1, 2, 3}, {2, 1, 0}}));
  EXPECT_EQ(again.algorithm.kind, AlgorithmKind::rec_ring_nois);
  EXPECT_EQ(again.algorithm.clip.eps_low_outer, 0.7);
  EXPECT_EQ(again.algorithm.loss_norm, LossNorm::batch_token_mean);
  const auto p1 = initial_policy(cfg);
  const auto p2 = initial_policy(again);
  EXPECT_TRUE(std::equal(p1.logits().begin(), p1.logits().end(), p2.logits().begin()));
}

TEST(Config, MultiStepRequiresMultiStepTask) {
  auto kv = parse_ini(kBandit);
  apply_overrides(kv, {"algorithm.kind=MultiStepREINFORCE"});
  EXPECT_THROW(parse_experiment(kv), ConfigError);
}

TEST(Config, ProbsInit) {
  auto kv = parse_ini(kBandit);
  apply_overrides(kv, {"policy.init=probs", "policy.init_probs=0.3, 0.6, 0.1"});
  const auto p = initial_policy(parse_experiment(kv));
  EXPECT_NEAR(std::exp(p.log_prob(0, 0)), 0.3, 1e-15);
  apply_overrides(kv, {"policy.init_probs=0.5, 0.5"});
  EXPECT_THROW(parse_experiment(kv), ConfigError);
}
