#include <gtest/gtest.h>

#include <cmath>

#include "grlab/tasks.hpp"

using namespace grlab;

namespace {

SequenceTask target_task() {
  SequenceTask t;
  t.vocab_size = 4;
  t.max_len = 4;
  t.num_prompts = 2;
  t.targets = {{0, 1, 2, 0}, {2, 1, 3}};
  return t;
}

// Logits putting (almost) all mass on `path`, then EOS.
TabularPolicy point_mass(const PolicyShape& s, int prompt, const TokenSeq& path) {
  TabularPolicy base(s);
  std::vector<double> logits(base.logits().begin(), base.logits().end());
  auto c = base.root(prompt);
  for (Token t : path) {
    logits[c.index() * s.vocab_size + t] = 60.0;
    if (static_cast<int>(c.depth()) + 1 == s.max_len) break;
    c.advance(t);
  }
  return TabularPolicy(s, logits);
}

}  // namespace

TEST(GroupStats, MeanAndPopulationStd) {
  const auto s = group_stats(std::vector<double>{1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_DOUBLE_EQ(s.std, 0.5);
  EXPECT_FALSE(s.weighted_mean);
}

TEST(GroupStats, WeightedMeanOfBanditRewards) {
  const std::vector<double> r{0, 0.8, 1};
  const std::vector<double> w{0.3, 0.6, 0.1};
  EXPECT_NEAR(*group_stats(r, w).weighted_mean, 0.58, 1e-12);
}

TEST(GroupStats, UniformWeightsGiveUnweightedMean) {
  const std::vector<double> r{0.25, 0.5, 1.0, 0.75};
  const std::vector<double> w(4, 2.0);
  const auto s = group_stats(r, w);
  EXPECT_EQ(*s.weighted_mean, s.mean);
}

TEST(GroupStats, Errors) {
  EXPECT_THROW(group_stats(std::vector<double>{1.0}), DataError);
  const std::vector<double> r{1, 2};
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(group_stats(r, zero), DataError);
}

TEST(GroupStats, MatchesTwoPassReference) {
  RandomStream rng(3);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> r(2 + rng.index(30));
    for (double& x : r) x = rng.uniform();
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= r.size();
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    const auto s = group_stats(r);
    EXPECT_NEAR(s.mean, mean, 1e-12);
    EXPECT_NEAR(s.std, std::sqrt(var / r.size()), 1e-12);
    EXPECT_GE(s.mean, *std::min_element(r.begin(), r.end()));
    EXPECT_LE(s.mean, *std::max_element(r.begin(), r.end()));
  }
}

TEST(GroupStats, IdenticalRewardsHaveExactMean) {
  const std::vector<double> r(7, 0.1);
  const auto s = group_stats(r);
  EXPECT_EQ(s.mean, 0.1);
  EXPECT_EQ(s.std, 0.0);
}

TEST(Rewards, TargetMatchAndParity) {
  const Task t = target_task();
  EXPECT_DOUBLE_EQ(reward(t, 0, TokenSeq{0, 1, 2, 0}), 1.0);
  EXPECT_DOUBLE_EQ(reward(t, 0, TokenSeq{0, 3}), 0.25);
  EXPECT_DOUBLE_EQ(reward(t, 1, TokenSeq{2, 1, 0, 1}), 2.0 / 3.0);
  SequenceTask p;
  p.vocab_size = 4;
  p.max_len = 3;
  p.rule = RewardRule::parity;
  const Task parity = p;
  EXPECT_EQ(reward(parity, 0, TokenSeq{1, 1, 3}), 1.0);
  EXPECT_EQ(reward(parity, 0, TokenSeq{1, 2}), 0.0);
}

TEST(Rewards, PureFunctionOfStoredResponse) {
  const Task t = target_task();
  RandomStream rng(4);
  RandomStream init(5);
  auto policy = random_policy(policy_shape(t), 1.0, init);
  const auto g = generate_group(t, policy, 1, 16, rng);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(reward(t, 1, g.responses[i].tokens), g.rewards[i]);
}

TEST(GenerateGroup, DegenerateBanditGroup) {
  const Task t = BanditTask{{0.0, 0.5, 1.0}};
  std::vector<double> logits{100.0, 0.0, 0.0};
  TabularPolicy p(policy_shape(t), logits);
  RandomStream rng(1);
  const auto g = generate_group(t, p, 0, 8, rng);
  for (double r : g.rewards) EXPECT_EQ(r, 0.0);
  EXPECT_EQ(group_stats(g.rewards).std, 0.0);
}

TEST(GenerateGroup, PerfectPolicyScoresOne) {
  const Task t = target_task();
  const auto p = point_mass(policy_shape(t), 0, {0, 1, 2, 0});
  RandomStream rng(2);
  const auto g = generate_group(t, p, 0, 10, rng);
  for (double r : g.rewards) EXPECT_EQ(r, 1.0);
}

TEST(GenerateGroup, DeterministicAndRecordsBehavior) {
  const Task t = target_task();
  RandomStream init(8);
  auto p = apply_update(random_policy(policy_shape(t), 1.0, init), TabularPolicy(policy_shape(t)).zero_gradient(), 1.0);
  RandomStream a(77), b(77);
  const auto ga = generate_group(t, p, 0, 12, a);
  const auto gb = generate_group(t, p, 0, 12, b);
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_EQ(ga.responses[i].tokens, gb.responses[i].tokens);
    EXPECT_EQ(ga.responses[i].behavior_logprobs, gb.responses[i].behavior_logprobs);
    EXPECT_EQ(ga.responses[i].behavior_logprobs, token_log_probs(p, 0, ga.responses[i].tokens));
  }
  EXPECT_EQ(ga.rewards, gb.rewards);
  EXPECT_EQ(ga.behavior_version, 1u);
}

TEST(GenerateGroup, RejectsSmallGroupsAndWrongShapes) {
  const Task t = target_task();
  RandomStream rng(1);
  EXPECT_THROW(generate_group(t, TabularPolicy(policy_shape(t)), 0, 1, rng), DataError);
  EXPECT_THROW(generate_group(t, TabularPolicy({3, 4, 2, true}), 0, 4, rng), DimensionError);
}

TEST(EnumerateResponses, BanditArms) {
  const Task t = BanditTask{{0.0, 0.8, 1.0}};
  const auto all = enumerate_responses(t, 0);
  ASSERT_EQ(all.size(), 3u);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(all[j].response, TokenSeq{j});
    EXPECT_EQ(all[j].reward, std::get<BanditTask>(t).arm_rewards[j]);
  }
}

TEST(EnumerateResponses, TwoTokenVocabulary) {
  SequenceTask s;
  s.vocab_size = 2;
  s.max_len = 3;
  s.rule = RewardRule::parity;
  const auto all = enumerate_responses(Task{s}, 0);
  // A length-3 response ends with either token, so both 000 and 001 appear.
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(all[2].response, (TokenSeq{0, 1}));
  EXPECT_EQ(all[3].response, TokenSeq{1});
}

TEST(EnumerateResponses, PartitionOfSampleSpace) {
  RandomStream rng(14);
  const Task t = target_task();
  for (int it = 0; it < 10; ++it) {
    auto p = random_policy(policy_shape(t), 2.0, rng);
    for (int prompt = 0; prompt < 2; ++prompt) {
      double total = 0.0;
      for (const auto& e : enumerate_responses(t, prompt)) total += std::exp(log_prob_seq(p, prompt, e.response));
      EXPECT_NEAR(total, 1.0, 1e-10);
    }
  }
}

TEST(MultiStep, StatesFollowTransitions) {
  MultiStepTask m;
  m.num_actions = 2;
  m.num_steps = 3;
  m.num_states = 3;
  m.transitions = {1, 2, 2, 0, 0, 1};
  m.initial_states = {0, 2};
  m.goal_state = 2;
  const Task t = m;
  EXPECT_EQ(trajectory_states(m, 0, TokenSeq{0, 1, 0}), (std::vector<int>{0, 1, 0, 1}));
  EXPECT_EQ(reward(t, 0, TokenSeq{1, 0, 0}), 0.0);
  EXPECT_EQ(reward(t, 0, TokenSeq{0, 1, 1}), 1.0);
  const auto shape = policy_shape(t);
  EXPECT_FALSE(shape.stop_on_eos);
  EXPECT_EQ(shape.num_prompts, 2);
  RandomStream rng(3);
  const auto g = generate_group(t, TabularPolicy(shape), 1, 6, rng);
  for (const auto& r : g.responses) {
    EXPECT_EQ(r.tokens.size(), 3u);
    EXPECT_EQ(r.states, trajectory_states(m, 1, r.tokens));
  }
  EXPECT_EQ(enumerate_responses(t, 0).size(), 8u);
}

TEST(ValidateTask, RejectsBadDefinitions) {
  EXPECT_THROW(validate_task(BanditTask{{1.0}}), ConfigError);
  SequenceTask s = target_task();
  s.targets.pop_back();
  EXPECT_THROW(validate_task(s), ConfigError);
  s = target_task();
  s.prompt_weights = {0.7, 0.2};
  EXPECT_THROW(validate_task(s), ConfigError);
  MultiStepTask m;
  m.transitions = {0, 1, 5, 0};
  m.initial_states = {0};
  EXPECT_THROW(validate_task(m), ConfigError);
  EXPECT_NO_THROW(validate_task(target_task()));
}
