#include <gtest/gtest.h>

#include "grlab/checks.hpp"
#include "grlab/scheduler.hpp"

using namespace grlab;

namespace {

struct Trace {
  std::vector<int> staleness;
  std::vector<std::uint64_t> generator_version;
  std::vector<std::uint64_t> step_lag;
  std::vector<std::uint64_t> sync_at_generated;
};

// Drives a scheduler with a trainer that bumps its version on every step.
Trace simulate(ScheduleConfig cfg, int batches) {
  const Task task = BanditTask{{0.0, 1.0}};
  TabularPolicy trainer(policy_shape(task));
  Scheduler s(cfg, trainer);
  Trace t;
  auto gen = [](std::uint64_t, const TabularPolicy& rollout) {
    RolloutGroup g;
    g.behavior_version = rollout.version();
    return std::vector<RolloutGroup>{g};
  };
  for (int l = 0; l < batches; ++l) {
    const auto before = s.sync_count();
    auto b = s.next(trainer, gen);
    EXPECT_EQ(b.batch.batch_index, static_cast<std::uint64_t>(l));
    if (s.sync_count() != before) t.sync_at_generated.push_back(s.last_sync_tick());
    EXPECT_EQ(b.sync_event, s.sync_count() != before);
    t.staleness.push_back(b.staleness);
    t.generator_version.push_back(b.batch.generator_version);
    t.step_lag.push_back(b.step_lag);
    trainer = apply_update(trainer, trainer.zero_gradient(), 1.0);
  }
  return t;
}

}  // namespace

TEST(OffPolicyness, Patterns) {
  for (int l = 0; l < 8; ++l) {
    EXPECT_EQ(off_policyness(l, 4, 0), l % 4);
    EXPECT_EQ(off_policyness(l, 1, 4), 4);
    EXPECT_EQ(off_policyness(l, 1, 0), 0);
  }
  EXPECT_THROW(off_policyness(-1, 1, 0), SchedulingError);
  EXPECT_THROW(off_policyness(0, 0, 0), SchedulingError);
}

TEST(Scheduler, OnPolicyUsesCurrentVersion) {
  const auto t = simulate({1, 0, false}, 10);
  for (int l = 0; l < 10; ++l) {
    EXPECT_EQ(t.generator_version[l], static_cast<std::uint64_t>(l));
    EXPECT_EQ(t.staleness[l], 0);
  }
}

TEST(Scheduler, IntervalFourHoldsSnapshotForFourBatches) {
  const auto t = simulate({4, 0, false}, 8);
  const std::vector<std::uint64_t> versions{0, 0, 0, 0, 4, 4, 4, 4};
  EXPECT_EQ(t.generator_version, versions);
  EXPECT_EQ(t.staleness, (std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}));
  EXPECT_EQ(t.step_lag, (std::vector<std::uint64_t>{0, 1, 2, 3, 0, 1, 2, 3}));
}

TEST(Scheduler, OffsetFourIsConstant) {
  const auto t = simulate({1, 4, false}, 12);
  for (int l = 0; l < 12; ++l) EXPECT_EQ(t.staleness[l], 4);
  // the first four batches are pre-generated by version 0
  for (int l = 0; l < 4; ++l) EXPECT_EQ(t.generator_version[l], 0u);
  for (int l = 4; l < 12; ++l) EXPECT_EQ(t.step_lag[l], 4u);
}

TEST(Scheduler, StalenessAuditOverGrid) {
  for (int m = 1; m <= 5; ++m) {
    for (int n = 0; n <= 5; ++n) {
      const int batches = 15 * m;
      const auto t = simulate({m, n, false}, batches);
      for (int l = 0; l < batches; ++l) {
        EXPECT_EQ(t.staleness[l], off_policyness(l, m, n)) << "m=" << m << " n=" << n << " l=" << l;
        // past warm-up the trainer-step lag agrees too
        if (l >= n + m) {
          EXPECT_EQ(t.step_lag[l], static_cast<std::uint64_t>(off_policyness(l, m, n)));
        }
      }
      for (auto g : t.sync_at_generated) EXPECT_EQ(g % m, 0u);
    }
  }
}

TEST(Scheduler, OfflineNeverSyncs) {
  const auto t = simulate({1, 0, true}, 100);
  for (auto v : t.generator_version) EXPECT_EQ(v, 0u);
  EXPECT_TRUE(t.sync_at_generated.empty());
}

TEST(Scheduler, RejectsMismatchedTrainer) {
  const Task task = BanditTask{{0.0, 1.0}};
  TabularPolicy trainer(policy_shape(task));
  Scheduler s({2, 1, false}, trainer);
  auto gen = [](std::uint64_t, const TabularPolicy& rollout) {
    RolloutGroup g;
    g.behavior_version = rollout.version();
    return std::vector<RolloutGroup>{g};
  };
  s.next(trainer, gen);
  EXPECT_THROW(s.next(trainer, gen), SchedulingError);
}

TEST(Scheduler, RejectsGroupsFromAnotherPolicy) {
  const Task task = BanditTask{{0.0, 1.0}};
  TabularPolicy trainer(policy_shape(task));
  Scheduler s({1, 0, false}, trainer);
  auto gen = [](std::uint64_t, const TabularPolicy&) {
    RolloutGroup g;
    g.behavior_version = 99;
    return std::vector<RolloutGroup>{g};
  };
  EXPECT_THROW(s.next(trainer, gen), SchedulingError);
}

TEST(RolloutBuffer, OrderAndUnderrun) {
  RolloutBuffer b;
  EXPECT_THROW(b.pop(0), SchedulingError);
  BatchRecord r;
  r.batch_index = 1;
  EXPECT_THROW(b.push(r), SchedulingError);
  r.batch_index = 0;
  b.push(r);
  r.batch_index = 1;
  b.push(r);
  EXPECT_THROW(b.pop(1), SchedulingError);
  EXPECT_EQ(b.pop(0).batch_index, 0u);
  EXPECT_EQ(b.pop(1).batch_index, 1u);
}

TEST(ScheduleConfig, Validation) {
  EXPECT_THROW((ScheduleConfig{0, 0, false}.validate()), ConfigError);
  EXPECT_THROW((ScheduleConfig{1, -1, false}.validate()), ConfigError);
}

TEST(Scheduler, CheckSuiteAgrees) {
  for (const auto& r : checks::scheduler()) EXPECT_TRUE(r.passed) << r.name;
}
