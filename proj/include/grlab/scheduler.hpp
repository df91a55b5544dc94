#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

struct ScheduleConfig {
  int sync_interval = 1;  // m
  int sync_offset = 0;    // n
  bool offline = false;   // only the version-0 policy ever generates

  void validate() const {
    if (sync_interval < 1) throw ConfigError("sync_interval must be at least 1");
    if (sync_offset < 0) throw ConfigError("sync_offset must be non-negative");
  }
};

// (l mod m) + n
inline int off_policyness(std::int64_t l, int m, int n) {
  if (l < 0 || m < 1 || n < 0) throw SchedulingError("off_policyness needs l >= 0, m >= 1, n >= 0");
  return static_cast<int>(l % m) + n;
}

struct BatchRecord {
  std::uint64_t batch_index = 0;
  std::vector<RolloutGroup> groups;
  std::uint64_t generator_version = 0;  // trainer step count of the generating snapshot
  std::uint64_t generation_tick = 0;
  std::uint64_t sync_tick = 0;  // tick at which the generating snapshot was synchronized
};

// FIFO of generated batches. Serving is strictly in generation order.
class RolloutBuffer {
 public:
  void push(BatchRecord batch) {
    if (batch.batch_index != next_push_) throw SchedulingError("batches must be buffered in generation order");
    ++next_push_;
    queue_.push_back(std::move(batch));
  }

  BatchRecord pop(std::uint64_t expected_index) {
    if (queue_.empty()) throw SchedulingError("rollout buffer underrun");
    if (queue_.front().batch_index != expected_index) throw SchedulingError("batch served out of generation order");
    BatchRecord b = std::move(queue_.front());
    queue_.pop_front();
    return b;
  }

  std::size_t size() const { return queue_.size(); }
  std::uint64_t generated() const { return next_push_; }

 private:
  std::deque<BatchRecord> queue_;
  std::uint64_t next_push_ = 0;
};

struct ConsumedBatch {
  BatchRecord batch;
  // Ticks between the generating snapshot's synchronization and consumption.
  int staleness = 0;
  // Trainer steps taken since the generating snapshot (equals staleness once
  // the pipeline is past its warm-up).
  std::uint64_t step_lag = 0;
  bool sync_event = false;  // a synchronization happened while producing this batch's schedule slot
};

// Produces the groups of batch `index` from the rollout policy.
using BatchGenerator = std::function<std::vector<RolloutGroup>(std::uint64_t index, const TabularPolicy& rollout)>;

// Logical pipeline clock. At tick T:
//   1. if T is a multiple of m (and not offline), the rollout policy takes the
//      trainer's current weights;
//   2. batch T is generated by the rollout policy;
//   3. the trainer consumes batch T - n (idle while T < n).
// Batch l is therefore consumed at tick l + n and was generated by the
// snapshot synchronized at tick m * floor(l / m), a distance of (l mod m) + n.
class Scheduler {
 public:
  Scheduler(ScheduleConfig cfg, TabularPolicy initial) : cfg_(cfg), rollout_(std::move(initial)) {
    cfg_.validate();
    version0_ = rollout_.version();
  }

  const ScheduleConfig& config() const { return cfg_; }
  const TabularPolicy& rollout_policy() const { return rollout_; }
  std::uint64_t consumed() const { return consumed_; }
  std::uint64_t sync_count() const { return sync_count_; }
  std::uint64_t last_sync_tick() const { return rollout_sync_tick_; }
  const RolloutBuffer& buffer() const { return buffer_; }

  // `trainer` must be the trainer's snapshot after `consumed()` gradient steps.
  ConsumedBatch next(const TabularPolicy& trainer, const BatchGenerator& generate) {
    if (trainer.version() != version0_ + consumed_) {
      throw SchedulingError("trainer snapshot does not match the number of consumed batches");
    }
    const std::uint64_t l = consumed_;
    const std::uint64_t tick = l + static_cast<std::uint64_t>(cfg_.sync_offset);
    bool synced = false;
    while (buffer_.generated() <= tick) {
      const std::uint64_t t = buffer_.generated();
      if (!cfg_.offline && t % static_cast<std::uint64_t>(cfg_.sync_interval) == 0 && t > 0) {
        rollout_ = trainer_at(t, trainer);
        rollout_sync_tick_ = t;
        ++sync_count_;
        synced = true;
      }
      BatchRecord rec;
      rec.batch_index = t;
      rec.groups = generate(t, rollout_);
      rec.generator_version = rollout_.version() - version0_;
      rec.generation_tick = t;
      rec.sync_tick = rollout_sync_tick_;
      for (const auto& g : rec.groups) {
        if (g.behavior_version != rollout_.version()) {
          throw SchedulingError("group was not generated by the rollout policy");
        }
      }
      buffer_.push(std::move(rec));
    }
    ConsumedBatch out;
    out.batch = buffer_.pop(l);
    out.staleness = static_cast<int>(tick - out.batch.sync_tick);
    out.step_lag = l - out.batch.generator_version;
    out.sync_event = synced;
    ++consumed_;
    return out;
  }

 private:
  // The trainer snapshot that exists at tick t. Only the current snapshot is
  // available, so t must map to it or to version 0 during warm-up.
  const TabularPolicy& trainer_at(std::uint64_t t, const TabularPolicy& trainer) const {
    const auto n = static_cast<std::uint64_t>(cfg_.sync_offset);
    const std::uint64_t steps_done = t >= n ? t - n : 0;
    if (steps_done != consumed_) throw SchedulingError("synchronization requested at an unavailable trainer step");
    return trainer;
  }

  ScheduleConfig cfg_;
  TabularPolicy rollout_;
  RolloutBuffer buffer_;
  std::uint64_t version0_ = 0;
  std::uint64_t consumed_ = 0;
  std::uint64_t rollout_sync_tick_ = 0;
  std::uint64_t sync_count_ = 0;
};

}  // namespace grlab
