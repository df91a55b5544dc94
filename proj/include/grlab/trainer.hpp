#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "grlab/algorithms.hpp"
#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/scheduler.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

struct OptimizerConfig {
  double eta = 0.1;
  std::optional<double> grad_clip_norm;
  int steps = 100;
  int batch_prompts = 1;
  int group_size = 8;  // K
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_prompts < 1) throw ConfigError("batch_prompts must be at least 1");
    if (group_size < 2) throw ConfigError("group_size must be at least 2");
  }
};

struct MetricsRecord {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double kl_to_init = 0.0;
  double entropy_root = 0.0;
  double clip_fraction = 0.0;
  double mean_response_length = 0.0;
  double grad_norm = 0.0;  // global norm of the applied (post-clip) update direction
  std::uint64_t generator_version = 0;
  std::int64_t off_policyness = 0;

  bool operator==(const MetricsRecord&) const = default;
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  TabularPolicy final_policy;
  bool aborted = false;
  std::string diagnostic;
};

// Masked tokens over eligible (A != 0) tokens; 0 when nothing is eligible.
inline double clip_fraction(const MaskStats& stats) {
  if (stats.eligible == 0) return 0.0;
  return static_cast<double>(stats.masked) / static_cast<double>(stats.eligible);
}

// Mean over prompts (under D) of the root-context entropy.
inline double root_entropy(const TabularPolicy& policy, std::span<const double> prompt_weights) {
  double h = 0.0;
  for (int p = 0; p < policy.num_prompts(); ++p) h += prompt_weights[p] * entropy(policy, policy.root(p).index());
  return h;
}

// KL(policy || init) averaged over prompts under D.
inline double kl_to_reference(const TabularPolicy& policy, const TabularPolicy& init,
                              std::span<const double> prompt_weights) {
  double kl = 0.0;
  for (int p = 0; p < policy.num_prompts(); ++p) {
    if (prompt_weights[p] != 0.0) kl += prompt_weights[p] * kl_exact(policy, init, p);
  }
  return kl;
}

// Exact expected reward E_{x~D, y~pi}[r(x, y)] by enumeration.
inline double expected_reward(const Task& task, const TabularPolicy& policy) {
  const auto weights = prompt_weights(task);
  double total = 0.0;
  for (int p = 0; p < policy.num_prompts(); ++p) {
    double rp = 0.0;
    for (const auto& s : enumerate_responses(task, p)) {
      if (s.reward != 0.0) rp += std::exp(log_prob_seq(policy, p, s.response)) * s.reward;
    }
    total += weights[p] * rp;
  }
  return total;
}

// Prompts of one batch, drawn i.i.d. from D on the batch's own substream.
inline std::vector<int> draw_prompts(const Task& task, int count, std::uint64_t seed, std::uint64_t batch_index) {
  const auto weights = prompt_weights(task);
  std::vector<int> prompts(count, 0);
  if (weights.size() == 1) return prompts;
  RandomStream rng = substream(seed, StreamPurpose::prompts, batch_index);
  for (int& p : prompts) p = static_cast<int>(rng.categorical(weights));
  return prompts;
}

inline BatchGenerator make_batch_generator(const Task& task, const OptimizerConfig& opt) {
  return [&task, opt](std::uint64_t index, const TabularPolicy& rollout) {
    const auto prompts = draw_prompts(task, opt.batch_prompts, opt.seed, index);
    std::vector<RolloutGroup> groups;
    groups.reserve(prompts.size());
    for (std::size_t slot = 0; slot < prompts.size(); ++slot) {
      RandomStream rng = substream(opt.seed, StreamPurpose::rollout, index, slot);
      groups.push_back(generate_group(task, rollout, prompts[slot], opt.group_size, rng));
      groups.back().generation_step = index;
    }
    return groups;
  };
}

// Plain SGD over scheduler-served batches. The batch direction is the sum of
// the per-group directions (a batch-wide token mean under batch_token_mean), optionally
// rescaled to grad_clip_norm. One MetricsRecord is emitted per step, after the
// update. A non-finite direction or logit aborts the run with a diagnostic.
inline RunResult run(const Task& task, const TabularPolicy& init, const AlgorithmConfig& algo,
                     const ScheduleConfig& sched, const OptimizerConfig& opt,
                     const std::function<void(const MetricsRecord&)>& on_record = {}) {
  validate_task(task);
  algo.validate();
  sched.validate();
  opt.validate();
  if (init.shape() != policy_shape(task)) throw DimensionError("initial policy does not match the task");
  if (algo.kind == AlgorithmKind::multi_step_reinforce && !std::holds_alternative<MultiStepTask>(task)) {
    throw ConfigError("MultiStepREINFORCE requires a multi-step task");
  }
  const auto weights = prompt_weights(task);

  RunResult result{{}, init, false, {}};
  Scheduler scheduler(sched, init);
  const BatchGenerator generate = make_batch_generator(task, opt);

  for (int step = 0; step < opt.steps; ++step) {
    const TabularPolicy& current = result.final_policy;
    ConsumedBatch served = scheduler.next(current, generate);
    const auto& groups = served.batch.groups;

    GradientVector direction = current.zero_gradient();
    MaskStats mask;
    std::size_t tokens = 0;
    std::size_t responses = 0;
    double reward_sum = 0.0;
    std::vector<GroupUpdate> updates;
    updates.reserve(groups.size());
    for (std::size_t slot = 0; slot < groups.size(); ++slot) {
      RandomStream drop = substream(opt.seed, StreamPurpose::drop, static_cast<std::uint64_t>(step), slot);
      updates.push_back(compute_group_update(groups[slot], current, algo, drop));
      mask += updates.back().mask;
      tokens += updates.back().tokens;
      responses += groups[slot].size();
      for (double r : groups[slot].rewards) reward_sum += r;
    }
    const bool token_mean = !updates.empty() && updates.front().token_normalized;
    for (const auto& u : updates) {
      if (token_mean) {
        direction.add_scaled(u.direction, static_cast<double>(u.tokens) / static_cast<double>(tokens));
      } else {
        direction += u.direction;
      }
    }

    double norm = direction.norm();
    if (!direction.all_finite() || !std::isfinite(norm)) {
      result.aborted = true;
      result.diagnostic = "non-finite gradient at step " + std::to_string(step);
      break;
    }
    if (opt.grad_clip_norm && norm > *opt.grad_clip_norm) {
      direction *= *opt.grad_clip_norm / norm;
      norm = direction.norm();
    }
    try {
      result.final_policy = apply_update(current, direction, opt.eta);
    } catch (const NumericalError& e) {
      result.aborted = true;
      result.diagnostic = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }

    MetricsRecord m;
    m.step = static_cast<std::uint64_t>(step);
    m.mean_reward = reward_sum / static_cast<double>(responses);
    m.kl_to_init = kl_to_reference(result.final_policy, init, weights);
    m.entropy_root = root_entropy(result.final_policy, weights);
    m.clip_fraction = clip_fraction(mask);
    m.mean_response_length = static_cast<double>(tokens) / static_cast<double>(responses);
    m.grad_norm = norm;
    m.generator_version = served.batch.generator_version;
    m.off_policyness = served.staleness;
    if (!std::isfinite(m.kl_to_init) || !std::isfinite(m.entropy_root)) {
      result.aborted = true;
      result.diagnostic = "non-finite metrics at step " + std::to_string(step);
      break;
    }
    result.metrics.push_back(m);
    if (on_record) on_record(m);
  }
  return result;
}

}  // namespace grlab
