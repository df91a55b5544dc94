#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"

namespace grlab {

// Single-context bandit: one length-1 response per pull, reward r(a_j).
struct BanditTask {
  std::vector<double> arm_rewards;
};

enum class RewardRule {
  target_match,  // fraction of target positions reproduced by the response
  parity,        // 1 when the sum of non-EOS tokens has the requested parity
};

// Deterministic sequence rewards over a prompt distribution.
struct SequenceTask {
  int vocab_size = 4;
  int max_len = 4;
  int num_prompts = 1;
  std::vector<double> prompt_weights;  // empty = uniform
  RewardRule rule = RewardRule::target_match;
  std::vector<TokenSeq> targets;  // one per prompt (target_match)
  int parity = 0;                 // parity rule: 0 = even sum rewarded
};

// Deterministic environment with H action steps per trajectory. Prompt i
// starts in initial_states[i]; the reward is 1 when the final state equals
// goal_state and 0 otherwise.
struct MultiStepTask {
  int num_actions = 2;
  int num_steps = 2;
  int num_states = 2;
  std::vector<int> transitions;  // row-major [state][action] -> next state
  std::vector<int> initial_states;
  std::vector<double> prompt_weights;  // empty = uniform
  int goal_state = 0;

  int next_state(int state, Token action) const {
    return transitions[static_cast<std::size_t>(state) * num_actions + action];
  }
};

using Task = std::variant<BanditTask, SequenceTask, MultiStepTask>;

// One sampled response (or trajectory) with its behavior log-probs.
struct Response {
  TokenSeq tokens;
  std::vector<double> behavior_logprobs;
  std::vector<int> states;  // multi-step only: s_1 .. s_{H+1}
};

struct RolloutGroup {
  int prompt = 0;
  std::vector<Response> responses;
  std::vector<double> rewards;
  std::uint64_t behavior_version = 0;
  std::uint64_t generation_step = 0;

  std::size_t size() const { return responses.size(); }
  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& r : responses) n += r.tokens.size();
    return n;
  }
  bool has_behavior_logprobs() const {
    return std::all_of(responses.begin(), responses.end(), [](const Response& r) {
      return r.behavior_logprobs.size() == r.tokens.size();
    });
  }
  void validate() const {
    if (responses.size() < 2) throw DataError("a group needs at least two responses");
    if (rewards.size() != responses.size()) throw DataError("one reward per response required");
    for (double r : rewards) {
      if (!std::isfinite(r)) throw DataError("non-finite reward");
    }
    for (const auto& r : responses) {
      if (!r.behavior_logprobs.empty() && r.behavior_logprobs.size() != r.tokens.size()) {
        throw DataError("behavior log-probs do not match response length");
      }
    }
  }
};

struct GroupStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::optional<double> weighted_mean;
};

// Mean, population std and (optionally) weighted mean of a reward group.
// The mean is accumulated relative to the first reward so that a group of
// identical rewards has a mean equal to them bit for bit.
inline GroupStats group_stats(std::span<const double> rewards,
                              std::optional<std::span<const double>> weights = std::nullopt) {
  if (rewards.size() < 2) throw DataError("group_stats needs at least two rewards");
  const double k = static_cast<double>(rewards.size());
  const double pivot = rewards[0];
  double shifted = 0.0;
  for (double r : rewards) shifted += r - pivot;
  GroupStats s;
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  s.mean = std::clamp(pivot + shifted / k, *lo, *hi);
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / k);
  if (weights) {
    if (weights->size() != rewards.size()) throw DataError("one weight per reward required");
    double wsum = 0.0;
    double wr = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      if ((*weights)[i] < 0.0) throw DataError("weights must be non-negative");
      wsum += (*weights)[i];
      wr += (*weights)[i] * rewards[i];
    }
    if (!(wsum > 0.0)) throw DataError("degenerate weights: all zero");
    s.weighted_mean = wr / wsum;
  }
  return s;
}

inline void validate_task(const Task& task) {
  auto check_weights = [](const std::vector<double>& w, int n) {
    if (w.empty()) return;
    if (static_cast<int>(w.size()) != n) throw ConfigError("prompt_weights length mismatch");
    double s = 0.0;
    for (double x : w) {
      if (x < 0.0) throw ConfigError("prompt weights must be non-negative");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("prompt weights must sum to 1");
  };
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, BanditTask>) {
          if (t.arm_rewards.size() < 2) throw ConfigError("bandit needs at least two arms");
          for (double r : t.arm_rewards) {
            if (!std::isfinite(r)) throw ConfigError("non-finite arm reward");
          }
        } else if constexpr (std::is_same_v<T, SequenceTask>) {
          if (t.vocab_size < 2 || t.max_len < 1 || t.num_prompts < 1) {
            throw ConfigError("invalid sequence task dimensions");
          }
          check_weights(t.prompt_weights, t.num_prompts);
          if (t.rule == RewardRule::target_match) {
            if (static_cast<int>(t.targets.size()) != t.num_prompts) {
              throw ConfigError("target_match needs one target per prompt");
            }
            for (const auto& target : t.targets) {
              if (target.empty() || static_cast<int>(target.size()) > t.max_len) {
                throw ConfigError("target length must be in [1, max_len]");
              }
              for (Token tok : target) {
                if (tok < 0 || tok >= t.vocab_size) throw ConfigError("target token outside vocabulary");
              }
            }
          } else if (t.parity != 0 && t.parity != 1) {
            throw ConfigError("parity must be 0 or 1");
          }
        } else {
          if (t.num_actions < 2 || t.num_steps < 1 || t.num_states < 1) {
            throw ConfigError("invalid multi-step task dimensions");
          }
          if (t.transitions.size() != static_cast<std::size_t>(t.num_states) * t.num_actions) {
            throw ConfigError("transition table must have num_states * num_actions entries");
          }
          for (int s : t.transitions) {
            if (s < 0 || s >= t.num_states) throw ConfigError("transition target out of range");
          }
          if (t.initial_states.empty()) throw ConfigError("multi-step task needs initial states");
          for (int s : t.initial_states) {
            if (s < 0 || s >= t.num_states) throw ConfigError("initial state out of range");
          }
          if (t.goal_state < 0 || t.goal_state >= t.num_states) throw ConfigError("goal state out of range");
          check_weights(t.prompt_weights, static_cast<int>(t.initial_states.size()));
        }
      },
      task);
}

inline PolicyShape policy_shape(const Task& task) {
  return std::visit(
      [](const auto& t) -> PolicyShape {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, BanditTask>) {
          return {static_cast<int>(t.arm_rewards.size()), 1, 1, true};
        } else if constexpr (std::is_same_v<T, SequenceTask>) {
          return {t.vocab_size, t.max_len, t.num_prompts, true};
        } else {
          return {t.num_actions, t.num_steps, static_cast<int>(t.initial_states.size()), false};
        }
      },
      task);
}

inline int num_prompts(const Task& task) { return policy_shape(task).num_prompts; }

// The prompt distribution D (uniform when no weights are configured).
inline std::vector<double> prompt_weights(const Task& task) {
  const int n = num_prompts(task);
  const std::vector<double>* w = nullptr;
  if (auto* s = std::get_if<SequenceTask>(&task)) w = &s->prompt_weights;
  if (auto* m = std::get_if<MultiStepTask>(&task)) w = &m->prompt_weights;
  if (w && !w->empty()) return *w;
  return std::vector<double>(n, 1.0 / n);
}

// State sequence s_1 .. s_{H+1} visited by an action sequence.
inline std::vector<int> trajectory_states(const MultiStepTask& task, int prompt, std::span<const Token> actions) {
  std::vector<int> states{task.initial_states.at(prompt)};
  for (Token a : actions) states.push_back(task.next_state(states.back(), a));
  return states;
}

// Deterministic reward of a complete response.
inline double reward(const Task& task, int prompt, std::span<const Token> response) {
  return std::visit(
      [&](const auto& t) -> double {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, BanditTask>) {
          return t.arm_rewards.at(response.front());
        } else if constexpr (std::is_same_v<T, SequenceTask>) {
          if (t.rule == RewardRule::target_match) {
            const auto& target = t.targets.at(prompt);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < target.size() && i < response.size(); ++i) {
              hits += target[i] == response[i] ? 1 : 0;
            }
            return static_cast<double>(hits) / static_cast<double>(target.size());
          }
          const Token eos = t.vocab_size - 1;
          long sum = 0;
          for (Token tok : response) {
            if (tok != eos) sum += tok;
          }
          return (sum % 2) == t.parity ? 1.0 : 0.0;
        } else {
          return trajectory_states(t, prompt, response).back() == t.goal_state ? 1.0 : 0.0;
        }
      },
      task);
}

inline Response sample_rollout(const Task& task, const TabularPolicy& policy, int prompt, RandomStream& rng) {
  auto sampled = sample_response(policy, prompt, rng);
  Response r{std::move(sampled.tokens), std::move(sampled.log_probs), {}};
  if (auto* m = std::get_if<MultiStepTask>(&task)) r.states = trajectory_states(*m, prompt, r.tokens);
  return r;
}

// K independent rollouts for one prompt, tagged with the sampling policy's version.
inline RolloutGroup generate_group(const Task& task, const TabularPolicy& policy, int prompt, int k,
                                   RandomStream& rng) {
  if (k < 2) throw DataError("group size K must be at least 2");
  if (policy.shape() != policy_shape(task)) throw DimensionError("policy does not match task");
  RolloutGroup g;
  g.prompt = prompt;
  g.behavior_version = policy.version();
  g.responses.reserve(k);
  g.rewards.reserve(k);
  for (int i = 0; i < k; ++i) {
    g.responses.push_back(sample_rollout(task, policy, prompt, rng));
    g.rewards.push_back(reward(task, prompt, g.responses.back().tokens));
  }
  return g;
}

struct ScoredResponse {
  TokenSeq response;
  double reward = 0.0;
};

// Every terminating response of a prompt with its reward.
inline std::vector<ScoredResponse> enumerate_responses(const Task& task, int prompt) {
  std::vector<ScoredResponse> out;
  for_each_response(policy_shape(task), [&](const TokenSeq& y) {
    out.push_back({y, reward(task, prompt, y)});
  });
  return out;
}

}  // namespace grlab
