#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "grlab/algorithms.hpp"
#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_relative_error(const GradientVector& a, const GradientVector& b) {
  if (!a.same_shape(b)) throw DimensionError("gradient shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, relative_error(a[i], b[i]));
  return m;
}

// sum_y pi(y|x) (r(x, y) - baseline) grad log pi(y|x) over every response.
inline GradientVector exact_policy_gradient(const Task& task, const TabularPolicy& policy, int prompt,
                                            double baseline = 0.0) {
  if (policy.shape() != policy_shape(task)) throw DimensionError("policy does not match task");
  GradientVector g = policy.zero_gradient();
  for (const auto& s : enumerate_responses(task, prompt)) {
    const double w = std::exp(log_prob_seq(policy, prompt, s.response)) * (s.reward - baseline);
    if (w != 0.0) accumulate_score(g, policy, prompt, s.response, w);
  }
  return g;
}

struct ExpectedDirection {
  double mean_reward = 0.0;      // mu_r under the behavior policy
  std::vector<double> centered;  // r(a_j) - mu_r
  std::vector<double> direction; // pi_b(a_j) (r(a_j) - mu_r)
};

// Large-K limit of the group-relative update on a bandit sampled from a fixed
// behavior distribution.
inline ExpectedDirection expected_group_relative_direction(const BanditTask& bandit,
                                                           std::span<const double> behavior) {
  const std::size_t v = bandit.arm_rewards.size();
  if (behavior.size() != v) throw DimensionError("behavior length must equal the number of arms");
  double total = 0.0;
  for (double p : behavior) {
    if (!(p >= 0.0)) throw DataError("behavior probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("behavior probabilities must sum to 1");
  ExpectedDirection out;
  for (std::size_t j = 0; j < v; ++j) out.mean_reward += behavior[j] * bandit.arm_rewards[j];
  for (std::size_t j = 0; j < v; ++j) {
    out.centered.push_back(bandit.arm_rewards[j] - out.mean_reward);
    out.direction.push_back(behavior[j] * out.centered.back());
  }
  return out;
}

struct ExactDistribution {
  struct Entry {
    TokenSeq response;
    double probability = 0.0;
    double log_probability = 0.0;
    double reward = 0.0;
  };
  std::vector<Entry> support;
  double log_partition = 0.0;  // log Z

  double partition() const { return std::exp(log_partition); }
  double total_probability() const {
    double s = 0.0;
    for (const auto& e : support) s += e.probability;
    return s;
  }
};

// pi*(y|x) = pi_anchor(y|x) exp(r(x, y) / tau) / Z, Z by enumeration.
inline ExactDistribution optimal_kl_regularized_policy(const Task& task, const TabularPolicy& anchor, double tau,
                                                       int prompt) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (anchor.shape() != policy_shape(task)) throw DimensionError("policy does not match task");
  ExactDistribution d;
  std::vector<double> tilted;
  for (auto& s : enumerate_responses(task, prompt)) {
    const double la = log_prob_seq(anchor, prompt, s.response);
    tilted.push_back(la + s.reward / tau);
    d.support.push_back({std::move(s.response), 0.0, 0.0, s.reward});
  }
  d.log_partition = detail::log_sum_exp(tilted);
  for (std::size_t i = 0; i < tilted.size(); ++i) {
    d.support[i].log_probability = tilted[i] - d.log_partition;
    d.support[i].probability = std::exp(d.support[i].log_probability);
  }
  return d;
}

// a_i = r_i - tau (log pi(y_i|x) - log pi_anchor(y_i|x)) for every support entry.
inline std::vector<double> consistency_residuals(const ExactDistribution& dist, const TabularPolicy& anchor,
                                                 double tau, int prompt) {
  std::vector<double> a;
  a.reserve(dist.support.size());
  for (const auto& e : dist.support) {
    a.push_back(e.reward - tau * (e.log_probability - log_prob_seq(anchor, prompt, e.response)));
  }
  return a;
}

inline double spread(std::span<const double> xs) {
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  return *hi - *lo;
}

// Central differences (L(theta + h e) - L(theta - h e)) / 2h over all logits,
// or only over `coords` (other entries stay 0).
inline GradientVector finite_diff_grad(const std::function<double(const TabularPolicy&)>& loss,
                                       const TabularPolicy& policy, double h = 1e-5,
                                       std::optional<std::span<const std::size_t>> coords = std::nullopt) {
  GradientVector g = policy.zero_gradient();
  auto eval = [&](std::size_t c) {
    const double up = loss(perturbed(policy, c, h));
    const double down = loss(perturbed(policy, c, -h));
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("non-finite loss in finite differences");
    g[c] = (up - down) / (2.0 * h);
  };
  if (coords) {
    for (std::size_t c : *coords) eval(c);
  } else {
    for (std::size_t c = 0; c < g.size(); ++c) eval(c);
  }
  return g;
}

// Coordinates of every logit touched by a group's responses (the rows along
// their prefixes).
inline std::vector<std::size_t> touched_coordinates(const RolloutGroup& group, const TabularPolicy& policy) {
  std::vector<std::size_t> rows;
  for (const auto& r : group.responses) {
    auto c = policy.root(group.prompt);
    for (Token t : r.tokens) {
      rows.push_back(c.index());
      c.advance(t);
    }
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::vector<std::size_t> coords;
  for (std::size_t row : rows) {
    for (int j = 0; j < policy.vocab_size(); ++j) coords.push_back(row * policy.vocab_size() + j);
  }
  return coords;
}

// Average finite-K group-relative bandit update over `trials`, compared with
// its large-K limit. Returns the largest component deviation.
inline double mc_vs_exact_direction(const BanditTask& bandit, std::span<const double> behavior, int k, int trials,
                                    RandomStream& rng) {
  if (k < 2 || trials < 1) throw ConfigError("need K >= 2 and at least one trial");
  const auto exact = expected_group_relative_direction(bandit, behavior);
  const std::size_t v = behavior.size();
  std::vector<double> avg(v, 0.0);
  std::vector<std::size_t> arms(k);
  std::vector<double> rewards(k);
  for (int t = 0; t < trials; ++t) {
    for (int i = 0; i < k; ++i) {
      arms[i] = rng.categorical(behavior);
      rewards[i] = bandit.arm_rewards[arms[i]];
    }
    const auto centered = centered_rewards(rewards);
    std::vector<double> g(v, 0.0);
    for (int i = 0; i < k; ++i) g[arms[i]] += centered[i];
    for (std::size_t j = 0; j < v; ++j) avg[j] += g[j] / static_cast<double>(k);
  }
  double dev = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    dev = std::max(dev, std::abs(avg[j] / static_cast<double>(trials) - exact.direction[j]));
  }
  return dev;
}

// Mass on the best arm after each exact surrogate solve, starting from
// `anchor`; entry 0 is the anchor itself. Stops once the mass reaches target
// or after max_iterations solves.
inline std::vector<double> iterated_surrogate_best_mass(const BanditTask& bandit, const TabularPolicy& anchor,
                                                        double tau, double target, int max_iterations) {
  const Task task = bandit;
  const auto best = static_cast<Token>(std::max_element(bandit.arm_rewards.begin(), bandit.arm_rewards.end()) -
                                       bandit.arm_rewards.begin());
  TabularPolicy current = anchor;
  std::vector<double> mass{std::exp(current.log_prob(0, best))};
  for (int it = 0; it < max_iterations && mass.back() < target; ++it) {
    const auto d = optimal_kl_regularized_policy(task, current, tau, 0);
    std::vector<double> logits(d.support.size());
    for (const auto& e : d.support) logits[e.response.front()] = e.log_probability;
    current = TabularPolicy(current.shape(), std::move(logits), current.version() + 1);
    mass.push_back(std::exp(current.log_prob(0, best)));
  }
  return mass;
}

// Iterations after which exponential tilting from initial best-arm mass p0
// guarantees best-arm mass >= 1 - slack, with reward gap `gap` to the runner-up:
// ceil(tau (ln((1 - p0) / p0) + ln(1 / slack)) / gap).
inline int iterated_surrogate_bound(double tau, double p0, double gap, double slack) {
  const double need = tau * (std::log((1.0 - p0) / p0) + std::log(1.0 / slack)) / gap;
  return std::max(0, static_cast<int>(std::ceil(need)));
}

}  // namespace grlab
