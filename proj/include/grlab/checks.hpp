#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "grlab/algorithms.hpp"
#include "grlab/oracle.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/scheduler.hpp"
#include "grlab/tasks.hpp"

namespace grlab::checks {

struct CheckResult {
  std::string suite;
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradients", "masks", "identities", "scheduler", "oracle-consistency"};
  return names;
}

namespace detail {

inline CheckResult at_most(std::string suite, std::string name, double measured, double tol) {
  return {std::move(suite), std::move(name), measured, tol, measured <= tol};
}

inline CheckResult at_least(std::string suite, std::string name, double measured, double bound) {
  return {std::move(suite), std::move(name), measured, bound, measured >= bound};
}

// Small random sequence task and a random policy on it.
struct Instance {
  Task task;
  TabularPolicy policy;
};

inline Instance random_sequence_instance(RandomStream& rng) {
  SequenceTask t;
  t.vocab_size = 2 + static_cast<int>(rng.index(3));
  t.max_len = 1 + static_cast<int>(rng.index(3));
  t.num_prompts = 1 + static_cast<int>(rng.index(2));
  for (int p = 0; p < t.num_prompts; ++p) {
    TokenSeq target;
    for (int i = 0; i < t.max_len; ++i) target.push_back(static_cast<Token>(rng.index(t.vocab_size)));
    t.targets.push_back(target);
  }
  Task task = t;
  return {task, random_policy(policy_shape(task), 1.5, rng)};
}

// Group sampled from `behavior` with continuous random rewards.
inline RolloutGroup random_group(const Task& task, const TabularPolicy& behavior, int k, RandomStream& rng) {
  const int prompt = static_cast<int>(rng.index(behavior.num_prompts()));
  RolloutGroup g = generate_group(task, behavior, prompt, k, rng);
  for (double& r : g.rewards) r = 2.0 * rng.uniform() - 0.5;
  return g;
}

inline TabularPolicy nudged(const TabularPolicy& p, double scale, RandomStream& rng) {
  std::vector<double> logits(p.logits().begin(), p.logits().end());
  for (double& v : logits) v += scale * (2.0 * rng.uniform() - 1.0);
  return TabularPolicy(p.shape(), std::move(logits), p.version());
}

}  // namespace detail

inline std::vector<CheckResult> gradients(std::uint64_t seed = 1) {
  const std::string s = "gradients";
  RandomStream rng = substream(seed, StreamPurpose::check, 1);
  std::vector<CheckResult> out;

  double lp_err = 0.0;
  double surrogate_err = 0.0;
  double reinforce_err = 0.0;
  double opmd_err = 0.0;
  double multistep_err = 0.0;
  for (int it = 0; it < 20; ++it) {
    auto inst = detail::random_sequence_instance(rng);
    const int k = 2 + static_cast<int>(rng.index(5));
    const auto group = detail::random_group(inst.task, inst.policy, k, rng);
    const auto coords = touched_coordinates(group, inst.policy);
    const double tau = 0.1 + 9.9 * rng.uniform();

    const auto& y = group.responses.front().tokens;
    const auto fd_lp = finite_diff_grad([&](const TabularPolicy& p) { return log_prob_seq(p, group.prompt, y); },
                                        inst.policy, 1e-5, coords);
    lp_err = std::max(lp_err, max_relative_error(fd_lp, grad_log_prob(inst.policy, group.prompt, y)));

    const auto fd_sur = finite_diff_grad(
        [&](const TabularPolicy& p) { return surrogate_loss(group, p, inst.policy, tau); }, inst.policy, 1e-5, coords);
    surrogate_err = std::max(surrogate_err, max_abs_diff(-1.0 * fd_sur, surrogate_grad_at_anchor(group, inst.policy, tau)));

    const auto adv = centered_rewards(group.rewards);
    const auto fd_pg = finite_diff_grad(
        [&](const TabularPolicy& p) {
          double l = 0.0;
          for (std::size_t i = 0; i < group.size(); ++i) l += adv[i] * log_prob_seq(p, group.prompt, group.responses[i].tokens);
          return l / static_cast<double>(group.size());
        },
        inst.policy, 1e-5, coords);
    reinforce_err = std::max(reinforce_err, max_abs_diff(fd_pg, reinforce_grad(group, inst.policy)));

    const TabularPolicy anchor = detail::nudged(inst.policy, 0.5, rng);
    const auto fd_opmd = finite_diff_grad([&](const TabularPolicy& p) { return opmd_loss(group, p, anchor, tau); },
                                          inst.policy, 1e-5, coords);
    opmd_err = std::max(opmd_err, max_relative_error(-1.0 * fd_opmd, opmd_grad(group, inst.policy, anchor, tau)));
  }

  for (int it = 0; it < 10; ++it) {
    MultiStepTask m;
    m.num_actions = 2 + static_cast<int>(rng.index(2));
    m.num_steps = 1 + static_cast<int>(rng.index(3));
    m.num_states = 3;
    for (int i = 0; i < m.num_states * m.num_actions; ++i) m.transitions.push_back(static_cast<int>(rng.index(3)));
    m.initial_states = {0};
    m.goal_state = 2;
    const Task task = m;
    const auto policy = random_policy(policy_shape(task), 1.0, rng);
    const auto group = detail::random_group(task, policy, 4, rng);
    const double tau = 0.1 + 9.9 * rng.uniform();
    const auto fd = finite_diff_grad([&](const TabularPolicy& p) { return surrogate_loss(group, p, policy, tau); },
                                     policy, 1e-5, touched_coordinates(group, policy));
    auto expected = multi_step_reinforce_grad(group, policy);
    expected *= 2.0 * tau / ((1.0 + tau) * (1.0 + tau));
    multistep_err = std::max(multistep_err, max_abs_diff(-1.0 * fd, expected));
  }

  out.push_back(detail::at_most(s, "log_prob_seq finite differences (rel)", lp_err, 1e-6));
  out.push_back(detail::at_most(s, "surrogate loss at anchor vs analytic step (abs)", surrogate_err, 1e-6));
  out.push_back(detail::at_most(s, "REINFORCE objective finite differences (abs)", reinforce_err, 1e-8));
  out.push_back(detail::at_most(s, "OPMD loss at general theta (rel)", opmd_err, 1e-4));
  out.push_back(detail::at_most(s, "multi-step surrogate at anchor (abs)", multistep_err, 1e-6));
  return out;
}

inline std::vector<CheckResult> masks() {
  const std::string s = "masks";
  std::vector<CheckResult> out;
  const ClipConfig clip{0.2, 0.28, 0.6, 2.0};
  ClipConfig ring_eq = clip;
  ring_eq.eps_low_outer = clip.eps_low;
  ring_eq.eps_high_outer = clip.eps_high;
  ClipConfig ring_far = clip;
  ring_far.eps_low_outer = 1e9;
  ring_far.eps_high_outer = 1e9;

  std::size_t table = 0;
  std::size_t dominance = 0;
  std::size_t ring_eq_bad = 0;
  std::size_t ring_far_bad = 0;
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    const double ratio = 0.01 + (5.0 - 0.01) * i / (n - 1);
    for (double a : {-1.0, 1.0}) {
      const auto sign = sign_of(a);
      const int one = clip_mask_one_side(ratio, sign, clip);
      const int two = clip_mask_two_side(ratio, clip);
      const int ring = clip_mask_ring(ratio, sign, clip);
      const bool in_band = ratio >= 1.0 - clip.eps_low && ratio <= 1.0 + clip.eps_high;
      const int one_ref = a > 0 ? ratio <= 1.0 + clip.eps_high : ratio >= 1.0 - clip.eps_low;
      const int ring_ref = in_band || (a > 0 && ratio <= 1.0 - clip.eps_low_outer) ||
                           (a < 0 && ratio >= 1.0 + clip.eps_high_outer);
      table += (one != one_ref) + (two != static_cast<int>(in_band)) + (ring != ring_ref);
      dominance += (two > ring) + (ring > 1) + (two > one);
      ring_eq_bad += clip_mask_ring(ratio, sign, ring_eq) != clip_mask_one_side(ratio, sign, clip);
      ring_far_bad += clip_mask_ring(ratio, sign, ring_far) != two;
    }
  }
  out.push_back(detail::at_most(s, "truth tables on 10^4-point grid (mismatches)", static_cast<double>(table), 0));
  out.push_back(detail::at_most(s, "two_side <= ring <= 1, two_side <= one_side (violations)",
                                static_cast<double>(dominance), 0));
  out.push_back(detail::at_most(s, "ring with outer = inner equals one_side (mismatches)",
                                static_cast<double>(ring_eq_bad), 0));
  out.push_back(detail::at_most(s, "ring with outer = 1e9 equals two_side (mismatches)",
                                static_cast<double>(ring_far_bad), 0));
  const double zero_adv = clip_mask_one_side(1.0, AdvantageSign::zero, clip);
  out.push_back(detail::at_most(s, "one_side mask is 0 for zero advantage", zero_adv, 0));
  return out;
}

inline std::vector<CheckResult> identities(std::uint64_t seed = 1) {
  const std::string s = "identities";
  RandomStream rng = substream(seed, StreamPurpose::check, 3);
  std::vector<CheckResult> out;
  double on_policy = 0.0;
  double shift = 0.0;
  double opmd_anchor = 0.0;
  double asym = 0.0;
  double pairwise = 0.0;
  double red_weight = 0.0;
  double red_drop = 0.0;
  double prefactor = 0.0;
  for (int it = 0; it < 30; ++it) {
    auto inst = detail::random_sequence_instance(rng);
    const int k = 2 + static_cast<int>(rng.index(7));
    auto group = detail::random_group(inst.task, inst.policy, k, rng);
    const auto& pol = inst.policy;
    const auto base = reinforce_grad(group, pol);

    AlgorithmConfig cfg;
    cfg.kind = AlgorithmKind::rec_oneside_is;
    const auto is = rec_grad(group, pol, cfg);
    cfg.kind = AlgorithmKind::rec_oneside_nois;
    const auto nois = rec_grad(group, pol, cfg);
    on_policy = std::max({on_policy, max_abs_diff(is, base), max_abs_diff(nois, base)});

    RolloutGroup shifted = group;
    const double c = 2.0 * rng.uniform() - 1.0;
    for (double& r : shifted.rewards) r += c;
    shift = std::max(shift, max_abs_diff(reinforce_grad(shifted, pol), base));
    cfg.kind = AlgorithmKind::grpo;
    shift = std::max(shift, max_abs_diff(rec_grad(shifted, pol, cfg), rec_grad(group, pol, cfg)));

    opmd_anchor = std::max(opmd_anchor, max_abs_diff(opmd_grad(group, pol, pol, 1.3), base));

    const double tau = 0.1 + 2.0 * rng.uniform();
    GradientVector score_sum = pol.zero_gradient();
    for (const auto& r : group.responses) accumulate_score(score_sum, pol, group.prompt, r.tokens, 1.0);
    auto asym_expected = base;
    asym_expected.add_scaled(score_sum, tau / static_cast<double>(k));
    asym = std::max(asym, max_abs_diff(asymre_grad(group, pol, tau), asym_expected));

    auto k_base = base;
    k_base *= static_cast<double>(k);
    const auto unit_dense = pairwise_weighted_grad(group, pol, WeightMatrix::dense(k, std::vector<double>(k * k, 1.0)));
    const auto unit_rank = pairwise_weighted_grad(group, pol, WeightMatrix::rank_one(std::vector<double>(k, 1.0)));
    pairwise = std::max({pairwise, max_abs_diff(unit_dense, k_base), max_abs_diff(unit_rank, k_base)});

    const auto w = red_weights(group.rewards, tau, true);
    double wsum = 0.0;
    double wr = 0.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      wsum += w[i];
      wr += w[i] * group.rewards[i];
      mean += group.rewards[i];
    }
    mean /= static_cast<double>(k);
    const double rbar_w = wr / wsum;
    GradientVector first = pol.zero_gradient();
    GradientVector second = pol.zero_gradient();
    for (std::size_t i = 0; i < w.size(); ++i) {
      accumulate_score(first, pol, group.prompt, group.responses[i].tokens, w[i] * (group.rewards[i] - rbar_w));
      accumulate_score(second, pol, group.prompt, group.responses[i].tokens, w[i]);
    }
    first.add_scaled(second, rbar_w - mean);
    red_weight = std::max(red_weight, max_abs_diff(first, red_weight_grad(group, pol, tau)));

    for (auto& r : group.rewards) r = rng.uniform() < 0.3 ? 1.0 : 0.0;
    RandomStream drop = substream(seed, StreamPurpose::drop, static_cast<std::uint64_t>(it));
    const auto subset = red_drop_subset(group.rewards, drop);
    double sub_mean = 0.0;
    for (std::size_t i : subset) sub_mean += group.rewards[i];
    sub_mean /= static_cast<double>(subset.size());
    double resid = 0.0;
    for (std::size_t i : subset) resid += group.rewards[i] - sub_mean;
    red_drop = std::max(red_drop, std::abs(resid));

    auto scaled = reinforce_grad(group, pol);
    scaled *= 2.0 * tau / ((1.0 + tau) * (1.0 + tau));
    prefactor = std::max(prefactor, max_abs_diff(surrogate_grad_at_anchor(group, pol, tau), scaled));
  }
  out.push_back(detail::at_most(s, "on-policy REC-OneSide IS/NoIS = REINFORCE", on_policy, 0));
  out.push_back(detail::at_most(s, "shift invariance (REINFORCE, GRPO)", shift, 1e-12));
  out.push_back(detail::at_most(s, "OPMD at anchor = REINFORCE", opmd_anchor, 1e-10));
  out.push_back(detail::at_most(s, "AsymRE decomposition", asym, 1e-12));
  out.push_back(detail::at_most(s, "pairwise unit weights = K * REINFORCE", pairwise, 1e-10));
  out.push_back(detail::at_most(s, "RED-Weight two-term decomposition", red_weight, 1e-10));
  out.push_back(detail::at_most(s, "RED-Drop subset centered sum", red_drop, 1e-12));
  out.push_back(detail::at_most(s, "surrogate step = prefactor * REINFORCE", prefactor, 0));

  double transition = 0.0;
  for (int it = 0; it < 10; ++it) {
    MultiStepTask m;
    m.num_actions = 3;
    m.num_steps = 3;
    m.num_states = 4;
    for (int i = 0; i < 12; ++i) m.transitions.push_back(static_cast<int>(rng.index(4)));
    m.initial_states = {0};
    m.goal_state = 3;
    const Task task = m;
    const auto pol = random_policy(policy_shape(task), 1.0, rng);
    auto group = detail::random_group(task, pol, 5, rng);
    const auto g1 = multi_step_reinforce_grad(group, pol);
    for (int& t : m.transitions) t = static_cast<int>(rng.index(4));
    for (auto& r : group.responses) r.states = trajectory_states(m, group.prompt, r.tokens);
    transition = std::max(transition, max_abs_diff(multi_step_reinforce_grad(group, pol), g1));
  }
  out.push_back(detail::at_most(s, "multi-step update ignores transitions", transition, 0));
  return out;
}

// Staleness of every consumed batch against (l mod m) + n.
inline std::vector<int> measured_staleness(int m, int n, int batches) {
  BanditTask bandit{{0.0, 1.0}};
  const Task task = bandit;
  TabularPolicy trainer(policy_shape(task));
  Scheduler sched({m, n, false}, trainer);
  auto gen = [&](std::uint64_t, const TabularPolicy& rollout) {
    RolloutGroup g;
    g.behavior_version = rollout.version();
    return std::vector<RolloutGroup>{g};
  };
  std::vector<int> out;
  for (int l = 0; l < batches; ++l) {
    out.push_back(sched.next(trainer, gen).staleness);
    trainer = apply_update(trainer, trainer.zero_gradient(), 1.0);
  }
  return out;
}

inline std::vector<CheckResult> scheduler() {
  const std::string s = "scheduler";
  std::vector<CheckResult> out;
  double bad = 0;
  for (int m = 1; m <= 5; ++m) {
    for (int n = 0; n <= 5; ++n) {
      const auto st = measured_staleness(m, n, 15 * m);
      for (int l = 0; l < static_cast<int>(st.size()); ++l) bad += st[l] != off_policyness(l, m, n);
    }
  }
  out.push_back(detail::at_most(s, "staleness = (l mod m) + n, m in 1..5, n in 0..5", bad, 0));
  const std::vector<int> p40{0, 1, 2, 3, 0, 1, 2, 3};
  const std::vector<int> p14(8, 4);
  out.push_back(detail::at_most(s, "(4,0) pattern 0,1,2,3,...", measured_staleness(4, 0, 8) == p40 ? 0 : 1, 0));
  out.push_back(detail::at_most(s, "(1,4) constant 4", measured_staleness(1, 4, 8) == p14 ? 0 : 1, 0));
  return out;
}

inline std::vector<CheckResult> oracle_consistency(std::uint64_t seed = 1) {
  const std::string s = "oracle-consistency";
  RandomStream rng = substream(seed, StreamPurpose::check, 5);
  std::vector<CheckResult> out;
  const BanditTask bandit{{0.0, 0.8, 1.0}};
  const std::vector<double> behavior{0.3, 0.6, 0.1};
  const auto dir = expected_group_relative_direction(bandit, behavior);
  double num = std::abs(dir.mean_reward - 0.58);
  const double centered[3] = {-0.58, 0.22, 0.42};
  for (int j = 0; j < 3; ++j) num = std::max(num, std::abs(dir.centered[j] - centered[j]));
  out.push_back(detail::at_most(s, "bandit mean reward and centered rewards", num, 1e-12));
  out.push_back(detail::at_least(s, "g2 - g3 > 0", dir.direction[1] - dir.direction[2], 1e-12));

  double spread_max = 0.0;
  double norm_err = 0.0;
  double baseline = 0.0;
  for (int it = 0; it < 20; ++it) {
    auto inst = detail::random_sequence_instance(rng);
    const double tau = 0.1 + 9.9 * rng.uniform();
    const int p = static_cast<int>(rng.index(inst.policy.num_prompts()));
    const auto d = optimal_kl_regularized_policy(inst.task, inst.policy, tau, p);
    spread_max = std::max(spread_max, spread(consistency_residuals(d, inst.policy, tau, p)));
    norm_err = std::max(norm_err, std::abs(d.total_probability() - 1.0));
    baseline = std::max(baseline, max_abs_diff(exact_policy_gradient(inst.task, inst.policy, p),
                                                exact_policy_gradient(inst.task, inst.policy, p, rng.uniform())));
  }
  out.push_back(detail::at_most(s, "optimal policy consistency-residual spread", spread_max, 1e-10));
  out.push_back(detail::at_most(s, "optimal policy normalization", norm_err, 1e-10));
  out.push_back(detail::at_most(s, "exact gradient baseline independence", baseline, 1e-12));

  RandomStream mc = substream(seed, StreamPurpose::check, 6);
  out.push_back(detail::at_most(s, "Monte Carlo direction, K = 1e5, 10 trials",
                                mc_vs_exact_direction(bandit, behavior, 100000, 10, mc), 5e-3));

  const Task task = bandit;
  const TabularPolicy uniform(policy_shape(task));
  const double tau = 1.0;
  const int bound = iterated_surrogate_bound(tau, 1.0 / 3.0, 0.2, 1e-6);
  const auto mass = iterated_surrogate_best_mass(bandit, uniform, tau, 1.0 - 1e-6, bound);
  out.push_back(detail::at_least(s, "iterated surrogate reaches 1 - 1e-6 within the tilt bound", mass.back(), 1.0 - 1e-6));
  return out;
}

inline std::vector<CheckResult> run_suite(const std::string& name, std::uint64_t seed = 1) {
  if (name == "gradients") return gradients(seed);
  if (name == "masks") return masks();
  if (name == "identities") return identities(seed);
  if (name == "scheduler") return scheduler();
  if (name == "oracle-consistency") return oracle_consistency(seed);
  if (name == "all") {
    std::vector<CheckResult> all;
    for (const auto& n : suite_names()) {
      auto r = run_suite(n, seed);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  throw ConfigError("unknown check suite '" + name + "'");
}

}  // namespace grlab::checks
