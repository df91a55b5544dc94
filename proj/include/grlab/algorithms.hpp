#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

enum class AlgorithmKind {
  reinforce,
  grpo,
  rec_oneside_is,
  rec_oneside_nois,
  rec_twoside_is,
  rec_twoside_nois,
  rec_ring_nois,
  opmd,
  asymre,
  pairwise_weighted,
  red_drop,
  red_weight,
  multi_step_reinforce,
};

inline constexpr std::array<std::pair<AlgorithmKind, std::string_view>, 13> kAlgorithmNames{{
    {AlgorithmKind::reinforce, "REINFORCE"},
    {AlgorithmKind::grpo, "GRPO"},
    {AlgorithmKind::rec_oneside_is, "REC_OneSide_IS"},
    {AlgorithmKind::rec_oneside_nois, "REC_OneSide_NoIS"},
    {AlgorithmKind::rec_twoside_is, "REC_TwoSide_IS"},
    {AlgorithmKind::rec_twoside_nois, "REC_TwoSide_NoIS"},
    {AlgorithmKind::rec_ring_nois, "REC_Ring_NoIS"},
    {AlgorithmKind::opmd, "OPMD"},
    {AlgorithmKind::asymre, "AsymRE"},
    {AlgorithmKind::pairwise_weighted, "PairwiseWeighted"},
    {AlgorithmKind::red_drop, "RED_Drop"},
    {AlgorithmKind::red_weight, "RED_Weight"},
    {AlgorithmKind::multi_step_reinforce, "MultiStepREINFORCE"},
}};

inline std::string_view to_string(AlgorithmKind kind) {
  for (const auto& [k, name] : kAlgorithmNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

// Case-insensitive; '-' is accepted in place of '_'.
inline std::optional<AlgorithmKind> parse_algorithm_kind(std::string_view text) {
  auto normalize = [](std::string_view s) {
    std::string out;
    for (char c : s) out.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
  };
  const std::string wanted = normalize(text);
  for (const auto& [k, name] : kAlgorithmNames) {
    if (normalize(name) == wanted) return k;
  }
  return std::nullopt;
}

enum class LossNorm {
  per_group_k,       // 1/K per group
  batch_token_mean,  // divide by the number of response tokens instead
};

// Inner band [1 - eps_low, 1 + eps_high]; outer margins for the ring mask.
struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;
  double eps_low_outer = 0.6;
  double eps_high_outer = 2.0;

  void validate() const {
    if (!(eps_low >= 0.0) || !(eps_high >= 0.0)) throw ConfigError("clip margins must be non-negative");
    if (1.0 - eps_low < 0.0) throw ConfigError("eps_low must not exceed 1");
    if (!(eps_low_outer >= eps_low) || !(eps_high_outer >= eps_high)) {
      throw ConfigError("outer clip margins must be at least the inner margins");
    }
  }
};

enum class PairwiseWeights {
  uniform,           // w_i = 1
  inverse_behavior,  // w_i = 1 / pi_old(y_i | x)
};

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::reinforce;
  double tau = 1.0;
  ClipConfig clip;
  LossNorm loss_norm = LossNorm::per_group_k;
  PairwiseWeights pairwise_weights = PairwiseWeights::uniform;
  // RED-Weight advantage: sigma-normalized (true) or centered only.
  bool red_weight_normalized = true;

  bool uses_clip() const {
    switch (kind) {
      case AlgorithmKind::grpo:
      case AlgorithmKind::rec_oneside_is:
      case AlgorithmKind::rec_oneside_nois:
      case AlgorithmKind::rec_twoside_is:
      case AlgorithmKind::rec_twoside_nois:
      case AlgorithmKind::rec_ring_nois:
        return true;
      default:
        return false;
    }
  }
  bool uses_tau() const {
    return kind == AlgorithmKind::opmd || kind == AlgorithmKind::asymre || kind == AlgorithmKind::red_weight;
  }
  // Kinds whose 1/K factor is replaced under batch_token_mean.
  bool token_normalizable() const {
    return kind == AlgorithmKind::reinforce || kind == AlgorithmKind::multi_step_reinforce || uses_clip();
  }

  void validate() const {
    if (uses_tau() && !(tau > 0.0 && std::isfinite(tau))) throw ConfigError("tau must be positive");
    if (uses_clip()) clip.validate();
  }
};

// Floor applied to the group standard deviation in normalized advantages.
inline constexpr double kStdFloor = 1e-6;

inline std::vector<double> centered_rewards(std::span<const double> rewards) {
  const double mean = group_stats(rewards).mean;
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] - mean;
  return out;
}

// A_i = (r_i - mean) / max(std, 1e-6).
inline std::vector<double> normalized_advantages(std::span<const double> rewards) {
  const auto s = group_stats(rewards);
  const double denom = std::max(s.std, kStdFloor);
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - s.mean) / denom;
  return out;
}

inline double group_normalizer(const RolloutGroup& group, LossNorm norm) {
  return norm == LossNorm::per_group_k ? static_cast<double>(group.size())
                                       : static_cast<double>(group.token_count());
}

namespace detail {

// g = (1/normalizer) * sum_i weight_i * grad log pi(y_i | x)
inline GradientVector weighted_score_sum(const RolloutGroup& group, const TabularPolicy& policy,
                                         std::span<const double> weights, double normalizer) {
  GradientVector g = policy.zero_gradient();
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (weights[i] != 0.0) accumulate_score(g, policy, group.prompt, group.responses[i].tokens, weights[i]);
  }
  g *= 1.0 / normalizer;
  return g;
}

}  // namespace detail

// Group-relative REINFORCE, (1/K) sum_i (r_i - mean) grad log pi(y_i | x).
inline GradientVector reinforce_grad(const RolloutGroup& group, const TabularPolicy& policy,
                                     LossNorm norm = LossNorm::per_group_k) {
  group.validate();
  const auto adv = centered_rewards(group.rewards);
  GradientVector g = policy.zero_gradient();
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (adv[i] == 0.0) continue;
    const auto& y = group.responses[i].tokens;
    std::vector<double> w(y.size(), adv[i]);
    accumulate_token_scores(g, policy, group.prompt, y, w);
  }
  g *= 1.0 / group_normalizer(group, norm);
  return g;
}

enum class AdvantageSign { negative = -1, zero = 0, positive = 1 };

inline AdvantageSign sign_of(double advantage) {
  if (advantage > 0.0) return AdvantageSign::positive;
  if (advantage < 0.0) return AdvantageSign::negative;
  return AdvantageSign::zero;
}

inline int clip_mask_one_side(double ratio, AdvantageSign sign, const ClipConfig& clip) {
  if (sign == AdvantageSign::positive) return ratio <= 1.0 + clip.eps_high ? 1 : 0;
  if (sign == AdvantageSign::negative) return ratio >= 1.0 - clip.eps_low ? 1 : 0;
  return 0;
}

inline int clip_mask_two_side(double ratio, const ClipConfig& clip) {
  return (1.0 - clip.eps_low <= ratio && ratio <= 1.0 + clip.eps_high) ? 1 : 0;
}

inline int clip_mask_ring(double ratio, AdvantageSign sign, const ClipConfig& clip) {
  if (clip_mask_two_side(ratio, clip)) return 1;
  if (sign == AdvantageSign::positive && ratio <= 1.0 - clip.eps_low_outer) return 1;
  if (sign == AdvantageSign::negative && ratio >= 1.0 + clip.eps_high_outer) return 1;
  return 0;
}

// Token counts behind the clip fraction: eligible tokens have A != 0.
struct MaskStats {
  std::size_t eligible = 0;
  std::size_t masked = 0;

  MaskStats& operator+=(const MaskStats& o) {
    eligible += o.eligible;
    masked += o.masked;
    return *this;
  }
};

// Token-wise clipped update shared by GRPO and the REC family:
// (1/K) sum_i sum_t grad log pi(y_i^t | .) * A_i * [rho_i^t] * M_i^t.
inline GradientVector rec_grad(const RolloutGroup& group, const TabularPolicy& policy,
                               const AlgorithmConfig& cfg, MaskStats* stats = nullptr) {
  group.validate();
  if (!cfg.uses_clip()) throw ConfigError("rec_grad requires GRPO or a REC kind");
  if (!group.has_behavior_logprobs()) throw DataError("rec_grad requires behavior log-probs");

  const bool importance_sampling =
      cfg.kind == AlgorithmKind::grpo || cfg.kind == AlgorithmKind::rec_oneside_is ||
      cfg.kind == AlgorithmKind::rec_twoside_is;
  const auto adv = cfg.kind == AlgorithmKind::grpo ? normalized_advantages(group.rewards)
                                                    : centered_rewards(group.rewards);

  GradientVector g = policy.zero_gradient();
  MaskStats local;
  std::vector<double> weights;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& resp = group.responses[i];
    const AdvantageSign sign = sign_of(adv[i]);
    if (sign == AdvantageSign::zero) continue;
    const auto current = token_log_probs(policy, group.prompt, resp.tokens);
    weights.assign(resp.tokens.size(), 0.0);
    for (std::size_t t = 0; t < resp.tokens.size(); ++t) {
      const double ratio = std::exp(current[t] - resp.behavior_logprobs[t]);
      int mask = 0;
      switch (cfg.kind) {
        case AlgorithmKind::rec_twoside_is:
        case AlgorithmKind::rec_twoside_nois:
          mask = clip_mask_two_side(ratio, cfg.clip);
          break;
        case AlgorithmKind::rec_ring_nois:
          mask = clip_mask_ring(ratio, sign, cfg.clip);
          break;
        default:
          mask = clip_mask_one_side(ratio, sign, cfg.clip);
      }
      ++local.eligible;
      if (mask == 0) {
        ++local.masked;
        continue;
      }
      weights[t] = importance_sampling ? adv[i] * ratio : adv[i];
    }
    accumulate_token_scores(g, policy, group.prompt, resp.tokens, weights);
  }
  g *= 1.0 / group_normalizer(group, cfg.loss_norm);
  if (stats) *stats += local;
  return g;
}

namespace detail {

inline std::vector<double> sequence_log_probs(const RolloutGroup& group, const TabularPolicy& policy) {
  std::vector<double> out;
  out.reserve(group.size());
  for (const auto& r : group.responses) out.push_back(log_prob_seq(policy, group.prompt, r.tokens));
  return out;
}

// log pi_old(y_i | x) from the recorded behavior log-probs, summed in token order.
inline std::vector<double> behavior_sequence_log_probs(const RolloutGroup& group) {
  if (!group.has_behavior_logprobs()) throw DataError("behavior log-probs missing");
  std::vector<double> out;
  out.reserve(group.size());
  for (const auto& r : group.responses) {
    double s = 0.0;
    for (double lp : r.behavior_logprobs) s += lp;
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

// Pairwise consistency loss around an anchor snapshot:
// (1/K^2) sum_{i<j} (a_i - a_j)^2 / (1 + tau)^2,
// a_i = r_i - tau * (log pi(y_i|x) - log pi_anchor(y_i|x)).
inline double surrogate_loss(const RolloutGroup& group, const TabularPolicy& policy,
                             const TabularPolicy& anchor, double tau) {
  group.validate();
  const auto lp = detail::sequence_log_probs(group, policy);
  const auto lp_anchor = detail::sequence_log_probs(group, anchor);
  std::vector<double> a(group.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = group.rewards[i] - tau * (lp[i] - lp_anchor[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) sum += (a[i] - a[j]) * (a[i] - a[j]);
  }
  const double k = static_cast<double>(group.size());
  return sum / ((1.0 + tau) * (1.0 + tau)) / (k * k);
}

// Descent direction of surrogate_loss at the anchor:
// (2 tau / (1 + tau)^2) * reinforce_grad.
inline GradientVector surrogate_grad_at_anchor(const RolloutGroup& group, const TabularPolicy& anchor, double tau) {
  GradientVector g = reinforce_grad(group, anchor, LossNorm::per_group_k);
  g *= 2.0 * tau / ((1.0 + tau) * (1.0 + tau));
  return g;
}

// REINFORCE loss plus a squared log-ratio regularizer against pi_old:
// -(1/K) sum (r_i - mean) log pi + (tau / 2K) sum (log pi - log pi_old)^2.
inline double opmd_loss(const RolloutGroup& group, const TabularPolicy& policy,
                        std::span<const double> anchor_log_probs, double tau) {
  group.validate();
  if (anchor_log_probs.size() != group.size()) throw DataError("one anchor log-prob per response required");
  const auto adv = centered_rewards(group.rewards);
  const auto lp = detail::sequence_log_probs(group, policy);
  const double k = static_cast<double>(group.size());
  double pg = 0.0;
  double reg = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    pg += adv[i] * lp[i];
    const double d = lp[i] - anchor_log_probs[i];
    reg += d * d;
  }
  return -pg / k + tau / (2.0 * k) * reg;
}

inline double opmd_loss(const RolloutGroup& group, const TabularPolicy& policy, const TabularPolicy& anchor,
                        double tau) {
  return opmd_loss(group, policy, detail::sequence_log_probs(group, anchor), tau);
}

// -grad opmd_loss = (1/K) sum_i [(r_i - mean) - tau (log pi - log pi_old)] grad log pi(y_i|x).
inline GradientVector opmd_grad(const RolloutGroup& group, const TabularPolicy& policy,
                                std::span<const double> anchor_log_probs, double tau) {
  group.validate();
  if (anchor_log_probs.size() != group.size()) throw DataError("one anchor log-prob per response required");
  const auto adv = centered_rewards(group.rewards);
  const auto lp = detail::sequence_log_probs(group, policy);
  std::vector<double> w(group.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = lp[i] - anchor_log_probs[i];
    w[i] = d == 0.0 ? adv[i] : adv[i] - tau * d;
  }
  return detail::weighted_score_sum(group, policy, w, static_cast<double>(group.size()));
}

inline GradientVector opmd_grad(const RolloutGroup& group, const TabularPolicy& policy, const TabularPolicy& anchor,
                                double tau) {
  return opmd_grad(group, policy, detail::sequence_log_probs(group, anchor), tau);
}

// Finite-sample partition estimate tau * log((1/K) sum_i exp(r_i / tau)).
inline double partition_estimate(std::span<const double> rewards, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (rewards.empty()) throw DataError("partition_estimate needs rewards");
  std::vector<double> scaled(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) scaled[i] = rewards[i] / tau;
  const double hi = *std::max_element(scaled.begin(), scaled.end());
  double s = 0.0;
  for (double x : scaled) s += std::exp(x - hi);
  return tau * (hi + std::log(s / static_cast<double>(rewards.size())));
}

// Baseline lowered from mean to mean - tau: (1/K) sum (r_i - mean + tau) grad log pi.
inline GradientVector asymre_grad(const RolloutGroup& group, const TabularPolicy& policy, double tau) {
  group.validate();
  auto w = centered_rewards(group.rewards);
  for (double& x : w) x += tau;
  return detail::weighted_score_sum(group, policy, w, static_cast<double>(group.size()));
}

// Symmetric non-negative pair weights, stored densely or as w_ij = w_i * w_j.
class WeightMatrix {
 public:
  static WeightMatrix dense(std::size_t k, std::vector<double> values) {
    if (values.size() != k * k) throw DataError("dense weight matrix must be K x K");
    WeightMatrix m;
    m.size_ = k;
    m.dense_ = std::move(values);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double w = m.dense_[i * k + j];
        if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("pair weights must be finite and non-negative");
        if (w != m.dense_[j * k + i]) throw DataError("pair weights must be symmetric");
      }
    }
    return m;
  }

  static WeightMatrix rank_one(std::vector<double> w) {
    for (double x : w) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw DataError("sample weights must be finite and non-negative");
    }
    WeightMatrix m;
    m.size_ = w.size();
    m.rank_one_ = std::move(w);
    return m;
  }

  // Dense copy of a rank-one matrix.
  static WeightMatrix outer(std::span<const double> v) {
    std::vector<double> values(v.size() * v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = 0; j < v.size(); ++j) values[i * v.size() + j] = v[i] * v[j];
    }
    return dense(v.size(), std::move(values));
  }

  std::size_t size() const { return size_; }
  bool is_rank_one() const { return !rank_one_.empty(); }
  std::span<const double> factors() const { return rank_one_; }
  double at(std::size_t i, std::size_t j) const {
    return is_rank_one() ? rank_one_[i] * rank_one_[j] : dense_[i * size_ + j];
  }

 private:
  std::size_t size_ = 0;
  std::vector<double> dense_;
  std::vector<double> rank_one_;
};

// Pairwise-weighted REINFORCE:
// (1/K) sum_i (sum_j w_ij) (r_i - sum_j w_ij r_j / sum_j w_ij) grad log pi(y_i|x).
// Rank-one weights use (sum_j w_j) (1/K) sum_i w_i (r_i - r_w) grad log pi directly.
// Samples whose weight row sums to zero contribute nothing; their count is
// written to zero_rows.
inline GradientVector pairwise_weighted_grad(const RolloutGroup& group, const TabularPolicy& policy,
                                             const WeightMatrix& w, std::size_t* zero_rows = nullptr) {
  group.validate();
  const std::size_t k = group.size();
  if (w.size() != k) throw DataError("weight matrix size does not match the group");
  std::vector<double> coef(k, 0.0);
  std::size_t zeros = 0;
  if (w.is_rank_one()) {
    const auto f = w.factors();
    double total = 0.0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      total += f[i];
      weighted += f[i] * group.rewards[i];
    }
    if (!(total > 0.0)) throw DataError("all pair weights are zero");
    const double rbar_w = weighted / total;
    for (std::size_t i = 0; i < k; ++i) {
      if (f[i] == 0.0) {
        ++zeros;
        continue;
      }
      coef[i] = total * f[i] * (group.rewards[i] - rbar_w);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      double row = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        row += w.at(i, j);
        weighted += w.at(i, j) * group.rewards[j];
      }
      if (row == 0.0) {
        ++zeros;
        continue;
      }
      coef[i] = row * (group.rewards[i] - weighted / row);
    }
    if (zeros == k) throw DataError("all pair weights are zero");
  }
  if (zero_rows) *zero_rows = zeros;
  return detail::weighted_score_sum(group, policy, coef, static_cast<double>(k));
}

// Balanced subset for RED-Drop. Positives have r_i > mean, negatives r_i < mean,
// ties are kept. When negatives outnumber positives (and positives exist),
// a random subset of negatives the size of the positive set is retained.
// Returned indices are sorted.
inline std::vector<std::size_t> red_drop_subset(std::span<const double> rewards, RandomStream& rng) {
  const double mean = group_stats(rewards).mean;
  std::vector<std::size_t> keep;
  std::vector<std::size_t> negatives;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (rewards[i] < mean) {
      negatives.push_back(i);
    } else {
      if (rewards[i] > mean) ++positives;
      keep.push_back(i);
    }
  }
  if (positives == 0 || negatives.size() <= positives) {
    std::vector<std::size_t> all(rewards.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  // Partial Fisher-Yates: the first `positives` slots are the survivors.
  for (std::size_t i = 0; i < positives; ++i) {
    const std::size_t j = i + rng.index(negatives.size() - i);
    std::swap(negatives[i], negatives[j]);
  }
  keep.insert(keep.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(positives));
  std::sort(keep.begin(), keep.end());
  return keep;
}

// (1/|S|) sum_{i in S} (r_i - mean_S) grad log pi(y_i|x) over a given subset.
inline GradientVector subset_reinforce_grad(const RolloutGroup& group, const TabularPolicy& policy,
                                            std::span<const std::size_t> subset) {
  if (subset.empty()) throw DataError("empty subset");
  std::vector<double> sub_rewards;
  for (std::size_t i : subset) sub_rewards.push_back(group.rewards.at(i));
  double mean = sub_rewards.front();
  if (sub_rewards.size() > 1) mean = group_stats(sub_rewards).mean;
  std::vector<double> w(group.size(), 0.0);
  for (std::size_t i : subset) w[i] = group.rewards[i] - mean;
  return detail::weighted_score_sum(group, policy, w, static_cast<double>(subset.size()));
}

inline GradientVector red_drop_grad(const RolloutGroup& group, const TabularPolicy& policy, RandomStream& rng) {
  group.validate();
  const auto subset = red_drop_subset(group.rewards, rng);
  return subset_reinforce_grad(group, policy, subset);
}

// Per-sample weights w_i = exp(A_i / tau) for RED-Weight.
inline std::vector<double> red_weights(std::span<const double> rewards, double tau, bool normalized) {
  const auto adv = normalized ? normalized_advantages(rewards) : centered_rewards(rewards);
  std::vector<double> w(adv.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(adv[i] / tau);
  return w;
}

// sum_i w_i (r_i - mean) grad log pi(y_i|x), w_i = exp(A_i / tau).
inline GradientVector red_weight_grad(const RolloutGroup& group, const TabularPolicy& policy, double tau,
                                      bool normalized = true) {
  group.validate();
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  const auto w = red_weights(group.rewards, tau, normalized);
  const auto centered = centered_rewards(group.rewards);
  std::vector<double> coef(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) coef[i] = w[i] * centered[i];
  return detail::weighted_score_sum(group, policy, coef, 1.0);
}

// Trajectory-level group-relative REINFORCE. Each response holds the H actions
// of one trajectory; per-step log-probs are summed and transition
// probabilities never enter.
inline GradientVector multi_step_reinforce_grad(const RolloutGroup& group, const TabularPolicy& policy,
                                                LossNorm norm = LossNorm::per_group_k) {
  group.validate();
  const auto h = static_cast<std::size_t>(policy.max_len());
  for (const auto& r : group.responses) {
    if (r.tokens.size() != h) throw DataError("trajectory length does not match the number of steps");
    if (!r.states.empty() && r.states.size() != h + 1) throw DataError("trajectory state count mismatch");
  }
  return reinforce_grad(group, policy, norm);
}

// Output of one group's update for the trainer.
struct GroupUpdate {
  GradientVector direction;
  std::size_t tokens = 0;
  MaskStats mask;
  std::size_t zero_weight_rows = 0;
  bool token_normalized = false;
};

// Dispatches on cfg.kind. Off-policy anchors (OPMD) and inverse-behavior
// weights come from the group's recorded behavior log-probs.
inline GroupUpdate compute_group_update(const RolloutGroup& group, const TabularPolicy& policy,
                                        const AlgorithmConfig& cfg, RandomStream& rng) {
  GroupUpdate u;
  u.tokens = group.token_count();
  u.token_normalized = cfg.token_normalizable() && cfg.loss_norm == LossNorm::batch_token_mean;
  switch (cfg.kind) {
    case AlgorithmKind::reinforce:
      u.direction = reinforce_grad(group, policy, cfg.loss_norm);
      break;
    case AlgorithmKind::multi_step_reinforce:
      u.direction = multi_step_reinforce_grad(group, policy, cfg.loss_norm);
      break;
    case AlgorithmKind::grpo:
    case AlgorithmKind::rec_oneside_is:
    case AlgorithmKind::rec_oneside_nois:
    case AlgorithmKind::rec_twoside_is:
    case AlgorithmKind::rec_twoside_nois:
    case AlgorithmKind::rec_ring_nois:
      u.direction = rec_grad(group, policy, cfg, &u.mask);
      break;
    case AlgorithmKind::opmd:
      u.direction = opmd_grad(group, policy, detail::behavior_sequence_log_probs(group), cfg.tau);
      break;
    case AlgorithmKind::asymre:
      u.direction = asymre_grad(group, policy, cfg.tau);
      break;
    case AlgorithmKind::pairwise_weighted: {
      std::vector<double> w(group.size(), 1.0);
      if (cfg.pairwise_weights == PairwiseWeights::inverse_behavior) {
        const auto lp = detail::behavior_sequence_log_probs(group);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-lp[i]);
      }
      u.direction = pairwise_weighted_grad(group, policy, WeightMatrix::rank_one(std::move(w)), &u.zero_weight_rows);
      break;
    }
    case AlgorithmKind::red_drop:
      u.direction = red_drop_grad(group, policy, rng);
      break;
    case AlgorithmKind::red_weight:
      u.direction = red_weight_grad(group, policy, cfg.tau, cfg.red_weight_normalized);
      break;
  }
  return u;
}

}  // namespace grlab
