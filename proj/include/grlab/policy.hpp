#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grlab/error.hpp"
#include "grlab/random.hpp"

namespace grlab {

using Token = int;
using TokenSeq = std::vector<Token>;

// Refuse configurations with more enumerable responses per prompt than this.
inline constexpr std::uint64_t kMaxEnumerableResponses = 1'000'000;
// Upper bound on logit-table rows.
inline constexpr std::uint64_t kMaxContexts = 10'000'000;

namespace detail {

inline std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

inline std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  return a > std::numeric_limits<std::uint64_t>::max() - b
             ? std::numeric_limits<std::uint64_t>::max()
             : a + b;
}

inline std::uint64_t saturating_pow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) r = saturating_mul(r, base);
  return r;
}

// log(sum(exp(xs))) for a non-empty row.
inline double log_sum_exp(std::span<const double> xs) {
  const double hi = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace detail

// Dimensions of an autoregressive tabular policy.
//
// Contexts are the nodes of a prefix tree: for every prompt, every partial
// response of length 0..max_len-1 over the full vocabulary owns one logit
// row, giving num_prompts * (V^L - 1) / (V - 1) rows. Token V-1 is the
// end-of-sequence token when `stop_on_eos` is set; a response also ends after
// max_len tokens whatever its last token is. With `stop_on_eos` unset every
// response has exactly max_len tokens (multi-step trajectories).
struct PolicyShape {
  int vocab_size = 2;
  int max_len = 1;
  int num_prompts = 1;
  bool stop_on_eos = true;

  Token eos() const { return vocab_size - 1; }

  std::uint64_t contexts_per_prompt() const {
    std::uint64_t total = 0;
    for (int k = 0; k < max_len; ++k) {
      total = detail::saturating_add(total, detail::saturating_pow(vocab_size, k));
    }
    return total;
  }

  std::uint64_t num_contexts() const {
    return detail::saturating_mul(contexts_per_prompt(), num_prompts);
  }

  // Number of distinct terminating responses for one prompt.
  std::uint64_t num_responses() const {
    const auto v = static_cast<std::uint64_t>(vocab_size);
    if (!stop_on_eos) return detail::saturating_pow(v, max_len);
    std::uint64_t total = 0;
    for (int k = 0; k + 1 < max_len; ++k) {
      total = detail::saturating_add(total, detail::saturating_pow(v - 1, k));
    }
    return detail::saturating_add(
        total, detail::saturating_mul(v, detail::saturating_pow(v - 1, max_len - 1)));
  }

  void validate() const {
    if (vocab_size < 2) throw DimensionError("vocab_size must be at least 2");
    if (max_len < 1) throw DimensionError("max_len must be at least 1");
    if (num_prompts < 1) throw DimensionError("num_prompts must be at least 1");
    if (num_contexts() > kMaxContexts) {
      throw CapacityError("policy table has more than " + std::to_string(kMaxContexts) +
                          " contexts");
    }
  }

  // Throws CapacityError when exact enumeration is refused.
  void require_enumerable() const {
    if (num_responses() > kMaxEnumerableResponses) {
      throw CapacityError("more than " + std::to_string(kMaxEnumerableResponses) +
                          " enumerable responses per prompt");
    }
  }

  bool operator==(const PolicyShape&) const = default;
};

// A conditioning context (prompt, partial response).
struct Context {
  int prompt = 0;
  TokenSeq prefix;
};

// Dense accumulator with the shape of a policy's logit table.
class GradientVector {
 public:
  GradientVector() = default;
  GradientVector(std::size_t num_contexts, int vocab_size)
      : num_contexts_(num_contexts),
        vocab_size_(vocab_size),
        values_(num_contexts * static_cast<std::size_t>(vocab_size), 0.0) {}

  std::size_t num_contexts() const { return num_contexts_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> row(std::size_t ctx) {
    return {values_.data() + ctx * vocab_size_, static_cast<std::size_t>(vocab_size_)};
  }
  std::span<const double> row(std::size_t ctx) const {
    return {values_.data() + ctx * vocab_size_, static_cast<std::size_t>(vocab_size_)};
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_shape(const GradientVector& other) const {
    return num_contexts_ == other.num_contexts_ && vocab_size_ == other.vocab_size_;
  }

  GradientVector& operator+=(const GradientVector& other) {
    check_shape(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }
  GradientVector& operator-=(const GradientVector& other) {
    check_shape(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
  }
  GradientVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  // this += scale * other
  void add_scaled(const GradientVector& other, double scale) {
    check_shape(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }
  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend GradientVector operator+(GradientVector a, const GradientVector& b) { return a += b; }
  friend GradientVector operator-(GradientVector a, const GradientVector& b) { return a -= b; }
  friend GradientVector operator*(double s, GradientVector a) { return a *= s; }
  bool operator==(const GradientVector&) const = default;

 private:
  void check_shape(const GradientVector& other) const {
    if (!same_shape(other)) throw DimensionError("gradient shape mismatch");
  }

  std::size_t num_contexts_ = 0;
  int vocab_size_ = 0;
  std::vector<double> values_;
};

// Largest element-wise |a - b|.
inline double max_abs_diff(const GradientVector& a, const GradientVector& b) {
  if (!a.same_shape(b)) throw DimensionError("gradient shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Softmax logit table over (context, token). Immutable once built;
// apply_update returns a new snapshot with an incremented version.
class TabularPolicy {
 public:
  explicit TabularPolicy(PolicyShape shape) : shape_(shape) {
    shape_.validate();
    logits_.assign(shape_.num_contexts() * shape_.vocab_size, 0.0);
    init_offsets();
  }

  TabularPolicy(PolicyShape shape, std::vector<double> logits, std::uint64_t version = 0)
      : shape_(shape), logits_(std::move(logits)), version_(version) {
    shape_.validate();
    if (logits_.size() != shape_.num_contexts() * shape_.vocab_size) {
      throw DimensionError("logit table size does not match policy shape");
    }
    for (double v : logits_) {
      if (!std::isfinite(v)) throw NumericalError("non-finite logit");
    }
    init_offsets();
  }

  const PolicyShape& shape() const { return shape_; }
  int vocab_size() const { return shape_.vocab_size; }
  int max_len() const { return shape_.max_len; }
  int num_prompts() const { return shape_.num_prompts; }
  std::uint64_t version() const { return version_; }
  std::size_t num_contexts() const { return logits_.size() / shape_.vocab_size; }
  std::span<const double> logits() const { return logits_; }

  std::span<const double> row(std::size_t ctx) const {
    check_context(ctx);
    return {logits_.data() + ctx * shape_.vocab_size, static_cast<std::size_t>(shape_.vocab_size)};
  }

  GradientVector zero_gradient() const { return GradientVector(num_contexts(), shape_.vocab_size); }

  // Walks the prefix tree one token at a time.
  class Cursor {
   public:
    std::size_t index() const { return base_ + offsets_[depth_] + code_; }
    int depth() const { return depth_; }
    void advance(Token tok) {
      code_ = code_ * vocab_ + static_cast<std::size_t>(tok);
      ++depth_;
    }

   private:
    friend class TabularPolicy;
    Cursor(std::size_t base, const std::vector<std::size_t>& offsets, int vocab)
        : base_(base), offsets_(offsets), vocab_(static_cast<std::size_t>(vocab)) {}
    std::size_t base_;
    const std::vector<std::size_t>& offsets_;
    std::size_t vocab_;
    std::size_t code_ = 0;
    int depth_ = 0;
  };

  Cursor root(int prompt) const {
    check_prompt(prompt);
    return Cursor(static_cast<std::size_t>(prompt) * offsets_.back(), offsets_, shape_.vocab_size);
  }

  std::size_t context_index(int prompt, std::span<const Token> prefix) const {
    if (prefix.size() >= static_cast<std::size_t>(shape_.max_len)) {
      throw DimensionError("partial response must be shorter than max_len");
    }
    Cursor c = root(prompt);
    for (Token t : prefix) {
      check_token(t);
      c.advance(t);
    }
    return c.index();
  }
  std::size_t context_index(const Context& ctx) const { return context_index(ctx.prompt, ctx.prefix); }

  double log_prob(std::size_t ctx, Token tok) const {
    check_token(tok);
    auto r = row(ctx);
    return r[tok] - detail::log_sum_exp(r);
  }

  // Writes softmax(row(ctx)) into out.
  void probabilities(std::size_t ctx, std::span<double> out) const {
    auto r = row(ctx);
    const double lse = detail::log_sum_exp(r);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] = std::exp(r[j] - lse);
  }
  std::vector<double> probabilities(std::size_t ctx) const {
    std::vector<double> p(shape_.vocab_size);
    probabilities(ctx, p);
    return p;
  }

  void check_token(Token tok) const {
    if (tok < 0 || tok >= shape_.vocab_size) {
      throw DimensionError("token " + std::to_string(tok) + " outside vocabulary");
    }
  }
  void check_prompt(int prompt) const {
    if (prompt < 0 || prompt >= shape_.num_prompts) {
      throw DimensionError("prompt " + std::to_string(prompt) + " out of range");
    }
  }
  void check_context(std::size_t ctx) const {
    if (ctx >= num_contexts()) throw DimensionError("context index out of range");
  }

  // Checks length and end-of-sequence placement of a complete response.
  void check_response(std::span<const Token> response) const {
    if (response.empty()) throw DimensionError("empty response");
    if (response.size() > static_cast<std::size_t>(shape_.max_len)) {
      throw DimensionError("response longer than max_len");
    }
    for (std::size_t t = 0; t < response.size(); ++t) {
      check_token(response[t]);
      if (shape_.stop_on_eos && response[t] == shape_.eos() && t + 1 != response.size()) {
        throw DimensionError("end-of-sequence token before the end of the response");
      }
    }
    if (!shape_.stop_on_eos && response.size() != static_cast<std::size_t>(shape_.max_len)) {
      throw DimensionError("fixed-length response has wrong length");
    }
  }

  bool operator==(const TabularPolicy& o) const {
    return shape_ == o.shape_ && version_ == o.version_ && logits_ == o.logits_;
  }

 private:
  friend TabularPolicy apply_update(const TabularPolicy&, const GradientVector&, double);

  void init_offsets() {
    offsets_.assign(shape_.max_len + 1, 0);
    std::size_t level = 1;
    for (int k = 0; k < shape_.max_len; ++k) {
      offsets_[k + 1] = offsets_[k] + level;
      level *= static_cast<std::size_t>(shape_.vocab_size);
    }
  }

  PolicyShape shape_;
  std::vector<double> logits_;
  std::uint64_t version_ = 0;
  // offsets_[d] = first in-prompt index of depth d; offsets_.back() = rows per prompt.
  std::vector<std::size_t> offsets_;
};

inline double log_prob_token(const TabularPolicy& policy, const Context& ctx, Token tok) {
  return policy.log_prob(policy.context_index(ctx), tok);
}

// Per-token log-probabilities along a response, contexts advanced left to right.
inline std::vector<double> token_log_probs(const TabularPolicy& policy, int prompt,
                                           std::span<const Token> response) {
  policy.check_response(response);
  std::vector<double> out;
  out.reserve(response.size());
  auto cursor = policy.root(prompt);
  for (Token tok : response) {
    out.push_back(policy.log_prob(cursor.index(), tok));
    cursor.advance(tok);
  }
  return out;
}

// Sum of per-token log-probabilities, accumulated in token order.
inline double log_prob_seq(const TabularPolicy& policy, int prompt, std::span<const Token> response) {
  double total = 0.0;
  for (double lp : token_log_probs(policy, prompt, response)) total += lp;
  return total;
}

struct SampledResponse {
  TokenSeq tokens;
  std::vector<double> log_probs;
};

// Ancestral sampling until end-of-sequence (if enabled) or max_len.
inline SampledResponse sample_response(const TabularPolicy& policy, int prompt, RandomStream& rng) {
  SampledResponse out;
  std::vector<double> probs(policy.vocab_size());
  auto cursor = policy.root(prompt);
  const auto& shape = policy.shape();
  for (int t = 0; t < shape.max_len; ++t) {
    policy.probabilities(cursor.index(), probs);
    const auto tok = static_cast<Token>(rng.categorical(probs));
    out.tokens.push_back(tok);
    out.log_probs.push_back(policy.log_prob(cursor.index(), tok));
    if (shape.stop_on_eos && tok == shape.eos()) break;
    cursor.advance(tok);
  }
  return out;
}

// g += sum_t weights[t] * (e_{y_t} - softmax(row(c_t))).
inline void accumulate_token_scores(GradientVector& g, const TabularPolicy& policy, int prompt,
                                    std::span<const Token> response, std::span<const double> weights) {
  if (g.num_contexts() != policy.num_contexts() || g.vocab_size() != policy.vocab_size()) {
    throw DimensionError("gradient does not match policy shape");
  }
  if (weights.size() != response.size()) throw DimensionError("one weight per token required");
  policy.check_response(response);
  std::vector<double> probs(policy.vocab_size());
  auto cursor = policy.root(prompt);
  for (std::size_t t = 0; t < response.size(); ++t) {
    const double w = weights[t];
    if (w != 0.0) {
      policy.probabilities(cursor.index(), probs);
      auto row = g.row(cursor.index());
      for (std::size_t j = 0; j < probs.size(); ++j) row[j] -= w * probs[j];
      row[response[t]] += w;
    }
    cursor.advance(response[t]);
  }
}

// g += weight * grad log pi(response | prompt).
inline void accumulate_score(GradientVector& g, const TabularPolicy& policy, int prompt,
                             std::span<const Token> response, double weight) {
  std::vector<double> w(response.size(), weight);
  accumulate_token_scores(g, policy, prompt, response, w);
}

inline GradientVector grad_log_prob(const TabularPolicy& policy, int prompt,
                                    std::span<const Token> response) {
  GradientVector g = policy.zero_gradient();
  accumulate_score(g, policy, prompt, response, 1.0);
  return g;
}

// Shannon entropy (nats) of the next-token distribution at ctx.
inline double entropy(const TabularPolicy& policy, std::size_t ctx) {
  auto r = policy.row(ctx);
  const double lse = detail::log_sum_exp(r);
  double h = 0.0;
  for (double x : r) {
    const double lp = x - lse;
    h -= std::exp(lp) * lp;
  }
  return std::max(h, 0.0);
}
inline double entropy(const TabularPolicy& policy, const Context& ctx) {
  return entropy(policy, policy.context_index(ctx));
}

// Visits every terminating response of one prompt in lexicographic order.
inline void for_each_response(const PolicyShape& shape,
                              const std::function<void(const TokenSeq&)>& visit) {
  shape.validate();
  shape.require_enumerable();
  TokenSeq prefix;
  std::function<void()> recurse = [&]() {
    for (Token tok = 0; tok < shape.vocab_size; ++tok) {
      prefix.push_back(tok);
      const bool ends = static_cast<int>(prefix.size()) == shape.max_len ||
                        (shape.stop_on_eos && tok == shape.eos());
      if (ends) {
        visit(prefix);
      } else {
        recurse();
      }
      prefix.pop_back();
    }
  };
  recurse();
}

inline std::vector<TokenSeq> enumerate_sequences(const PolicyShape& shape) {
  std::vector<TokenSeq> out;
  for_each_response(shape, [&](const TokenSeq& y) { out.push_back(y); });
  return out;
}

// Exact sequence-level KL(p || q) for one prompt by full enumeration.
inline double kl_exact(const TabularPolicy& p, const TabularPolicy& q, int prompt) {
  if (p.shape() != q.shape()) throw DimensionError("policies have different shapes");
  double kl = 0.0;
  for_each_response(p.shape(), [&](const TokenSeq& y) {
    const double lp = log_prob_seq(p, prompt, y);
    const double lq = log_prob_seq(q, prompt, y);
    if (lp == lq) return;
    kl += std::exp(lp) * (lp - lq);
  });
  return kl;
}

// logits + eta * g as a new snapshot with version + 1.
inline TabularPolicy apply_update(const TabularPolicy& policy, const GradientVector& g, double eta) {
  if (g.num_contexts() != policy.num_contexts() || g.vocab_size() != policy.vocab_size()) {
    throw DimensionError("gradient does not match policy shape");
  }
  if (!std::isfinite(eta)) throw NumericalError("non-finite learning rate");
  TabularPolicy next = policy;
  for (std::size_t i = 0; i < next.logits_.size(); ++i) {
    next.logits_[i] += eta * g[i];
    if (!std::isfinite(next.logits_[i])) throw NumericalError("non-finite logit after update");
  }
  next.version_ = policy.version_ + 1;
  return next;
}

// Copy of the policy with one logit shifted by delta (finite differences).
inline TabularPolicy perturbed(const TabularPolicy& policy, std::size_t coord, double delta) {
  std::vector<double> logits(policy.logits().begin(), policy.logits().end());
  logits.at(coord) += delta;
  return TabularPolicy(policy.shape(), std::move(logits), policy.version());
}

// Policy whose every row equals log(probs) (bandit behavior policies).
inline TabularPolicy policy_from_probabilities(const PolicyShape& shape, std::span<const double> probs) {
  if (probs.size() != static_cast<std::size_t>(shape.vocab_size)) {
    throw DimensionError("probability vector length must equal vocab_size");
  }
  double total = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw DimensionError("probabilities must be strictly positive");
    total += p;
  }
  std::vector<double> logits(shape.num_contexts() * shape.vocab_size);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] = std::log(probs[i % probs.size()] / total);
  }
  return TabularPolicy(shape, std::move(logits));
}

// Logits drawn uniformly from [-scale, scale].
inline TabularPolicy random_policy(const PolicyShape& shape, double scale, RandomStream& rng) {
  std::vector<double> logits(shape.num_contexts() * shape.vocab_size);
  for (double& v : logits) v = scale * (2.0 * rng.uniform() - 1.0);
  return TabularPolicy(shape, std::move(logits));
}

}  // namespace grlab
