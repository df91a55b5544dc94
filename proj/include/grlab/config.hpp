#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "grlab/algorithms.hpp"
#include "grlab/error.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/scheduler.hpp"
#include "grlab/tasks.hpp"
#include "grlab/trainer.hpp"

namespace grlab {

enum class PolicyInit { zeros, random, probs };

struct PolicyInitConfig {
  PolicyInit kind = PolicyInit::zeros;
  double scale = 1.0;         // random: logits uniform in [-scale, scale]
  std::vector<double> probs;  // probs: every row set to these probabilities
};

struct ExperimentConfig {
  Task task = BanditTask{};
  PolicyInitConfig init;
  AlgorithmConfig algorithm;
  ScheduleConfig schedule;
  OptimizerConfig optimizer;
  std::string output_dir = "runs/latest";
};

// Flat "section.key" -> raw value map.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  KeyValues kv;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) kv[section + "." + key] = value.get_value<std::string>();
  }
  return kv;
}

inline KeyValues load_ini(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_ini(ss.str());
}

// Applies "section.key=value" overrides.
inline void apply_overrides(KeyValues& kv, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || s.find('.') > eq) {
      throw ConfigError("override '" + s + "' must look like section.key=value");
    }
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view text) {
  const std::string s = trim(text);
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
  return v;
}

// "[a, b, c]", "a, b, c" or "a b c"
inline std::vector<std::string> split_list(std::string_view text) {
  std::string s = trim(text);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (is >> item) out.push_back(item);
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T>
std::string format_list(const std::vector<T>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      s += format_double(xs[i]);
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s + "]";
}

// Typed access to a KeyValues map that records every problem instead of
// stopping at the first one.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  std::optional<std::string> raw(const std::string& key, bool required) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) {
      if (required) errors_.push_back("missing required key '" + key + "'");
      return std::nullopt;
    }
    return trim(it->second);
  }

  template <class T>
  std::optional<T> number(const std::string& key, bool required) {
    auto r = raw(key, required);
    if (!r) return std::nullopt;
    auto v = parse_number<T>(*r);
    if (!v) errors_.push_back("key '" + key + "': '" + *r + "' is not a valid number");
    return v;
  }

  template <class T>
  void number(const std::string& key, T& out) {
    if (auto v = number<T>(key, false)) out = *v;
  }

  void boolean(const std::string& key, bool& out) {
    auto r = raw(key, false);
    if (!r) return;
    const std::string s = lower(*r);
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
      out = true;
    } else if (s == "false" || s == "0" || s == "no" || s == "off") {
      out = false;
    } else {
      errors_.push_back("key '" + key + "': '" + *r + "' is not a boolean");
    }
  }

  template <class T>
  std::optional<std::vector<T>> list(const std::string& key, bool required) {
    auto r = raw(key, required);
    if (!r) return std::nullopt;
    std::vector<T> out;
    for (const auto& item : split_list(*r)) {
      auto v = parse_number<T>(item);
      if (!v) {
        errors_.push_back("key '" + key + "': '" + item + "' is not a valid number");
        return std::nullopt;
      }
      out.push_back(*v);
    }
    return out;
  }

  // One of `choices` (case-insensitive); returns the index.
  std::optional<std::size_t> choice(const std::string& key, bool required,
                                    std::initializer_list<std::string_view> choices) {
    auto r = raw(key, required);
    if (!r) return std::nullopt;
    std::size_t i = 0;
    for (auto c : choices) {
      if (lower(*r) == lower(std::string(c))) return i;
      ++i;
    }
    std::string allowed;
    for (auto c : choices) allowed += (allowed.empty() ? "" : ", ") + std::string(c);
    errors_.push_back("key '" + key + "': '" + *r + "' is not one of {" + allowed + "}");
    return std::nullopt;
  }

  void error(std::string msg) { errors_.push_back(std::move(msg)); }

  template <class F>
  void validate(const std::string& section, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      errors_.push_back("[" + section + "] " + e.what());
    }
  }

  // Throws one ConfigError listing every problem, unknown keys included.
  void finish() {
    for (const auto& [key, value] : kv_) {
      if (!used_.count(key)) errors_.push_back("unknown key '" + key + "'");
    }
    if (errors_.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errors_) msg += "\n  " + e;
    throw ConfigError(msg);
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
  std::vector<std::string> errors_;
};

// "0 1 2 3 | 2 1 0"
inline std::optional<std::vector<TokenSeq>> parse_targets(const std::string& text) {
  std::vector<TokenSeq> out;
  std::size_t start = 0;
  while (true) {
    const auto bar = text.find('|', start);
    TokenSeq seq;
    for (const auto& item : split_list(text.substr(start, bar == std::string::npos ? std::string::npos : bar - start))) {
      auto v = parse_number<int>(item);
      if (!v) return std::nullopt;
      seq.push_back(*v);
    }
    out.push_back(std::move(seq));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

inline std::string format_targets(const std::vector<TokenSeq>& targets) {
  std::string s;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i) s += " | ";
    for (std::size_t j = 0; j < targets[i].size(); ++j) s += (j ? " " : "") + std::to_string(targets[i][j]);
  }
  return s;
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const KeyValues& kv) {
  detail::ConfigReader r(kv);
  ExperimentConfig cfg;

  const auto task_kind = r.choice("task.kind", true, {"bandit", "sequence", "multistep"});
  if (task_kind == 0u) {
    BanditTask t;
    if (auto v = r.list<double>("task.arm_rewards", true)) t.arm_rewards = *v;
    cfg.task = t;
  } else if (task_kind == 1u) {
    SequenceTask t;
    if (auto v = r.number<int>("task.vocab_size", true)) t.vocab_size = *v;
    if (auto v = r.number<int>("task.max_len", true)) t.max_len = *v;
    r.number("task.num_prompts", t.num_prompts);
    if (auto v = r.list<double>("task.prompt_weights", false)) t.prompt_weights = *v;
    if (auto v = r.choice("task.rule", false, {"target_match", "parity"})) {
      t.rule = *v == 0 ? RewardRule::target_match : RewardRule::parity;
    }
    if (t.rule == RewardRule::target_match) {
      if (auto s = r.raw("task.targets", true)) {
        if (auto v = detail::parse_targets(*s)) {
          t.targets = *v;
        } else {
          r.error("key 'task.targets': '" + *s + "' is not a '|'-separated list of token lists");
        }
      }
    } else {
      r.number("task.parity", t.parity);
    }
    cfg.task = t;
  } else if (task_kind == 2u) {
    MultiStepTask t;
    if (auto v = r.number<int>("task.num_actions", true)) t.num_actions = *v;
    if (auto v = r.number<int>("task.num_steps", true)) t.num_steps = *v;
    if (auto v = r.number<int>("task.num_states", true)) t.num_states = *v;
    if (auto v = r.list<int>("task.transitions", true)) t.transitions = *v;
    if (auto v = r.list<int>("task.initial_states", true)) t.initial_states = *v;
    if (auto v = r.list<double>("task.prompt_weights", false)) t.prompt_weights = *v;
    if (auto v = r.number<int>("task.goal_state", true)) t.goal_state = *v;
    cfg.task = t;
  }

  if (auto v = r.choice("policy.init", false, {"zeros", "random", "probs"})) {
    cfg.init.kind = static_cast<PolicyInit>(*v);
  }
  if (cfg.init.kind == PolicyInit::random) r.number("policy.init_scale", cfg.init.scale);
  if (cfg.init.kind == PolicyInit::probs) {
    if (auto v = r.list<double>("policy.init_probs", true)) cfg.init.probs = *v;
  }

  auto& a = cfg.algorithm;
  if (auto s = r.raw("algorithm.kind", true)) {
    if (auto k = parse_algorithm_kind(*s)) {
      a.kind = *k;
    } else {
      r.error("key 'algorithm.kind': unknown algorithm '" + *s + "'");
    }
  }
  r.number("algorithm.tau", a.tau);
  r.number("algorithm.eps_low", a.clip.eps_low);
  r.number("algorithm.eps_high", a.clip.eps_high);
  r.number("algorithm.eps_low_outer", a.clip.eps_low_outer);
  r.number("algorithm.eps_high_outer", a.clip.eps_high_outer);
  if (auto v = r.choice("algorithm.loss_norm", false, {"per_group_k", "batch_token_mean"})) {
    a.loss_norm = static_cast<LossNorm>(*v);
  }
  if (auto v = r.choice("algorithm.pairwise_weights", false, {"uniform", "inverse_behavior"})) {
    a.pairwise_weights = static_cast<PairwiseWeights>(*v);
  }
  r.boolean("algorithm.red_weight_normalized", a.red_weight_normalized);

  r.number("schedule.sync_interval", cfg.schedule.sync_interval);
  r.number("schedule.sync_offset", cfg.schedule.sync_offset);
  r.boolean("schedule.offline", cfg.schedule.offline);

  auto& o = cfg.optimizer;
  if (auto v = r.number<double>("optimizer.eta", true)) o.eta = *v;
  if (auto s = r.raw("optimizer.grad_clip_norm", false)) {
    if (detail::lower(*s) != "none") {
      if (auto v = detail::parse_number<double>(*s)) {
        o.grad_clip_norm = *v;
      } else {
        r.error("key 'optimizer.grad_clip_norm': '" + *s + "' is neither a number nor 'none'");
      }
    }
  }
  if (auto v = r.number<int>("optimizer.steps", true)) o.steps = *v;
  r.number("optimizer.batch_prompts", o.batch_prompts);
  if (auto v = r.number<int>("optimizer.group_size", true)) o.group_size = *v;
  r.number("optimizer.seed", o.seed);

  if (auto s = r.raw("output.dir", false)) cfg.output_dir = *s;

  if (task_kind) {
    r.validate("task", [&] {
      validate_task(cfg.task);
      policy_shape(cfg.task).validate();
    });
  }
  r.validate("algorithm", [&] {
    a.validate();
    if (a.kind == AlgorithmKind::multi_step_reinforce && !std::holds_alternative<MultiStepTask>(cfg.task)) {
      throw ConfigError("MultiStepREINFORCE requires task.kind = multistep");
    }
  });
  r.validate("schedule", [&] { cfg.schedule.validate(); });
  r.validate("optimizer", [&] { o.validate(); });
  if (task_kind && cfg.init.kind == PolicyInit::probs) {
    r.validate("policy", [&] {
      if (cfg.init.probs.size() != static_cast<std::size_t>(policy_shape(cfg.task).vocab_size)) {
        throw ConfigError("init_probs must have one entry per token");
      }
      for (double p : cfg.init.probs) {
        if (!(p > 0.0)) throw ConfigError("init_probs must be strictly positive");
      }
    });
  }
  if (cfg.init.kind == PolicyInit::random && !(cfg.init.scale >= 0.0)) r.error("[policy] init_scale must be >= 0");
  r.finish();
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides = {}) {
  KeyValues kv = load_ini(path);
  apply_overrides(kv, overrides);
  return parse_experiment(kv);
}

inline TabularPolicy initial_policy(const ExperimentConfig& cfg) {
  const PolicyShape shape = policy_shape(cfg.task);
  switch (cfg.init.kind) {
    case PolicyInit::random: {
      RandomStream rng = substream(cfg.optimizer.seed, StreamPurpose::init);
      return random_policy(shape, cfg.init.scale, rng);
    }
    case PolicyInit::probs:
      return policy_from_probabilities(shape, cfg.init.probs);
    case PolicyInit::zeros:
      break;
  }
  return TabularPolicy(shape);
}

// Fully resolved configuration; parsing it back yields the same ExperimentConfig.
inline std::string to_ini(const ExperimentConfig& cfg) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream os;
  os << "[task]\n";
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, BanditTask>) {
          os << "kind = bandit\narm_rewards = " << format_list(t.arm_rewards) << "\n";
        } else if constexpr (std::is_same_v<T, SequenceTask>) {
          os << "kind = sequence\nvocab_size = " << t.vocab_size << "\nmax_len = " << t.max_len
             << "\nnum_prompts = " << t.num_prompts << "\n";
          if (!t.prompt_weights.empty()) os << "prompt_weights = " << format_list(t.prompt_weights) << "\n";
          if (t.rule == RewardRule::target_match) {
            os << "rule = target_match\ntargets = " << detail::format_targets(t.targets) << "\n";
          } else {
            os << "rule = parity\nparity = " << t.parity << "\n";
          }
        } else {
          os << "kind = multistep\nnum_actions = " << t.num_actions << "\nnum_steps = " << t.num_steps
             << "\nnum_states = " << t.num_states << "\ntransitions = " << format_list(t.transitions)
             << "\ninitial_states = " << format_list(t.initial_states) << "\n";
          if (!t.prompt_weights.empty()) os << "prompt_weights = " << format_list(t.prompt_weights) << "\n";
          os << "goal_state = " << t.goal_state << "\n";
        }
      },
      cfg.task);

  os << "\n[policy]\n";
  switch (cfg.init.kind) {
    case PolicyInit::zeros:
      os << "init = zeros\n";
      break;
    case PolicyInit::random:
      os << "init = random\ninit_scale = " << format_double(cfg.init.scale) << "\n";
      break;
    case PolicyInit::probs:
      os << "init = probs\ninit_probs = " << format_list(cfg.init.probs) << "\n";
      break;
  }

  const auto& a = cfg.algorithm;
  os << "\n[algorithm]\nkind = " << to_string(a.kind) << "\ntau = " << format_double(a.tau)
     << "\neps_low = " << format_double(a.clip.eps_low) << "\neps_high = " << format_double(a.clip.eps_high)
     << "\neps_low_outer = " << format_double(a.clip.eps_low_outer)
     << "\neps_high_outer = " << format_double(a.clip.eps_high_outer)
     << "\nloss_norm = " << (a.loss_norm == LossNorm::per_group_k ? "per_group_k" : "batch_token_mean")
     << "\npairwise_weights = " << (a.pairwise_weights == PairwiseWeights::uniform ? "uniform" : "inverse_behavior")
     << "\nred_weight_normalized = " << (a.red_weight_normalized ? "true" : "false") << "\n";

  os << "\n[schedule]\nsync_interval = " << cfg.schedule.sync_interval
     << "\nsync_offset = " << cfg.schedule.sync_offset
     << "\noffline = " << (cfg.schedule.offline ? "true" : "false") << "\n";

  const auto& o = cfg.optimizer;
  os << "\n[optimizer]\neta = " << format_double(o.eta)
     << "\ngrad_clip_norm = " << (o.grad_clip_norm ? format_double(*o.grad_clip_norm) : std::string("none"))
     << "\nsteps = " << o.steps << "\nbatch_prompts = " << o.batch_prompts << "\ngroup_size = " << o.group_size
     << "\nseed = " << o.seed << "\n";

  os << "\n[output]\ndir = " << cfg.output_dir << "\n";
  return os.str();
}

}  // namespace grlab
