// grlab command-line driver: run, check, sweep, bandit-demo.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "grlab/grlab.hpp"

namespace fs = std::filesystem;
using namespace grlab;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kNumericalAbort = 3, kRuntimeError = 4 };

constexpr const char* kBanditDemoConfig = R"([task]
kind = bandit
arm_rewards = [0, 0.8, 1]

[policy]
init = probs
init_probs = [0.3, 0.6, 0.1]

[algorithm]
kind = REINFORCE

[schedule]
offline = true

[optimizer]
eta = 0.5
steps = 2000
group_size = 1024
seed = 0

[output]
dir = runs/bandit-demo
)";

fs::path resolve_output(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("GRLAB_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p;
}

struct RunSummary {
  int exit_code = kOk;
  RunResult result;
};

RunSummary execute_run(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "config.ini", std::ios::trunc);
    os << to_ini(cfg);
  }
  const TabularPolicy init = initial_policy(cfg);
  MetricsWriter metrics(dir / "metrics.jsonl");
  const int every = std::max(1, cfg.optimizer.steps / 10);
  RunSummary out{kOk, run(cfg.task, init, cfg.algorithm, cfg.schedule, cfg.optimizer, [&](const MetricsRecord& m) {
                        metrics.write(m);
                        if (log && (m.step % every == 0 || m.step + 1 == static_cast<std::uint64_t>(cfg.optimizer.steps))) {
                          *log << "step " << m.step << "  mean_reward " << m.mean_reward << "  kl_to_init "
                               << m.kl_to_init << "  clip_fraction " << m.clip_fraction << "\n";
                        }
                      })};
  metrics.flush();
  save_checkpoint(dir / "checkpoint.bin",
                  {out.result.final_policy, cfg.optimizer.seed, out.result.metrics.size()});

  nlohmann::ordered_json manifest;
  manifest["artifact"] = kArtifactName;
  manifest["version"] = kArtifactVersion;
  manifest["seed"] = cfg.optimizer.seed;
  manifest["algorithm"] = to_string(cfg.algorithm.kind);
  manifest["loss_norm"] = cfg.algorithm.loss_norm == LossNorm::per_group_k ? "per_group_k" : "batch_token_mean";
  manifest["steps_requested"] = cfg.optimizer.steps;
  manifest["steps_completed"] = out.result.metrics.size();
  manifest["aborted"] = out.result.aborted;
  manifest["diagnostic"] = out.result.diagnostic;
  manifest["final_expected_reward"] = expected_reward(cfg.task, out.result.final_policy);
  manifest["files"] = {{"config", "config.ini"}, {"metrics", "metrics.jsonl"}, {"checkpoint", "checkpoint.bin"}};
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << "\n";

  if (out.result.aborted) {
    std::cerr << "run aborted: " << out.result.diagnostic << "\n";
    out.exit_code = kNumericalAbort;
  }
  return out;
}

// "a.b,a.c=0.2,0.2|0.6,2.0": parameter names, then '|'-separated value tuples.
struct GridAxis {
  std::vector<std::string> keys;
  std::vector<std::vector<std::string>> values;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) return out;
    start = pos + 1;
  }
}

GridAxis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("grid axis '" + spec + "' must look like key[,key]=v[,v]|...");
  GridAxis axis;
  axis.keys = split(spec.substr(0, eq), ',');
  for (const auto& tuple : split(spec.substr(eq + 1), '|')) {
    auto vals = split(tuple, ',');
    if (vals.size() != axis.keys.size()) {
      throw ConfigError("grid axis '" + spec + "': tuple '" + tuple + "' does not match " +
                        std::to_string(axis.keys.size()) + " key(s)");
    }
    axis.values.push_back(std::move(vals));
  }
  return axis;
}

struct Cell {
  std::vector<std::pair<std::string, std::string>> assignments;
  ExperimentConfig config;
};

int report_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumericalAbort;
  return kRuntimeError;
}

std::string fmt(double v) { return grlab::detail::format_double(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grlab: group-relative policy-gradient laboratory on exactly solvable tasks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> grid;
  int workers = 1;
  std::string suite = "all";

  auto* run_cmd = app.add_subcommand("run", "train one configuration");
  run_cmd->add_option("--config", config_path, "INI configuration file")->required();
  run_cmd->add_option("--set", sets, "override, section.key=value (repeatable)");
  run_cmd->add_option("--seed", seed, "override optimizer.seed");
  run_cmd->add_option("--out", out_dir, "run directory (overrides output.dir)");

  auto* check_cmd = app.add_subcommand("check", "run invariant batteries");
  check_cmd->add_option("suite", suite, "gradients | masks | identities | scheduler | oracle-consistency | all");
  check_cmd->add_option("--seed", seed, "seed for randomized instances");
  check_cmd->add_option("--out", out_dir, "also write the report as TSV to this file");

  auto* sweep_cmd = app.add_subcommand("sweep", "run the Cartesian product of parameter grids");
  sweep_cmd->add_option("--config", config_path, "base INI configuration")->required();
  sweep_cmd->add_option("--set", sets, "override applied to every cell (repeatable)");
  sweep_cmd->add_option("--grid", grid, "axis: key[,key]=v[,v]|v[,v]... (repeatable)");
  sweep_cmd->add_option("--seed", seed, "override optimizer.seed");
  sweep_cmd->add_option("--out", out_dir, "sweep directory (overrides output.dir)");
  sweep_cmd->add_option("--workers", workers, "parallel cells")->check(CLI::PositiveNumber);

  auto* demo_cmd = app.add_subcommand("bandit-demo", "3-arm bandit trained offline from a fixed behavior policy");
  demo_cmd->add_option("--set", sets, "override, section.key=value (repeatable)");
  demo_cmd->add_option("--seed", seed, "override optimizer.seed");
  demo_cmd->add_option("--out", out_dir, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (seed) sets.push_back("optimizer.seed=" + std::to_string(*seed));

    if (*check_cmd) {
      const auto results = checks::run_suite(suite, seed.value_or(1));
      std::size_t failed = 0;
      std::ofstream tsv;
      if (!out_dir.empty()) {
        tsv.open(resolve_output(out_dir));
        tsv << "suite\tcheck\tmeasured\ttolerance\tresult\n";
      }
      for (const auto& r : results) {
        failed += r.passed ? 0 : 1;
        std::printf("%-4s %-20s %-62s measured=%-12.4g tolerance=%.3g\n", r.passed ? "PASS" : "FAIL",
                    r.suite.c_str(), r.name.c_str(), r.measured, r.tolerance);
        if (tsv.is_open()) {
          tsv << r.suite << '\t' << r.name << '\t' << fmt(r.measured) << '\t' << fmt(r.tolerance) << '\t'
              << (r.passed ? "pass" : "fail") << '\n';
        }
      }
      std::printf("%zu checks, %zu passed, %zu failed\n", results.size(), results.size() - failed, failed);
      return failed == 0 ? kOk : kCheckFailed;
    }

    if (*run_cmd || *demo_cmd) {
      KeyValues kv = *run_cmd ? load_ini(config_path) : parse_ini(kBanditDemoConfig);
      apply_overrides(kv, sets);
      ExperimentConfig cfg = parse_experiment(kv);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      const fs::path dir = resolve_output(cfg.output_dir);
      auto summary = execute_run(cfg, dir, &std::cout);
      if (*demo_cmd) {
        const auto& p = summary.result.final_policy;
        const auto probs = p.probabilities(p.root(0).index());
        std::printf("final arm probabilities: [%.6f, %.6f, %.6f]\n", probs[0], probs[1], probs[2]);
      }
      std::cout << "wrote " << dir.string() << "\n";
      return summary.exit_code;
    }

    // sweep
    KeyValues base = load_ini(config_path);
    apply_overrides(base, sets);
    std::vector<GridAxis> axes;
    for (const auto& g : grid) axes.push_back(parse_axis(g));
    std::vector<std::vector<std::pair<std::string, std::string>>> products{{}};
    for (const auto& axis : axes) {
      std::vector<std::vector<std::pair<std::string, std::string>>> next;
      for (const auto& partial : products) {
        for (const auto& tuple : axis.values) {
          auto extended = partial;
          for (std::size_t i = 0; i < axis.keys.size(); ++i) extended.emplace_back(axis.keys[i], tuple[i]);
          next.push_back(std::move(extended));
        }
      }
      products = std::move(next);
    }
    std::vector<Cell> cells;
    for (const auto& assignments : products) {
      KeyValues kv = base;
      for (const auto& [k, v] : assignments) {
        if (k.find('.') == std::string::npos) throw ConfigError("grid parameter '" + k + "' is not section.key");
        kv[k] = v;
      }
      cells.push_back({assignments, parse_experiment(kv)});
    }
    const fs::path root = resolve_output(out_dir.empty() ? cells.front().config.output_dir : out_dir);
    fs::create_directories(root);

    std::vector<std::optional<RunSummary>> summaries(cells.size());
    std::vector<int> failed(cells.size(), kOk);
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        char name[32];
        std::snprintf(name, sizeof name, "cell_%03zu", i);
        try {
          summaries[i] = execute_run(cells[i].config, root / name, nullptr);
        } catch (const std::exception& e) {
          std::lock_guard lock(log_mutex);
          failed[i] = report_error(e);
          continue;
        }
        std::lock_guard lock(log_mutex);
        std::cout << name << " done (" << summaries[i]->result.metrics.size() << " steps)\n";
      }
    };
    std::vector<std::thread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), cells.size());
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ofstream tsv(root / "summary.tsv", std::ios::trunc);
    tsv << "cell";
    for (const auto& [k, v] : cells.front().assignments) tsv << '\t' << k;
    tsv << "\tsteps\taborted\tfinal_mean_reward\tfinal_kl_to_init\n";
    int rc = kOk;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!summaries[i]) {
        rc = failed[i];
        continue;
      }
      const auto& m = summaries[i]->result.metrics;
      char name[32];
      std::snprintf(name, sizeof name, "cell_%03zu", i);
      tsv << name;
      for (const auto& [k, v] : cells[i].assignments) tsv << '\t' << v;
      tsv << '\t' << m.size() << '\t' << (summaries[i]->result.aborted ? "true" : "false") << '\t'
          << (m.empty() ? std::string("nan") : fmt(m.back().mean_reward)) << '\t'
          << (m.empty() ? std::string("nan") : fmt(m.back().kl_to_init)) << '\n';
      if (summaries[i]->exit_code != kOk) rc = summaries[i]->exit_code;
    }
    std::cout << "wrote " << (root / "summary.tsv").string() << " (" << cells.size() << " cells)\n";
    return rc;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}
