#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glfc/glfc.hpp"
#include "glfc/selftest.hpp"

namespace {

using glfc::json;

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const glfc::ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const glfc::InvalidArgument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const glfc::NumericError*>(&e)) return "numeric_error";
  if (dynamic_cast<const glfc::RecoveryError*>(&e)) return "recovery_error";
  return "error";
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"status", "error"}, {"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

std::vector<std::size_t> parse_capacities(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t pos = 0;
    long long v = -1;
    try {
      v = std::stoll(cell, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != cell.size() || cell.empty() || v < 1) throw glfc::ConfigError("bad capacity '" + cell + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw glfc::ConfigError("no capacities given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated class-incremental learning simulator"};
  app.require_subcommand(1);

  std::string config_path, method, out_dir, capacities;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "train one method on one seed and write metrics, manifest and checkpoints");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--method", method, "glfc, glfc-w/oCGC, glfc-w/oCRD, glfc-w/oPRS, icarl-fl, finetune-fl");
  auto* seed_opt = run->add_option("--seed", seed, "overrides the config seed");
  run->add_option("--out", out_dir, "output directory (default runs/<run id>)");

  auto* sweep = app.add_subcommand("sweep-memory", "GLFC over memory capacities, every configured seed");
  sweep->add_option("--config", config_path, "experiment config (JSON)")->required();
  sweep->add_option("--capacities", capacities, "comma-separated capacities, e.g. 8,16,32")->required();
  sweep->add_option("--out", out_dir, "output directory (default runs/sweep-<run id>)");

  auto* selftest = app.add_subcommand("selftest", "run the acceptance checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (run->parsed()) {
      glfc::ExperimentConfig cfg = glfc::load_config(config_path);
      if (!method.empty()) cfg.method = method;
      if (seed_opt->count() > 0) cfg.seed = seed;
      glfc::validate(cfg);
      const std::string dir = out_dir.empty() ? "runs/" + glfc::run_id(cfg) : out_dir;
      glfc::ExperimentResult res;
      const std::vector<glfc::MetricsRecord> recs{glfc::run_method(cfg, &res)};
      glfc::emit_report(dir, cfg, recs);
      glfc::emit_checkpoints(dir, res);
      std::cout << json{{"status", "ok"},
                        {"run_id", recs[0].run_id},
                        {"method", cfg.method},
                        {"seed", cfg.seed},
                        {"average_accuracy", recs[0].average_accuracy},
                        {"out", dir}}
                       .dump()
                << '\n';
      return 0;
    }
    if (sweep->parsed()) {
      const glfc::ExperimentConfig cfg = glfc::load_config(config_path);
      glfc::validate(cfg);
      const auto caps = parse_capacities(capacities);
      const std::string dir = out_dir.empty() ? "runs/sweep-" + glfc::run_id(cfg) : out_dir;
      const auto rows = glfc::memory_sweep(cfg, caps);
      glfc::emit_sweep(dir, cfg, rows);
      json table = json::array();
      for (const auto& r : rows) table.push_back({{"capacity", r.capacity}, {"mean_average_accuracy", r.mean_average_accuracy}});
      std::cout << json{{"status", "ok"}, {"sweep", table}, {"out", dir}}.dump() << '\n';
      return 0;
    }
    if (selftest->parsed()) {
      bool all = true;
      for (const auto& r : glfc::selftest::run_all()) {
        std::cout << glfc::selftest::format_line(r) << '\n';
        all = all && r.passed;
      }
      return all ? 0 : 1;
    }
  } catch (const std::exception& e) {
    return fail(error_kind(e), e.what(), 1);
  }
  return 0;
}
