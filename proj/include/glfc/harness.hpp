#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glfc/checkpoint.hpp"
#include "glfc/config.hpp"
#include "glfc/federation.hpp"

namespace glfc {

// Smallest gap GLFC must keep over finetune-fl on the desk profile, in
// accuracy points. The first full desk run measured about 23.
inline constexpr double kOrderingMarginPoints = 10.0;

struct MetricsRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string run_id;
  std::vector<TaskMetrics> tasks;
  std::vector<double> round_accuracy;
  std::vector<RoundMetrics> rounds;
  double average_accuracy = 0.0;  // running average after the last task
  double wall_seconds = 0.0;
};

// 64-bit FNV-1a of the canonical config text, as 16 hex digits.
inline std::string run_id(const ExperimentConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline MetricsRecord run_method(const ExperimentConfig& cfg, ExperimentResult* keep = nullptr) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res = run_experiment(cfg);
  MetricsRecord rec;
  rec.method = cfg.method;
  rec.seed = cfg.seed;
  rec.run_id = run_id(cfg);
  rec.tasks = res.tasks;
  rec.round_accuracy = res.round_accuracy;
  rec.rounds = res.rounds;
  rec.average_accuracy = res.tasks.empty() ? 0.0 : res.tasks.back().avg_accuracy;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (keep != nullptr) *keep = std::move(res);
  return rec;
}

struct SweepRow {
  std::size_t capacity = 0;
  std::vector<MetricsRecord> records;  // one per seed
  double mean_average_accuracy = 0.0;
};

// GLFC at each capacity, once per configured seed.
inline std::vector<SweepRow> memory_sweep(const ExperimentConfig& cfg, std::span<const std::size_t> capacities) {
  if (capacities.empty()) throw ConfigError("memory sweep needs at least one capacity");
  std::vector<SweepRow> rows;
  for (std::size_t cap : capacities) {
    SweepRow row{cap, {}, 0.0};
    for (std::uint64_t seed : cfg.seeds) {
      ExperimentConfig c = cfg;
      c.method = "glfc";
      c.memory_capacity = cap;
      c.seed = seed;
      row.records.push_back(run_method(c));
      row.mean_average_accuracy += row.records.back().average_accuracy;
    }
    row.mean_average_accuracy /= static_cast<double>(row.records.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report files

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline constexpr const char* kMetricsHeader = "task,round,seen_classes,top1_accuracy,avg_accuracy";

inline std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& rec : records) {
    for (const auto& t : rec.tasks) {
      out << t.task << ',' << t.round << ',' << t.seen_classes << ',' << format_double(t.top1_accuracy) << ','
          << format_double(t.avg_accuracy) << '\n';
    }
  }
  return out.str();
}

inline std::vector<TaskMetrics> parse_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw InvalidArgument("metrics csv: bad header");
  std::vector<TaskMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& cell : f) {
      if (!std::getline(ss, cell, ',')) throw InvalidArgument("metrics csv: short row '" + line + "'");
    }
    TaskMetrics t;
    t.task = std::stoul(f[0]);
    t.round = std::stoul(f[1]);
    t.seen_classes = std::stoul(f[2]);
    std::from_chars(f[3].data(), f[3].data() + f[3].size(), t.top1_accuracy);
    std::from_chars(f[4].data(), f[4].data() + f[4].size(), t.avg_accuracy);
    rows.push_back(t);
  }
  return rows;
}

// Per-round accuracy curve for external plotting.
inline std::string curves_csv(std::span<const MetricsRecord> records) {
  std::ostringstream out;
  out << "method,seed,round,task,top1_accuracy,transitions,packets\n";
  for (const auto& rec : records) {
    for (std::size_t i = 0; i < rec.rounds.size(); ++i) {
      const auto& r = rec.rounds[i];
      out << rec.method << ',' << rec.seed << ',' << r.round << ',' << r.task << ','
          << format_double(rec.round_accuracy.at(i)) << ',' << r.transitions.size() << ',' << r.packets << '\n';
    }
  }
  return out.str();
}

inline json manifest(const ExperimentConfig& cfg, std::span<const MetricsRecord> records) {
  json runs = json::array();
  for (const auto& r : records) {
    runs.push_back({{"method", r.method},
                    {"seed", r.seed},
                    {"run_id", r.run_id},
                    {"average_accuracy", r.average_accuracy},
                    {"final_accuracy", r.tasks.empty() ? 0.0 : r.tasks.back().top1_accuracy},
                    {"wall_seconds", r.wall_seconds}});
  }
  const MethodFlags f = cfg.flags();
  return {{"format", "glfc-manifest/1"},
          {"run_id", run_id(cfg)},
          {"method", cfg.method},
          {"switches", {{"gradient_compensation", f.compensate},
                        {"distillation", to_string(f.distillation)},
                        {"proxy", f.proxy},
                        {"memory", f.memory}}},
          {"seed", cfg.seed},
          {"seeds", cfg.seeds},
          {"config", to_json(cfg)},
          {"provenance", provenance(cfg)},
          {"acceptance", {{"ordering_margin_points", kOrderingMarginPoints}}},
          {"runs", std::move(runs)}};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
  out << text;
}

// Writes metrics.csv, curves.csv and manifest.json into `dir`.
inline void emit_report(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                        std::span<const MetricsRecord> records) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "metrics.csv", metrics_csv(records));
  write_text_file(dir / "curves.csv", curves_csv(records));
  write_text_file(dir / "manifest.json", manifest(cfg, records).dump(2) + "\n");
}

// Final global model (JSON and binary), client memories and the proxy's
// evaluation set.
inline void emit_checkpoints(const std::filesystem::path& dir, const ExperimentResult& res) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "global_model.json", to_json(res.world.global.model).dump() + "\n");
  {
    std::ofstream out(dir / "global_model.bin", std::ios::binary);
    write_model_binary(out, res.world.global.model);
  }
  json memories = json::object();
  for (const auto& [id, c] : res.world.clients) memories[std::to_string(id)] = to_json(c.memory);
  write_text_file(dir / "memories.json", memories.dump(2) + "\n");
  write_text_file(dir / "proxy_eval_set.json", eval_set_to_json(res.world.proxy).dump() + "\n");
}

inline void emit_sweep(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                       std::span<const SweepRow> rows) {
  std::filesystem::create_directories(dir);
  std::ostringstream table, per_seed;
  table << "capacity,mean_avg_accuracy,seeds\n";
  per_seed << "capacity,seed,avg_accuracy\n";
  std::vector<MetricsRecord> all;
  for (const auto& row : rows) {
    table << row.capacity << ',' << format_double(row.mean_average_accuracy) << ',' << row.records.size() << '\n';
    for (const auto& r : row.records) {
      per_seed << row.capacity << ',' << r.seed << ',' << format_double(r.average_accuracy) << '\n';
      all.push_back(r);
    }
  }
  write_text_file(dir / "sweep.csv", table.str());
  write_text_file(dir / "sweep_runs.csv", per_seed.str());
  json m = manifest(cfg, all);
  json caps = json::array();
  for (const auto& row : rows) caps.push_back(row.capacity);
  m["capacities"] = std::move(caps);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace glfc
