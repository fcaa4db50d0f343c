#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "glfc/glfc.hpp"

using namespace glfc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("glfc-test-" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Method, SwitchesForEveryVariant) {
  EXPECT_EQ(parse_method("glfc"), (MethodFlags{"glfc", true, Distillation::relation, true, true}));
  EXPECT_EQ(parse_method("glfc-w/oCGC"), (MethodFlags{"glfc-w/oCGC", false, Distillation::relation, true, true}));
  EXPECT_EQ(parse_method("glfc-w/oCRD"), (MethodFlags{"glfc-w/oCRD", true, Distillation::icarl, true, true}));
  EXPECT_EQ(parse_method("glfc-w/oPRS"), (MethodFlags{"glfc-w/oPRS", true, Distillation::relation, false, true}));
  EXPECT_EQ(parse_method("glfc-w/oCGC-w/oPRS"),
            (MethodFlags{"glfc-w/oCGC-w/oPRS", false, Distillation::relation, false, true}));
  EXPECT_EQ(parse_method("icarl-fl"), (MethodFlags{"icarl-fl", false, Distillation::icarl, false, true}));
  EXPECT_EQ(parse_method("finetune-fl"), (MethodFlags{"finetune-fl", false, Distillation::none, false, false}));
  for (const char* bad : {"", "GLFC", "glfc-w/oCGC-w/oCGC", "glfc-", "fedavg"}) {
    EXPECT_THROW(parse_method(bad), ConfigError) << bad;
  }
}

TEST(Config, JsonRoundTripAndPartialOverrides) {
  ExperimentConfig cfg = desk_profile();
  cfg.loss.distillation_weight_override = 0.25;
  cfg.seeds = {1, 2};
  EXPECT_EQ(config_from_json(json::parse(to_json(cfg).dump())), cfg);

  const ExperimentConfig partial = config_from_json(json{{"memory_capacity", 8}, {"schedule", {{"tasks", 2}}}});
  ExperimentConfig want;
  want.memory_capacity = 8;
  want.schedule.tasks = 2;
  EXPECT_EQ(partial, want);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json{{"memroy_capacity", 8}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"schedule", {{"taks", 2}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"memory_capacity", "lots"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"method", "glfc-w/oXYZ"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"schedule", {{"clients_per_round", 99}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"loss", {{"entropy_threshold", 0}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"seeds", json::array()}}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ProvenanceMarksOverrides) {
  const json p = provenance(desk_profile());
  bool saw_override = false;
  for (const auto& e : p) {
    EXPECT_EQ(e["source"], e["reference"] == e["used"] ? "reference" : "desk-scale override");
    if (e["key"] == "loss.entropy_threshold") {
      EXPECT_EQ(e["reference"], 1.2);
      EXPECT_EQ(e["source"], "desk-scale override");
      saw_override = true;
    }
  }
  EXPECT_TRUE(saw_override);
}

TEST(RunId, StableAndSensitiveToConfig) {
  ExperimentConfig a = desk_profile();
  const std::string id = run_id(a);
  EXPECT_EQ(id.size(), 16u);
  EXPECT_EQ(run_id(desk_profile()), id);
  a.seed += 1;
  EXPECT_NE(run_id(a), id);
}

TEST(MetricsCsv, FormatRoundTripsDoubles) {
  MetricsRecord r;
  r.tasks = {{1, 2, 2, 1.0, 1.0}, {2, 4, 4, 0.1 + 0.2, 2.0 / 3.0}};
  const std::string text = metrics_csv(std::vector<MetricsRecord>{r});
  EXPECT_EQ(text.substr(0, text.find('\n')), "task,round,seen_classes,top1_accuracy,avg_accuracy");
  std::istringstream in(text);
  const auto back = parse_metrics_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].top1_accuracy, 0.1 + 0.2);
  EXPECT_EQ(back[1].avg_accuracy, 2.0 / 3.0);
  EXPECT_EQ(back[1].seen_classes, 4u);
  std::istringstream bad("task,round\n1,2\n");
  EXPECT_THROW(parse_metrics_csv(bad), InvalidArgument);
}

TEST(Report, WritesMetricsManifestAndCheckpoints) {
  const fs::path dir = scratch("report");
  ExperimentConfig cfg = desk_profile();
  ExperimentResult res;
  const std::vector<MetricsRecord> recs{run_method(cfg, &res)};
  emit_report(dir, cfg, recs);
  emit_checkpoints(dir, res);
  for (const char* f : {"metrics.csv", "curves.csv", "manifest.json", "global_model.json", "global_model.bin",
                        "memories.json", "proxy_eval_set.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const json m = read_json_file((dir / "manifest.json").string());
  EXPECT_EQ(m["run_id"], run_id(cfg));
  EXPECT_EQ(m["seed"], cfg.seed);
  EXPECT_EQ(config_from_json(m["config"]), cfg);
  EXPECT_TRUE(m["provenance"].is_array());
  EXPECT_EQ(m["runs"][0]["average_accuracy"].get<double>(), recs[0].average_accuracy);

  const ModelInstance from_json = model_from_json(read_json_file((dir / "global_model.json").string()));
  std::ifstream bin(dir / "global_model.bin", std::ios::binary);
  EXPECT_EQ(read_model_binary(bin), res.world.global.model);
  EXPECT_EQ(from_json, res.world.global.model);

  const json mem = read_json_file((dir / "memories.json").string());
  for (const auto& [id, c] : res.world.clients) {
    EXPECT_EQ(memory_from_json(mem.at(std::to_string(id)), res.data.train), c.memory);
  }
  EXPECT_EQ(eval_set_from_json(read_json_file((dir / "proxy_eval_set.json").string())), res.world.proxy.eval_set);
  fs::remove_all(dir);
}

TEST(Report, RepeatedRunsAreByteIdentical) {
  const fs::path a = scratch("det-a"), b = scratch("det-b");
  const ExperimentConfig cfg = desk_profile();
  emit_report(a, cfg, std::vector<MetricsRecord>{run_method(cfg)});
  emit_report(b, cfg, std::vector<MetricsRecord>{run_method(cfg)});
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "curves.csv"), slurp(b / "curves.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Sweep, OneRowPerCapacityAndSeed) {
  ExperimentConfig cfg = desk_profile();
  cfg.seeds = {5, 6};
  const std::vector<std::size_t> caps{4, 12};
  const auto rows = memory_sweep(cfg, caps);
  ASSERT_EQ(rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rows[i].capacity, caps[i]);
    ASSERT_EQ(rows[i].records.size(), 2u);
    EXPECT_DOUBLE_EQ(rows[i].mean_average_accuracy,
                     (rows[i].records[0].average_accuracy + rows[i].records[1].average_accuracy) / 2);
  }
  EXPECT_THROW(memory_sweep(cfg, std::vector<std::size_t>{}), ConfigError);
  const fs::path dir = scratch("sweep");
  emit_sweep(dir, cfg, rows);
  EXPECT_EQ(slurp(dir / "sweep.csv").substr(0, 34), "capacity,mean_avg_accuracy,seeds\n4");
  fs::remove_all(dir);
}
