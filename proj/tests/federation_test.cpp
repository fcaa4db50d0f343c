#include <gtest/gtest.h>

#include <set>

#include "glfc/glfc.hpp"

using namespace glfc;

namespace {

ParameterVector vec(const Layout& l, std::vector<double> v) { return {l, std::move(v)}; }

const Layout kLayout{{0, 0, {2, 1}, 1}};

}  // namespace

TEST(Selection, PicksSortedDistinctRegisteredIds) {
  const std::vector<std::size_t> reg{3, 9, 4, 12, 7, 1};
  const auto a = select_clients(reg, 4, 11);
  EXPECT_EQ(a.selected.size(), 4u);
  EXPECT_TRUE(std::is_sorted(a.selected.begin(), a.selected.end()));
  EXPECT_EQ(std::set<std::size_t>(a.selected.begin(), a.selected.end()).size(), 4u);
  for (auto id : a.selected) EXPECT_NE(std::find(reg.begin(), reg.end(), id), reg.end());
  EXPECT_EQ(select_clients(reg, 4, 11).selected, a.selected);
  EXPECT_THROW(select_clients(reg, 7, 1), InvalidArgument);
}

TEST(Categories, RoundedShareBecomesOldOnly) {
  const std::vector<std::size_t> existing{0, 1, 2, 3, 4, 5, 6};
  const std::vector<std::size_t> fresh{7, 8};
  const auto cats = assign_categories(existing, {}, true, 0.3, 5, fresh);
  std::size_t old_only = 0;
  for (auto id : existing) old_only += cats.at(id) == ClientCategory::old_only;
  EXPECT_EQ(old_only, 2u);
  EXPECT_EQ(cats.at(7), ClientCategory::newcomer);
  EXPECT_EQ(cats.at(8), ClientCategory::newcomer);
  EXPECT_EQ(assign_categories(existing, cats, false, 0.3, 99), cats);
  EXPECT_THROW(assign_categories(existing, {}, true, 1.5, 1), InvalidArgument);
}

TEST(FedAvg, UniformAndWeightedMeans) {
  const std::vector<ParameterVector> ps{vec(kLayout, {1, 2, 3}), vec(kLayout, {3, 6, -3}),
                                        vec(kLayout, {2, 1, 0})};
  EXPECT_EQ(fedavg_aggregate(ps).values(), (std::vector<double>{2, 3, 0}));
  const std::vector<double> w{1, 3, 0};
  const auto got = fedavg_aggregate(ps, w).values();
  const std::vector<double> want{(1 + 9) / 4.0, (2 + 18) / 4.0, (3 - 9) / 4.0};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);
}

TEST(FedAvg, RejectsBadInputs) {
  EXPECT_THROW(fedavg_aggregate(std::vector<ParameterVector>{}), InvalidArgument);
  const Layout other{{0, 0, {3, 1}, 0}};
  const std::vector<ParameterVector> mixed{vec(kLayout, {1, 2, 3}), vec(other, {1, 2, 3})};
  EXPECT_THROW(fedavg_aggregate(mixed), InvalidArgument);
  const std::vector<ParameterVector> two{vec(kLayout, {1, 2, 3}), vec(kLayout, {1, 2, 3})};
  EXPECT_THROW(fedavg_aggregate(two, std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(fedavg_aggregate(two, std::vector<double>{1.0, -1.0}), InvalidArgument);
  EXPECT_THROW(fedavg_aggregate(two, std::vector<double>{0.0, 0.0}), InvalidArgument);
}

TEST(Simulation, TaskStartHandsOverDataAndGrowsTheHead) {
  ExperimentConfig cfg = desk_profile();
  cfg.schedule.old_only_fraction = 0.5;
  Simulation sim(cfg);
  sim.begin_task(1);
  EXPECT_EQ(sim.world().global.model.output_width(), 2u);
  EXPECT_EQ(sim.world().clients.size(), cfg.schedule.initial_clients);
  const World before = sim.world();
  sim.begin_task(2);
  const World& w = sim.world();
  EXPECT_EQ(w.global.model.output_width(), 4u);
  EXPECT_EQ(truncate_head(w.global.model, 2), before.global.model);
  EXPECT_EQ(w.clients.size(), cfg.schedule.initial_clients + cfg.schedule.new_clients_per_task);
  std::size_t old_only = 0;
  for (const auto& [id, c] : w.clients) {
    if (before.clients.contains(id)) {
      if (c.category == ClientCategory::old_only) {
        ++old_only;
        EXPECT_EQ(c.shard.samples, before.clients.at(id).shard.samples);
      } else {
        EXPECT_EQ(c.category, ClientCategory::both);
        ASSERT_EQ(c.unabsorbed.size(), 1u);
        for (auto k : c.shard.classes) EXPECT_GE(k, 2u);
      }
    } else {
      EXPECT_EQ(c.category, ClientCategory::newcomer);
      EXPECT_EQ(c.task, 2u);
      ASSERT_TRUE(c.old_model.has_value());
      EXPECT_EQ(c.old_model->output_width(), 2u);
    }
  }
  EXPECT_EQ(old_only, 3u);
  EXPECT_THROW(sim.begin_task(2), InvalidArgument);
}

TEST(Simulation, RoundIsIndependentOfProcessingOrder) {
  Simulation sim(desk_profile());
  sim.begin_task(1);
  sim.step();
  sim.begin_task(2);
  const World w = sim.world();
  const RoundOutput a = run_round(w, sim.context());
  auto order = a.metrics.selected;
  std::reverse(order.begin(), order.end());
  const RoundOutput b = run_round(w, sim.context(), order);
  EXPECT_EQ(a.world.global.model, b.world.global.model);
  EXPECT_EQ(a.world.proxy.eval_set, b.world.proxy.eval_set);
  EXPECT_EQ(a.metrics.transitions, b.metrics.transitions);
  EXPECT_EQ(a.world.global.round, w.global.round + 1);
  order.pop_back();
  EXPECT_THROW(run_round(w, sim.context(), order), InvalidArgument);
}

TEST(Simulation, AccuracyCountsSeenClassesOnly) {
  const ModelInstance m{ModelSpec(Shape{2}, {LayerSpec::dense(2, 3)}),
                        ParameterVector(ModelSpec(Shape{2}, {LayerSpec::dense(2, 3)}).layout(),
                                        {1, 0, 0, 1, 0, 0, 0, 0, 0.5})};
  const std::vector<LabeledSample> test{{{1, 0}, 0, 0}, {{0, 1}, 1, 1}, {{0, 1}, 0, 2}, {{0, 0}, 2, 3}};
  EXPECT_DOUBLE_EQ(seen_class_accuracy(m, test, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(seen_class_accuracy(m, test, 3), 3.0 / 4.0);

  Dataset d;
  d.train = {{{0}, 2, 0}, {{0}, 0, 1}};
  const Dataset r = relabel(d, {2, 0, 1});
  EXPECT_EQ(r.train[0].label, 0u);
  EXPECT_EQ(r.train[1].label, 1u);
}

TEST(Experiment, TaskMetricsAreRunningMeans) {
  const ExperimentResult res = run_experiment(desk_profile());
  ASSERT_EQ(res.tasks.size(), 3u);
  EXPECT_EQ(res.rounds.size(), 6u);
  double sum = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(res.tasks[t].seen_classes, 2 * (t + 1));
    EXPECT_EQ(res.tasks[t].round, 2 * (t + 1));
    EXPECT_EQ(res.tasks[t].top1_accuracy, res.round_accuracy[2 * t + 1]);
    sum += res.tasks[t].top1_accuracy;
    EXPECT_DOUBLE_EQ(res.tasks[t].avg_accuracy, sum / static_cast<double>(t + 1));
  }
  EXPECT_GE(res.world.proxy.task, 2u);
  EXPECT_FALSE(res.world.proxy.eval_set.empty());
}

TEST(Experiment, BaselinesSendNoPackets) {
  ExperimentConfig cfg = desk_profile();
  for (const char* m : {"finetune-fl", "icarl-fl", "glfc-w/oPRS"}) {
    cfg.method = m;
    const ExperimentResult res = run_experiment(cfg);
    for (const auto& r : res.rounds) EXPECT_EQ(r.packets, 0u) << m;
    EXPECT_EQ(res.world.proxy.task, 1u) << m;
  }
  cfg.method = "finetune-fl";
  for (const auto& [id, c] : run_experiment(cfg).world.clients) EXPECT_TRUE(c.memory.empty());
}

TEST(Simulation, ClassSubsetsStayFixedUnlessRedrawIsRequested) {
  for (bool redraw : {false, true}) {
    ExperimentConfig cfg = desk_profile();
    cfg.dataset.blobs.num_classes = 9;
    cfg.schedule.rounds_per_task = 4;
    cfg.schedule.class_fraction = 0.4;
    cfg.schedule.redraw_class_subsets_every_round = redraw;
    Simulation sim(cfg);
    sim.begin_task(1);
    std::map<std::size_t, std::vector<std::size_t>> first;
    for (const auto& [id, c] : sim.world().clients) first[id] = c.shard.classes;
    bool changed = false;
    for (int r = 0; r < 4; ++r) {
      sim.step();
      for (const auto& [id, c] : sim.world().clients) {
        changed = changed || c.shard.classes != first[id];
        for (auto k : c.shard.classes) EXPECT_LT(k, 3u);
        EXPECT_EQ(c.shard.classes.size(), 2u);
      }
    }
    EXPECT_EQ(changed, redraw);
  }
}
