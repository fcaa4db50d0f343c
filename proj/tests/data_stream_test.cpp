#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "glfc/glfc.hpp"

using namespace glfc;

namespace {

std::vector<LabeledSample> random_class(Rng& rng, std::size_t label, std::size_t n, std::size_t dim,
                                        std::size_t first_index) {
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({draw_normal_vector(rng, dim), label, first_index + i});
  return out;
}

// Greedy mean matching written directly from the definition.
std::vector<std::size_t> naive_herding(const Matrix& e, std::size_t m) {
  const std::size_t n = e.rows(), f = e.cols();
  std::vector<double> mu(f);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) mu[c] += e(r, c) / static_cast<double>(n);
  std::vector<std::size_t> picked;
  for (std::size_t k = 1; k <= m; ++k) {
    double best = 1e300;
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < f; ++c) {
        double s = e(i, c);
        for (std::size_t j : picked) s += e(j, c);
        const double diff = mu[c] - s / static_cast<double>(k);
        d += diff * diff;
      }
      if (d < best - 1e-12) {
        best = d;
        arg = i;
      }
    }
    picked.push_back(arg);
  }
  return picked;
}

}  // namespace

TEST(Blobs, SizesAndLabels) {
  BlobConfig cfg;
  const Dataset ds = make_blobs(cfg);
  EXPECT_EQ(ds.train.size(), cfg.num_classes * cfg.train_per_class);
  EXPECT_EQ(ds.test.size(), cfg.num_classes * cfg.test_per_class);
  EXPECT_EQ(group_by_class(ds.train).size(), cfg.num_classes);
  EXPECT_EQ(make_blobs(cfg).train, ds.train);
}

TEST(Csv, ParsesRowsAndScales) {
  std::istringstream in("# comment\n2,1,2\n0,4,8\n");
  const auto s = read_samples_csv(in, 0.5);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].label, 2u);
  EXPECT_EQ(s[1].features, (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(s[1].index, 1u);
}

TEST(Csv, RejectsMalformedRows) {
  for (const char* bad : {"1,2\n1,2,3\n", "1,x\n", "-1,2\n", "1.5,2\n", "3\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_samples_csv(in), InvalidArgument) << bad;
  }
}

TEST(Schedule, SplitsClassOrderEvenly) {
  const auto order = make_class_order(7, 3);
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(make_class_order(7, 3), order);

  const TaskSchedule s = build_schedule(order, 3, 2, 4);
  ASSERT_EQ(s.task_count(), 3u);
  EXPECT_EQ(s.classes[0].size(), 3u);
  EXPECT_EQ(s.classes[1].size(), 2u);
  EXPECT_EQ(s.classes[2].size(), 2u);
  EXPECT_EQ(s.classes[0][0], order[0]);
  EXPECT_EQ(s.classes[2][1], order[6]);
  EXPECT_EQ(s.new_clients, (std::vector<std::size_t>{0, 4, 4}));
  EXPECT_EQ(s.seen_classes(2), 5u);
  EXPECT_EQ(s.total_rounds(), 6u);
  EXPECT_THROW(build_schedule(order, 8, 2, 0), InvalidArgument);
  EXPECT_THROW(build_schedule(order, 0, 2, 0), InvalidArgument);
}

TEST(Shard, TakesCeilFractionOfClassesAndAllTheirSamples) {
  EXPECT_EQ(shard_class_count(5, 0.6), 3u);
  EXPECT_EQ(shard_class_count(5, 0.01), 1u);
  EXPECT_EQ(shard_class_count(4, 0.5), 2u);
  const Dataset ds = make_blobs(BlobConfig{});
  const TaskSchedule s = build_schedule({0, 1, 2, 3, 4, 5}, 2, 1, 0);
  const IncrementalTask task = make_task(s, 2, ds.train);
  EXPECT_EQ(task.samples.size(), 3u * 60);
  const ClientShard a = shard_client(task, 0.6, 1, 4);
  EXPECT_EQ(a.classes.size(), 2u);
  EXPECT_EQ(a.samples.size(), 2u * 60);
  for (const auto& x : a.samples) EXPECT_TRUE(std::binary_search(a.classes.begin(), a.classes.end(), x.label));
  EXPECT_EQ(shard_client(task, 0.6, 1, 4).samples, a.samples);
  EXPECT_THROW(shard_client(task, 0.0, 1, 4), InvalidArgument);
  EXPECT_THROW(make_task(s, 3, ds.train), InvalidArgument);
}

TEST(Herding, MatchesNaiveGreedySelection) {
  Rng rng = make_rng(12);
  for (int t = 0; t < 20; ++t) {
    Matrix e(15, 4);
    for (auto& v : e.data()) v = draw_normal(rng);
    EXPECT_EQ(herding_order(e, 15), naive_herding(e, 15));
  }
  EXPECT_THROW(herding_order(Matrix(3, 2), 4), InvalidArgument);
}

TEST(Herding, FirstPickIsClosestToMean) {
  Matrix e = Matrix::from_rows({{0, 0}, {10, 0}, {4, 1}, {6, -1}});
  EXPECT_EQ(herding_order(e, 1).front(), 2u);
}

TEST(Memory, QuotaShrinksAsClassesArrive) {
  Rng rng = make_rng(21);
  const ModelInstance model = init_model(mlp_spec(3, {5}, 4), 2);
  ExemplarMemory mem;
  mem.capacity = 20;
  std::map<std::size_t, std::vector<LabeledSample>> first{{0, random_class(rng, 0, 12, 3, 0)},
                                                          {1, random_class(rng, 1, 6, 3, 100)}};
  mem = update_memory(mem, first, 2, model);
  EXPECT_EQ(mem.per_class.at(0).size(), 10u);
  EXPECT_EQ(mem.per_class.at(1).size(), 6u);
  const auto before = mem.per_class.at(0);

  std::map<std::size_t, std::vector<LabeledSample>> second{{2, random_class(rng, 2, 9, 3, 200)},
                                                           {3, random_class(rng, 3, 9, 3, 300)}};
  mem = update_memory(mem, second, 4, model);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(mem.per_class.at(c).size(), 5u) << c;
  EXPECT_TRUE(std::equal(mem.per_class.at(0).begin(), mem.per_class.at(0).end(), before.begin()));
  EXPECT_LE(mem.total(), mem.capacity);
}

TEST(Memory, ZeroOldClassesLeavesMemoryUntouched) {
  const ModelInstance model = init_model(mlp_spec(3, {5}, 4), 2);
  ExemplarMemory mem;
  mem.capacity = 8;
  Rng rng = make_rng(1);
  EXPECT_EQ(update_memory(mem, {{0, random_class(rng, 0, 3, 3, 0)}}, 0, model), mem);
}
