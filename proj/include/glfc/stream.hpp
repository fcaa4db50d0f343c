#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "glfc/autodiff.hpp"
#include "glfc/dataset.hpp"
#include "glfc/error.hpp"
#include "glfc/random.hpp"

namespace glfc {

struct TaskSchedule {
  std::vector<std::vector<std::size_t>> classes;  // per task, in class-order order
  std::vector<std::size_t> rounds;                // global rounds per task
  std::vector<std::size_t> new_clients;           // clients joining at each task start

  std::size_t task_count() const noexcept { return classes.size(); }
  std::size_t total_rounds() const {
    return std::accumulate(rounds.begin(), rounds.end(), std::size_t{0});
  }
  // Classes of tasks 1..t (1-based t).
  std::size_t seen_classes(std::size_t t) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < t && i < classes.size(); ++i) n += classes[i].size();
    return n;
  }
};

// Seeded permutation of 0..n-1 used as the class order.
inline std::vector<std::size_t> make_class_order(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xc1a55});
  return random_permutation(n, rng);
}

// Splits `class_order` into `tasks` contiguous groups as evenly as possible;
// the first (n mod T) tasks take one extra class.
inline TaskSchedule build_schedule(const std::vector<std::size_t>& class_order, std::size_t tasks,
                                   std::size_t rounds_per_task, std::size_t new_clients_per_task) {
  const std::size_t n = class_order.size();
  if (tasks < 1 || tasks > n) {
    throw InvalidArgument("invalid schedule: " + std::to_string(tasks) + " tasks for " +
                          std::to_string(n) + " classes");
  }
  if (rounds_per_task < 1) throw InvalidArgument("invalid schedule: rounds per task must be >= 1");
  TaskSchedule s;
  const std::size_t base = n / tasks, extra = n % tasks;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::size_t len = base + (t < extra ? 1 : 0);
    s.classes.emplace_back(class_order.begin() + pos, class_order.begin() + pos + len);
    pos += len;
    s.rounds.push_back(rounds_per_task);
    s.new_clients.push_back(t == 0 ? 0 : new_clients_per_task);
  }
  return s;
}

struct IncrementalTask {
  std::size_t index = 1;  // 1-based
  std::vector<std::size_t> classes;
  std::vector<LabeledSample> samples;
};

inline IncrementalTask make_task(const TaskSchedule& schedule, std::size_t t,
                                 std::span<const LabeledSample> pool) {
  if (t < 1 || t > schedule.task_count()) throw InvalidArgument("task index out of range");
  IncrementalTask task{t, schedule.classes[t - 1], {}};
  for (const auto& s : pool) {
    if (std::find(task.classes.begin(), task.classes.end(), s.label) != task.classes.end()) {
      task.samples.push_back(s);
    }
  }
  return task;
}

struct ClientShard {
  std::size_t client_id = 0;
  std::size_t task_index = 0;
  std::vector<std::size_t> classes;  // sorted
  std::vector<LabeledSample> samples;

  bool empty() const noexcept { return samples.empty(); }
};

inline std::size_t shard_class_count(std::size_t task_classes, double fraction) {
  const double raw = std::ceil(fraction * static_cast<double>(task_classes) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(raw), 1, task_classes);
}

// ceil(fraction * task classes) classes drawn uniformly without replacement, seeded by
// (seed, client id, task index); every task sample of those classes.
inline ClientShard shard_client(const IncrementalTask& task, double fraction, std::uint64_t seed,
                                std::size_t client_id) {
  if (task.classes.empty()) throw InvalidArgument("shard_client: task has no classes");
  if (!(fraction > 0.0) || fraction > 1.0) throw InvalidArgument("shard_client: fraction must be in (0, 1]");
  Rng rng = make_rng(seed, {0x5a4d, client_id, task.index});
  const std::size_t k = shard_class_count(task.classes.size(), fraction);
  ClientShard shard{client_id, task.index, {}, {}};
  for (std::size_t i : sample_without_replacement(task.classes.size(), k, rng)) {
    shard.classes.push_back(task.classes[i]);
  }
  std::sort(shard.classes.begin(), shard.classes.end());
  for (const auto& s : task.samples) {
    if (std::binary_search(shard.classes.begin(), shard.classes.end(), s.label)) {
      shard.samples.push_back(s);
    }
  }
  return shard;
}

inline std::vector<double> class_mean_embedding(std::span<const LabeledSample> samples,
                                                const ModelInstance& model) {
  if (samples.empty()) throw InvalidArgument("class_mean_embedding: empty class");
  const Matrix e = embed(model, stack_features(samples));
  std::vector<double> mean(e.cols(), 0.0);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    for (std::size_t c = 0; c < e.cols(); ++c) mean[c] += e(r, c);
  }
  for (auto& v : mean) v /= static_cast<double>(e.rows());
  return mean;
}

// Greedy herding: step k picks the unused sample that brings the mean of the
// selected embeddings closest to the class mean. Ties go to the lowest index.
inline std::vector<std::size_t> herding_order(const Matrix& embeddings, std::size_t m) {
  const std::size_t n = embeddings.rows(), f = embeddings.cols();
  if (m > n) throw InvalidArgument("herding: requested " + std::to_string(m) + " of " + std::to_string(n));
  std::vector<double> mu(f, 0.0), running(f, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < f; ++c) mu[c] += embeddings(r, c);
  }
  for (auto& v : mu) v /= static_cast<double>(n);
  std::vector<bool> used(n, false);
  std::vector<std::size_t> order;
  order.reserve(m);
  for (std::size_t k = 1; k <= m; ++k) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < f; ++c) {
        const double diff = mu[c] - (running[c] + embeddings(i, c)) / static_cast<double>(k);
        d += diff * diff;
      }
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    used[best] = true;
    order.push_back(best);
    for (std::size_t c = 0; c < f; ++c) running[c] += embeddings(best, c);
  }
  return order;
}

inline std::vector<LabeledSample> herding_select(std::span<const LabeledSample> samples,
                                                 const ModelInstance& model, std::size_t m) {
  if (m > samples.size()) {
    throw InvalidArgument("herding_select: m = " + std::to_string(m) + " exceeds class size " +
                          std::to_string(samples.size()));
  }
  if (m == 0) return {};
  const auto order = herding_order(embed(model, stack_features(samples)), m);
  std::vector<LabeledSample> out;
  out.reserve(m);
  for (std::size_t i : order) out.push_back(samples[i]);
  return out;
}

// Fixed-capacity per-class replay store; each class list is in herding order.
struct ExemplarMemory {
  std::size_t capacity = 0;
  std::map<std::size_t, std::vector<LabeledSample>> per_class;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [c, v] : per_class) n += v.size();
    return n;
  }
  bool empty() const { return total() == 0; }

  std::vector<LabeledSample> samples() const {
    std::vector<LabeledSample> out;
    for (const auto& [c, v] : per_class) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  friend bool operator==(const ExemplarMemory&, const ExemplarMemory&) = default;
};

// Absorbs the finished task's classes. The per-class quota is
// floor(capacity / old classes); existing lists are truncated to their herding prefix
// and new classes are herded up to the quota (or their size, if smaller).
inline ExemplarMemory update_memory(ExemplarMemory memory,
                                    const std::map<std::size_t, std::vector<LabeledSample>>& finished,
                                    std::size_t old_class_count, const ModelInstance& model) {
  if (old_class_count == 0) return memory;
  std::size_t stored_classes = memory.per_class.size();
  for (const auto& [c, v] : finished) {
    if (!memory.per_class.contains(c) && !v.empty()) ++stored_classes;
  }
  const std::size_t quota = memory.capacity / std::max(old_class_count, stored_classes);
  for (auto& [c, v] : memory.per_class) {
    if (v.size() > quota) v.resize(quota);
  }
  for (const auto& [c, v] : finished) {
    if (v.empty()) continue;
    memory.per_class[c] = herding_select(v, model, std::min(quota, v.size()));
  }
  std::erase_if(memory.per_class, [](const auto& kv) { return kv.second.empty(); });
  return memory;
}

}  // namespace glfc
