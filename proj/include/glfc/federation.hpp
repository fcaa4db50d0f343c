#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glfc/autodiff.hpp"
#include "glfc/config.hpp"
#include "glfc/dataset.hpp"
#include "glfc/local_trainer.hpp"
#include "glfc/model.hpp"
#include "glfc/prototype.hpp"
#include "glfc/random.hpp"
#include "glfc/stream.hpp"

namespace glfc {

// Server-side state. Holds no sample data.
struct GlobalState {
  ModelInstance model;
  std::size_t round = 0;  // rounds completed
  std::size_t task = 1;
  std::vector<std::size_t> registered;
  std::uint64_t seed = 0;
};

struct RoundPlan {
  std::vector<std::size_t> selected;  // ascending ids
  std::map<std::size_t, ClientCategory> categories;
};

struct AggregationReport {
  std::vector<std::size_t> participants;  // ids that contributed, ascending
  ParameterVector aggregate;
  std::map<std::size_t, bool> no_data;
  bool degenerate = false;                // every selected client lacked data
};

// ---------------------------------------------------------------------------
// Client lifecycle

inline RoundPlan select_clients(std::span<const std::size_t> registered, std::size_t m,
                                std::uint64_t round_seed) {
  if (m > registered.size()) {
    throw InvalidArgument("select_clients: cannot pick " + std::to_string(m) + " of " +
                          std::to_string(registered.size()) + " clients");
  }
  Rng rng = make_rng(round_seed, {0x5e1ec7});
  RoundPlan plan;
  for (std::size_t i : sample_without_replacement(registered.size(), m, rng)) {
    plan.selected.push_back(registered[i]);
  }
  std::sort(plan.selected.begin(), plan.selected.end());
  return plan;
}

// At a transition, existing clients are split into old-only (round(fraction * n)
// of them) and mixed (the rest) by a seeded draw; newcomers stay newcomers. Otherwise
// the prior map is returned with newcomers added.
inline std::map<std::size_t, ClientCategory> assign_categories(
    std::span<const std::size_t> existing, const std::map<std::size_t, ClientCategory>& prior,
    bool transition, double old_only_fraction, std::uint64_t seed,
    std::span<const std::size_t> newcomers = {}) {
  if (!(old_only_fraction >= 0.0 && old_only_fraction <= 1.0)) {
    throw InvalidArgument("assign_categories: old-only fraction must be in [0, 1]");
  }
  std::map<std::size_t, ClientCategory> out = prior;
  if (transition) {
    std::vector<std::size_t> ids(existing.begin(), existing.end());
    std::sort(ids.begin(), ids.end());
    const auto n_old = static_cast<std::size_t>(
        std::llround(old_only_fraction * static_cast<double>(ids.size())));
    Rng rng = make_rng(seed, {0xca7e});
    const auto picks = sample_without_replacement(ids.size(), n_old, rng);
    for (std::size_t id : ids) out[id] = ClientCategory::both;
    for (std::size_t i : picks) out[ids[i]] = ClientCategory::old_only;
  }
  for (std::size_t id : newcomers) out[id] = ClientCategory::newcomer;
  return out;
}

// Ids of the clients joining at task t, numbered after `next_id`.
inline std::vector<std::size_t> register_new_clients(const TaskSchedule& schedule, std::size_t t,
                                                     std::size_t next_id) {
  if (t < 1 || t > schedule.task_count()) throw InvalidArgument("register_new_clients: task out of range");
  std::vector<std::size_t> ids(schedule.new_clients[t - 1]);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = next_id + i;
  return ids;
}

inline ClientState make_client(std::size_t id, ClientShard shard, std::size_t capacity, std::size_t task) {
  ClientState c;
  c.id = id;
  c.category = ClientCategory::newcomer;
  c.shard = std::move(shard);
  c.memory.capacity = capacity;
  c.task = task;
  return c;
}

// ---------------------------------------------------------------------------
// Aggregation

inline ParameterVector fedavg_aggregate(std::span<const ParameterVector> params,
                                        std::span<const double> weights = {}) {
  if (params.empty()) throw InvalidArgument("fedavg_aggregate: no contributions");
  if (!weights.empty() && weights.size() != params.size()) {
    throw InvalidArgument("fedavg_aggregate: one weight per contribution required");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_layout(params[0], params[i], "fedavg_aggregate");
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!(w >= 0.0)) throw InvalidArgument("fedavg_aggregate: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("fedavg_aggregate: weights sum to zero");
  // Offsets from the first contribution, so identical inputs average to
  // themselves exactly.
  const auto& base = params[0].values();
  std::vector<double> acc(base.size(), 0.0);
  for (std::size_t i = 1; i < params.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const auto& v = params[i].values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * (v[k] - base[k]);
  }
  std::vector<double> out(base.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = base[k] + acc[k] / total;
  return {params[0].layout(), std::move(out)};
}

// ---------------------------------------------------------------------------
// Round orchestration

struct RoundContext {
  const ExperimentConfig* config = nullptr;
  MethodFlags flags;
  const ModelInstance* encoder = nullptr;
};

struct RoundMetrics {
  std::size_t round = 0;  // 1-based global round
  std::size_t task = 0;
  std::vector<std::size_t> selected;
  std::vector<std::size_t> transitions;  // ids whose detector fired
  std::size_t packets = 0;
  bool degenerate = false;
};

struct World {
  GlobalState global;
  ProxyState proxy;
  std::map<std::size_t, ClientState> clients;
};

struct RoundOutput {
  World world;
  RoundMetrics metrics;
  AggregationReport report;
};

namespace detail {

inline LossWeights round_loss_weights(std::size_t local_task, const LossConfig& loss) {
  LossWeights l = loss_weight_schedule(local_task);
  if (local_task >= 2 && loss.distillation_weight_override) l.distillation = *loss.distillation_weight_override;
  return l;
}

// End-of-task model a client keeps for distillation when the proxy is off:
// its own last local model of the finished task, else the received global
// model cut back to the previously observed head width.
inline ModelInstance own_old_model(const ClientState& c, const ModelInstance& received) {
  if (c.last_local && c.last_local_task == c.task) return *c.last_local;
  const std::size_t width = c.observed_width == 0 ? received.output_width()
                                                  : std::min(c.observed_width, received.output_width());
  return truncate_head(received, width);
}

struct ClientUpdate {
  ClientState state;
  LocalTrainResult result;
  std::vector<std::pair<std::size_t, GradientPacket>> packets;  // (class, packet)
};

inline ClientUpdate train_selected(ClientState c, const World& w, const RoundContext& ctx, std::size_t round) {
  const auto& cfg = *ctx.config;
  const ModelInstance& global = w.global.model;
  if (ctx.flags.proxy && c.task >= 2) {
    const auto& chosen = w.proxy.task + 1 == c.task ? w.proxy.best : w.proxy.previous_best;
    c.old_model = chosen ? chosen : std::optional<ModelInstance>(global);
  }
  if (c.task >= 2 && !c.old_model) c.old_model = global;
  TrainConfig tc;
  tc.local_epochs = cfg.optimizer.local_epochs;
  tc.batch_size = cfg.optimizer.batch_size;
  tc.learning_rate = cfg.optimizer.learning_rate;
  tc.objective = {ctx.flags.compensate, ctx.flags.distillation, cfg.loss.rd_squash};
  const std::uint64_t seed = derive_seed(w.global.seed, {0x7a1, round, c.id});
  ClientUpdate up{c, local_train(c, global, tc, round_loss_weights(c.task, cfg.loss), seed), {}};
  if (!up.result.no_data) {
    up.state.last_local = with_params(global, up.result.params);
    up.state.last_local_task = c.task;
  }
  if (ctx.flags.proxy && c.transitioned && c.shard_active && !c.shard.empty() && !up.result.no_data) {
    const ModelInstance& local = *up.state.last_local;
    const auto groups = group_by_class(c.shard.samples);
    PerturbConfig pc{cfg.proxy.noise_scale, cfg.proxy.perturb_steps, cfg.proxy.perturb_lr};
    for (const auto& [cls, members] : groups) {
      const auto proto = select_prototype(members, local);
      const auto var = feature_variance(members, local);
      const auto moved = perturb_prototype(proto, local, var, pc, derive_seed(seed, {0x9e7, cls}));
      up.packets.emplace_back(cls, encode_gradient(moved.features, cls, *ctx.encoder));
    }
  }
  return up;
}

}  // namespace detail

// One global round. Every client first measures its entropy under the current
// global model and, on a detected transition, folds its finished data into
// memory. Then the selected clients train on private copies, transitioning
// clients send prototype packets, updates are averaged and the proxy scores
// the new global model. `processing_order`, if given, permutes the order in
// which selected clients are processed; results do not depend on it.
inline RoundOutput run_round(World world, const RoundContext& ctx,
                             std::optional<std::vector<std::size_t>> processing_order = std::nullopt) {
  const auto& cfg = *ctx.config;
  auto& g = world.global;
  const std::size_t round = g.round + 1;
  RoundOutput out;
  out.metrics.round = round;
  out.metrics.task = g.task;

  for (auto& [id, c] : world.clients) {
    c.transitioned = false;
    const auto probe = c.shard.empty() ? c.memory.samples() : c.shard.samples;
    if (!probe.empty()) {
      c.entropy_history.push_back(average_entropy(g.model, probe, cfg.loss.entropy_squash));
      if (detect_transition(c.entropy_history, cfg.loss.entropy_threshold)) {
        std::optional<ModelInstance> keep;
        if (!ctx.flags.proxy) keep = detail::own_old_model(c, g.model);
        const std::size_t old_width = c.observed_width;
        c = on_transition(std::move(c), keep, g.model, old_width);
        if (!ctx.flags.memory) c.memory.per_class.clear();
        out.metrics.transitions.push_back(id);
      }
    }
    c.observed_width = g.model.output_width();
  }

  if (cfg.schedule.redraw_categories_every_round) {
    std::vector<std::size_t> existing;
    for (const auto& [id, c] : world.clients) {
      if (c.category != ClientCategory::newcomer) existing.push_back(id);
    }
    std::map<std::size_t, ClientCategory> prior;
    const auto cats = assign_categories(existing, prior, true, cfg.schedule.old_only_fraction,
                                        derive_seed(g.seed, {0xca7, round}));
    for (const auto& [id, cat] : cats) {
      world.clients.at(id).category = cat;
      world.clients.at(id).shard_active = cat != ClientCategory::old_only;
    }
  }

  const std::size_t m = std::min(cfg.schedule.clients_per_round, g.registered.size());
  RoundPlan plan = select_clients(g.registered, m, derive_seed(g.seed, {0x5e1, round}));
  for (std::size_t id : plan.selected) plan.categories[id] = world.clients.at(id).category;
  out.metrics.selected = plan.selected;

  std::vector<std::size_t> order = processing_order.value_or(plan.selected);
  {
    auto a = order, b = plan.selected;
    std::sort(a.begin(), a.end());
    if (a != b) throw InvalidArgument("run_round: processing order is not a permutation of the selection");
  }
  std::map<std::size_t, detail::ClientUpdate> updates;
  for (std::size_t id : order) {
    updates.emplace(id, detail::train_selected(world.clients.at(id), world, ctx, round));
  }

  std::vector<ParameterVector> contrib;
  std::vector<double> weights;
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, GradientPacket>> sent;
  for (auto& [id, up] : updates) {
    out.report.no_data[id] = up.result.no_data;
    if (!up.result.no_data) {
      out.report.participants.push_back(id);
      weights.push_back(static_cast<double>(up.state.training_samples().size()));
      contrib.push_back(std::move(up.result.params));
    }
    for (auto& [cls, p] : up.packets) sent.push_back({{id, cls}, std::move(p)});
    world.clients.at(id) = std::move(up.state);
  }
  if (contrib.empty()) {
    out.report.degenerate = true;
    out.report.aggregate = g.model.params;
  } else {
    out.report.aggregate = cfg.weighted_fedavg ? fedavg_aggregate(contrib, weights) : fedavg_aggregate(contrib);
    g.model = with_params(g.model, out.report.aggregate);
  }
  out.metrics.degenerate = out.report.degenerate;

  if (ctx.flags.proxy) {
    std::sort(sent.begin(), sent.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<GradientPacket> packets;
    packets.reserve(sent.size());
    for (auto& s : sent) packets.push_back(std::move(s.second));
    out.metrics.packets = packets.size();
    ReconstructConfig rc{cfg.proxy.reconstruct_steps, cfg.proxy.reconstruct_lr, cfg.proxy.reconstruct_method};
    world.proxy = proxy_receive(std::move(world.proxy), std::move(packets), *ctx.encoder, rc,
                                derive_seed(g.seed, {0x9a0, round}));
    world.proxy = proxy_evaluate(std::move(world.proxy), g.model);
  }
  g.round = round;
  out.world = std::move(world);
  return out;
}

// ---------------------------------------------------------------------------
// Full experiment

struct TaskMetrics {
  std::size_t task = 0;
  std::size_t round = 0;  // global round at which the task ended
  std::size_t seen_classes = 0;
  double top1_accuracy = 0.0;
  double avg_accuracy = 0.0;  // running mean of top1 over tasks so far

  friend bool operator==(const TaskMetrics&, const TaskMetrics&) = default;
};

struct ExperimentResult {
  std::vector<TaskMetrics> tasks;
  std::vector<RoundMetrics> rounds;
  std::vector<double> round_accuracy;  // seen-class test accuracy after each round
  World world;
  TaskSchedule schedule;
  std::vector<std::size_t> class_order;  // original label of each head column
  Dataset data;                          // relabelled so that head column == label
};

inline Dataset load_dataset(const DatasetConfig& d) {
  if (d.kind == "blobs") return make_blobs(d.blobs);
  Dataset ds = load_csv_dataset(d.csv_path, d.csv_shape, d.csv_test_fraction, d.csv_split_seed, d.csv_scale);
  if (d.csv_classes == 0 || d.csv_classes >= ds.num_classes) return ds;
  for (auto* split : {&ds.train, &ds.test}) {
    std::erase_if(*split, [&](const LabeledSample& s) { return s.label >= d.csv_classes; });
    for (std::size_t i = 0; i < split->size(); ++i) (*split)[i].index = i;
  }
  ds.num_classes = d.csv_classes;
  return ds;
}

// Relabels so that classes appear in head-column order.
inline Dataset relabel(Dataset d, const std::vector<std::size_t>& order) {
  std::vector<std::size_t> pos(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (auto* split : {&d.train, &d.test}) {
    for (auto& s : *split) s.label = pos.at(s.label);
  }
  return d;
}

inline double seen_class_accuracy(const ModelInstance& model, std::span<const LabeledSample> test,
                                  std::size_t seen) {
  std::vector<LabeledSample> subset;
  for (const auto& s : test) {
    if (s.label < seen) subset.push_back(s);
  }
  if (subset.empty()) throw InvalidArgument("no test samples for the seen classes");
  const Matrix z = forward(model, stack_features(subset));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const auto row = z.row(i);
    const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += arg == subset[i].label;
  }
  return static_cast<double>(hits) / static_cast<double>(subset.size());
}

inline ModelSpec classifier_spec(const ModelConfig& m, Shape input, std::size_t head) {
  if (m.arch == "cnn") return mini_cnn_spec(input, m.cnn_channels, head);
  return mlp_spec(input.size(), m.hidden, head);
}

// A whole federation: data, schedule, encoder and world, advanced task by
// task and round by round.
class Simulation {
 public:
  explicit Simulation(const ExperimentConfig& cfg) : cfg_(cfg), flags_(cfg.flags()) {
    validate(cfg_);
    Dataset raw = load_dataset(cfg_.dataset);
    if (cfg_.schedule.tasks > raw.num_classes) throw ConfigError("more tasks than classes");
    class_order_ = make_class_order(raw.num_classes, cfg_.seed);
    data_ = relabel(std::move(raw), class_order_);
    std::vector<std::size_t> identity(data_.num_classes);
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = i;
    schedule_ = build_schedule(identity, cfg_.schedule.tasks, cfg_.schedule.rounds_per_task,
                               cfg_.schedule.new_clients_per_task);
    encoder_ = init_model(encoder_spec(data_.input_shape, data_.num_classes, cfg_.proxy.encoder,
                                       cfg_.proxy.encoder_hidden),
                          derive_seed(cfg_.seed, {0xe2c}));
    world_.global.seed = cfg_.seed;
    world_.global.task = 0;
    world_.global.model = init_model(classifier_spec(cfg_.model, data_.input_shape, schedule_.seen_classes(1)),
                                     derive_seed(cfg_.seed, {0x1d1}));
  }

  const ExperimentConfig& config() const { return cfg_; }
  const MethodFlags& flags() const { return flags_; }
  const Dataset& data() const { return data_; }
  const TaskSchedule& schedule() const { return schedule_; }
  const std::vector<std::size_t>& class_order() const { return class_order_; }
  const ModelInstance& encoder() const { return encoder_; }
  const World& world() const { return world_; }
  World& world() { return world_; }
  RoundContext context() const { return {&cfg_, flags_, &encoder_}; }

  // Hands out task t's data: existing clients are split into mixed (new shard)
  // and old-only (keep their data), newcomers join, and the global head
  // grows by the task's class count.
  void begin_task(std::size_t t) {
    if (t != world_.global.task + 1 || t > schedule_.task_count()) {
      throw InvalidArgument("begin_task: tasks must start in order");
    }
    World& w = world_;
    w.global.task = t;
    rounds_in_task_ = 0;
    const IncrementalTask task = make_task(schedule_, t, data_.train);
    const auto shard_for = [&](std::size_t id) {
      return shard_client(task, cfg_.schedule.class_fraction, cfg_.seed, id);
    };
    const std::size_t capacity = flags_.memory ? cfg_.memory_capacity : 0;
    std::vector<std::size_t> newcomers;
    if (t == 1) {
      for (std::size_t i = 0; i < cfg_.schedule.initial_clients; ++i) newcomers.push_back(next_id_++);
    } else {
      const std::vector<std::size_t> existing = w.global.registered;
      std::map<std::size_t, ClientCategory> prior;
      for (const auto& [id, c] : w.clients) prior[id] = c.category;
      const auto cats = assign_categories(existing, prior, true, cfg_.schedule.old_only_fraction,
                                          derive_seed(cfg_.seed, {0xca7e, t}));
      for (std::size_t id : existing) {
        auto& c = w.clients.at(id);
        c.category = cats.at(id);
        // Old-only clients receive nothing new and keep their current data; under
        // per-round redraw every existing client receives new data and the
        // category only masks it for the round.
        if (c.category == ClientCategory::old_only && !cfg_.schedule.redraw_categories_every_round) continue;
        c.shard_active = c.category != ClientCategory::old_only;
        if (!c.shard.empty()) c.unabsorbed.push_back(std::move(c.shard));
        c.shard = shard_for(id);
      }
      newcomers = register_new_clients(schedule_, t, next_id_);
      next_id_ += newcomers.size();
    }
    for (std::size_t id : newcomers) {
      ClientState c = make_client(id, shard_for(id), capacity, t);
      c.observed_width = w.global.model.output_width();
      if (t >= 2 && flags_.distillation != Distillation::none) c.old_model = w.global.model;
      w.clients.emplace(id, std::move(c));
      w.global.registered.push_back(id);
    }
    if (t >= 2) {
      w.global.model = expand_head(w.global.model, schedule_.classes[t - 1].size(),
                                   derive_seed(cfg_.seed, {0x4ead, t}));
    }
  }

  RoundOutput step(std::optional<std::vector<std::size_t>> processing_order = std::nullopt) {
    if (cfg_.schedule.redraw_class_subsets_every_round && rounds_in_task_ > 0) redraw_class_subsets();
    RoundOutput ro = run_round(world_, context(), std::move(processing_order));
    world_ = ro.world;
    ++rounds_in_task_;
    return ro;
  }

  // Fresh class subsets of the current task for clients holding its data.
  void redraw_class_subsets() {
    const std::size_t t = world_.global.task;
    const IncrementalTask task = make_task(schedule_, t, data_.train);
    const std::uint64_t seed = derive_seed(cfg_.seed, {0x5a4e, world_.global.round});
    for (auto& [id, c] : world_.clients) {
      if (c.shard.task_index == t && !c.shard.empty()) {
        c.shard = shard_client(task, cfg_.schedule.class_fraction, seed, id);
      }
    }
  }

  double accuracy() const {
    return seen_class_accuracy(world_.global.model, data_.test, schedule_.seen_classes(world_.global.task));
  }

 private:
  ExperimentConfig cfg_;
  MethodFlags flags_;
  Dataset data_;
  TaskSchedule schedule_;
  std::vector<std::size_t> class_order_;
  ModelInstance encoder_;
  World world_;
  std::size_t next_id_ = 0;
  std::size_t rounds_in_task_ = 0;
};

// Runs every task of the schedule. Accuracy is measured on the test split of
// all classes seen so far, once per round and at the end of each task.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  ExperimentResult res;
  double acc_sum = 0.0;
  for (std::size_t t = 1; t <= sim.schedule().task_count(); ++t) {
    sim.begin_task(t);
    for (std::size_t r = 0; r < sim.schedule().rounds[t - 1]; ++r) {
      res.rounds.push_back(sim.step().metrics);
      res.round_accuracy.push_back(sim.accuracy());
    }
    const double top1 = res.round_accuracy.back();
    acc_sum += top1;
    res.tasks.push_back({t, sim.world().global.round, sim.schedule().seen_classes(t), top1,
                         acc_sum / static_cast<double>(t)});
  }
  res.world = sim.world();
  res.schedule = sim.schedule();
  res.class_order = sim.class_order();
  res.data = sim.data();
  return res;
}

}  // namespace glfc
