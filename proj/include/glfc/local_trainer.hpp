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
#include "glfc/dataset.hpp"
#include "glfc/losses.hpp"
#include "glfc/stream.hpp"

namespace glfc {

// old_only: memory only; both: new data and memory; newcomer: newly joined, no memory.
enum class ClientCategory { old_only, both, newcomer };

inline const char* to_string(ClientCategory c) {
  switch (c) {
    case ClientCategory::old_only: return "old-only";
    case ClientCategory::both: return "mixed";
    case ClientCategory::newcomer: return "newcomer";
  }
  return "?";
}

struct ClientState {
  std::size_t id = 0;
  ClientCategory category = ClientCategory::newcomer;
  ClientShard shard;                    // current new-class data (kept unchanged by old-only clients)
  bool shard_active = true;             // false while the client acts as old-only under per-round redraw
  std::vector<ClientShard> unabsorbed;  // earlier shards not yet folded into memory
  ExemplarMemory memory;
  std::optional<ModelInstance> old_model;
  std::optional<ModelInstance> last_local;  // most recent locally trained model
  std::size_t last_local_task = 0;          // local task counter when last_local was trained
  std::size_t task = 1;                     // local task counter
  std::size_t observed_width = 0;           // head width of the previously received global model
  std::vector<double> entropy_history;
  bool transitioned = false;                // detection fired this round

  // Everything the client holds; entropy is measured on this.
  std::vector<LabeledSample> held_samples() const {
    std::vector<LabeledSample> out = shard.samples;
    auto mem = memory.samples();
    out.insert(out.end(), mem.begin(), mem.end());
    return out;
  }
  // What local training uses this round.
  std::vector<LabeledSample> training_samples() const {
    if (shard_active) return held_samples();
    return memory.samples();
  }
  bool is_new_class(std::size_t label) const {
    return std::binary_search(shard.classes.begin(), shard.classes.end(), label);
  }
};

// ---------------------------------------------------------------------------
// Classification loss and gradient compensation

inline double ce_loss(const ModelInstance& model, const Matrix& batch, const Matrix& one_hot_labels) {
  const Matrix logits = forward(model, batch);
  if (logits.cols() != one_hot_labels.cols()) {
    throw InvalidArgument("ce_loss: labels span " + std::to_string(one_hot_labels.cols()) +
                          " classes, head has " + std::to_string(logits.cols()));
  }
  return BceLoss{one_hot_labels, {}}.evaluate(logits).value;
}

// Softmax probability of the true class minus one.
inline double gradient_measure_from_logits(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw InvalidArgument("gradient_measure: label outside head");
  std::vector<double> p(logits.size());
  softmax_row<double>(logits, p);
  return p[label] - 1.0;
}

inline double gradient_measure(const ModelInstance& model, const LabeledSample& sample) {
  const Matrix logits = forward(model, stack_features(std::span(&sample, 1)));
  return gradient_measure_from_logits(logits.row(0), sample.label);
}

struct GradientMeans {
  std::optional<double> g_new;
  std::optional<double> g_old;
};

// Mean |G| over new-class and old-class samples; a side without members is
// absent. Each side is accumulated as offsets from its first member, so a side
// whose values are all equal has exactly that value as its mean.
inline GradientMeans batch_gradient_means(std::span<const double> measures,
                                          const std::vector<bool>& is_new) {
  if (measures.empty()) throw InvalidArgument("batch_gradient_means: empty batch");
  if (measures.size() != is_new.size()) throw InvalidArgument("batch_gradient_means: size mismatch");
  std::optional<double> first_new, first_old;
  double sn = 0.0, so = 0.0;
  std::size_t nn = 0, no = 0;
  for (std::size_t i = 0; i < measures.size(); ++i) {
    const double a = std::abs(measures[i]);
    auto& first = is_new[i] ? first_new : first_old;
    if (!first) first = a;
    (is_new[i] ? sn : so) += a - *first;
    ++(is_new[i] ? nn : no);
  }
  GradientMeans m;
  if (nn > 0) m.g_new = *first_new + sn / static_cast<double>(nn);
  if (no > 0) m.g_old = *first_old + so / static_cast<double>(no);
  return m;
}

// Per-sample reweighting |g_i| / mean|g| where g_i = p_label - 1. The mean is
// taken over the sample's own side (new or old classes) for mixed clients,
// over the old side for old-only clients and over the new side for
// newcomers. A missing or zero mean gives weight 1.
inline std::vector<double> compensation_weights(const Matrix& logits,
                                                std::span<const std::size_t> labels,
                                                const std::vector<bool>& is_new,
                                                ClientCategory category) {
  std::vector<double> g(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    g[i] = gradient_measure_from_logits(logits.row(i), labels[i]);
  }
  const GradientMeans means = batch_gradient_means(g, is_new);
  std::vector<double> w(labels.size(), 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::optional<double> ref;
    switch (category) {
      case ClientCategory::old_only: ref = means.g_old; break;
      case ClientCategory::newcomer: ref = means.g_new; break;
      case ClientCategory::both: ref = is_new[i] ? means.g_new : means.g_old; break;
    }
    if (ref && *ref > 0.0) w[i] = std::abs(g[i]) / *ref;
  }
  return w;
}

// Gradient-compensated BCE; the weights are recomputed from the logits on
// every evaluation but treated as constants in the gradient. With
// `compensate` off this is plain BCE.
struct GradientCompensationLoss {
  Matrix targets;
  std::vector<std::size_t> labels;
  std::vector<bool> is_new;
  ClientCategory category = ClientCategory::both;
  bool compensate = true;

  LossEval evaluate(const Matrix& logits) const {
    if (!compensate) return BceLoss{targets, {}}.evaluate(logits);
    return BceLoss{targets, compensation_weights(logits, labels, is_new, category)}.evaluate(logits);
  }
};

inline double gc_loss(const ModelInstance& model, const Matrix& batch,
                      std::span<const std::size_t> labels, const std::vector<bool>& is_new,
                      ClientCategory category) {
  if (batch.rows() == 0) throw InvalidArgument("gc_loss: empty batch");
  const Matrix logits = forward(model, batch);
  GradientCompensationLoss loss{one_hot(labels, logits.cols()),
                                {labels.begin(), labels.end()}, is_new, category, true};
  return loss.evaluate(logits).value;
}

// ---------------------------------------------------------------------------
// Relation distillation

// Old-model probabilities in the first columns (one per old class), the one-hot labels in the
// remaining columns. Not renormalized.
inline Matrix splice_relation_target(const Matrix& old_probs, const Matrix& one_hot_labels) {
  if (old_probs.rows() != one_hot_labels.rows() || old_probs.cols() > one_hot_labels.cols()) {
    throw InvalidArgument("relation target: old outputs do not fit the label width");
  }
  Matrix y = one_hot_labels;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t k = 0; k < old_probs.cols(); ++k) y(r, k) = old_probs(r, k);
  }
  return y;
}

inline void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0.0) {
      for (auto& v : row) v /= s;
    }
  }
}

inline Matrix rd_target(const ModelInstance& old_model, const Matrix& batch,
                        const Matrix& one_hot_labels, Squash squash = Squash::sigmoid) {
  Matrix y = splice_relation_target(probabilities(forward(old_model, batch), squash), one_hot_labels);
  normalize_rows(y);
  return y;
}

inline double rd_loss(const ModelInstance& model, const Matrix& batch, const Matrix& target,
                      Squash squash = Squash::sigmoid) {
  return RelationDistillationLoss{target, squash}.evaluate(forward(model, batch)).value;
}

// ---------------------------------------------------------------------------
// Local objective

struct LossWeights {
  double classification = 1.0;
  double distillation = 0.0;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline LossWeights loss_weight_schedule(std::size_t t) {
  if (t <= 1) return {1.0, 0.0};
  return {0.5, 0.5};
}

enum class Distillation { relation, icarl, none };

inline const char* to_string(Distillation d) {
  switch (d) {
    case Distillation::relation: return "relation";
    case Distillation::icarl: return "icarl";
    case Distillation::none: return "none";
  }
  return "?";
}

// Weighted sum of the (gradient-compensated or plain) BCE and the distillation term.
struct LocalObjectiveLoss {
  LossWeights weights;
  GradientCompensationLoss classification;
  Distillation distillation = Distillation::none;
  RelationDistillationLoss relation;
  IcarlDistillationLoss icarl;

  LossEval evaluate(const Matrix& logits) const {
    LossEval out{0.0, Matrix(logits.rows(), logits.cols())};
    const auto add = [&](double w, const LossEval& e) {
      out.value += w * e.value;
      for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.data()[i] += w * e.grad.data()[i];
    };
    if (weights.classification != 0.0) add(weights.classification, classification.evaluate(logits));
    if (weights.distillation != 0.0) {
      if (distillation == Distillation::relation) add(weights.distillation, relation.evaluate(logits));
      if (distillation == Distillation::icarl) add(weights.distillation, icarl.evaluate(logits));
    }
    return out;
  }
};

struct ObjectiveOptions {
  bool compensate = true;
  Distillation distillation = Distillation::relation;
  Squash rd_squash = Squash::sigmoid;
};

// Builds the objective for one batch. The old model is only consulted when
// its weight is positive and distillation is enabled.
inline LocalObjectiveLoss make_local_objective(std::size_t head_width, const ModelInstance* old_model,
                                               const Matrix& batch,
                                               std::span<const std::size_t> labels,
                                               const std::vector<bool>& is_new,
                                               ClientCategory category, LossWeights weights,
                                               const ObjectiveOptions& opts = {}) {
  LocalObjectiveLoss loss;
  loss.weights = weights;
  const Matrix targets = one_hot(labels, head_width);
  loss.classification = {targets, {labels.begin(), labels.end()}, is_new, category, opts.compensate};
  loss.distillation = opts.distillation;
  if (weights.distillation > 0.0 && opts.distillation != Distillation::none) {
    if (old_model == nullptr) {
      throw ConfigError("local objective: a distillation weight > 0 requires an old model");
    }
    if (old_model->output_width() > head_width) {
      throw InvalidArgument("local objective: old model head is wider than the student head");
    }
    if (opts.distillation == Distillation::relation) {
      loss.relation = {rd_target(*old_model, batch, targets, opts.rd_squash), opts.rd_squash};
    } else {
      loss.icarl = {probabilities(forward(*old_model, batch), Squash::sigmoid)};
    }
  }
  return loss;
}

inline double local_objective(const ModelInstance& model, const ModelInstance* old_model,
                              const Matrix& batch, std::span<const std::size_t> labels,
                              const std::vector<bool>& is_new, ClientCategory category,
                              LossWeights weights, const ObjectiveOptions& opts = {}) {
  auto loss = make_local_objective(model.output_width(), old_model, batch, labels, is_new,
                                   category, weights, opts);
  return loss.evaluate(forward(model, batch)).value;
}

// ---------------------------------------------------------------------------
// Local training

struct TrainConfig {
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  ObjectiveOptions objective;
};

struct LocalTrainResult {
  ParameterVector params;
  bool no_data = false;
};

// Mini-batch SGD on the client's shard and memory for `local_epochs` passes,
// reshuffled each epoch from `seed`. The global model is copied, not mutated.
inline LocalTrainResult local_train(const ClientState& client, const ModelInstance& global,
                                    const TrainConfig& cfg, LossWeights weights, std::uint64_t seed) {
  const auto data = client.training_samples();
  if (data.empty()) return {global.params, true};
  if (cfg.batch_size == 0) throw ConfigError("local_train: batch size must be >= 1");
  const ModelInstance* old = client.old_model ? &*client.old_model : nullptr;
  ModelInstance local = global;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    Rng rng = make_rng(seed, {0xe90c, epoch});
    const auto order = random_permutation(data.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<LabeledSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const Matrix x = stack_features(batch);
      const auto labels = stack_labels(batch);
      std::vector<bool> is_new(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        is_new[i] = client.category != ClientCategory::old_only && client.is_new_class(labels[i]);
      }
      const auto loss = make_local_objective(local.output_width(), old, x, labels, is_new,
                                             client.category, weights, cfg.objective);
      auto g = param_gradient(local, x, loss);
      local.params = sgd_step(local.params, g.grad, cfg.learning_rate);
    }
  }
  return {std::move(local.params), false};
}

// ---------------------------------------------------------------------------
// Task-transition detection

// Mean entropy of the renormalized prediction. A nonzero `columns` restricts
// the prediction to the first `columns` head outputs.
inline double average_entropy(const ModelInstance& model, std::span<const LabeledSample> samples,
                              Squash squash = Squash::softmax, std::size_t columns = 0) {
  if (samples.empty()) throw InvalidArgument("average_entropy: empty shard");
  Matrix z = forward(model, stack_features(samples));
  if (columns != 0 && columns < z.cols()) {
    Matrix cut(z.rows(), columns);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t k = 0; k < columns; ++k) cut(r, k) = z(r, k);
    }
    z = std::move(cut);
  }
  const Matrix p = normalized_probabilities(z, squash);
  double h = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) h += entropy(p.row(r));
  return h / static_cast<double>(p.rows());
}

// True iff the latest entropy exceeds the previous one by at least `threshold`.
inline bool detect_transition(std::span<const double> history, double threshold) {
  if (history.size() < 2) return false;
  return history[history.size() - 1] - history[history.size() - 2] >= threshold;
}

// Advances the local task counter, folds the not-yet-absorbed shards into
// memory (quota from `old_class_count`), and adopts `best_current` as the old
// model when one is provided.
inline ClientState on_transition(ClientState client, const std::optional<ModelInstance>& best_current,
                                 const ModelInstance& herding_model, std::size_t old_class_count) {
  ++client.task;
  client.transitioned = true;
  if (best_current) client.old_model = best_current;
  std::map<std::size_t, std::vector<LabeledSample>> finished;
  for (const auto& s : client.unabsorbed) {
    for (const auto& x : s.samples) finished[x.label].push_back(x);
  }
  client.memory = update_memory(std::move(client.memory), finished, old_class_count, herding_model);
  client.unabsorbed.clear();
  return client;
}

}  // namespace glfc
