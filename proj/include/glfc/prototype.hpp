#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glfc/autodiff.hpp"
#include "glfc/dataset.hpp"
#include "glfc/dual.hpp"
#include "glfc/losses.hpp"
#include "glfc/random.hpp"
#include "glfc/stream.hpp"

namespace glfc {

// ---------------------------------------------------------------------------
// Gradient encoder

enum class EncoderArch { mlp, lenet };

inline const char* to_string(EncoderArch a) { return a == EncoderArch::mlp ? "mlp" : "lenet"; }

// mlp: dense(input -> hidden) -> relu -> dense(hidden -> head).
// lenet: two 3x3 convolutions and two dense layers; needs an image input of at
// least 5x5.
inline ModelSpec encoder_spec(Shape input, std::size_t head_width,
                              EncoderArch arch = EncoderArch::mlp, std::size_t hidden = 32) {
  if (head_width == 0) throw InvalidArgument("encoder head width must be positive");
  if (arch == EncoderArch::mlp) {
    return ModelSpec(input, {LayerSpec::dense(input.size(), hidden), LayerSpec::relu(),
                             LayerSpec::dense(hidden, head_width)});
  }
  if (input.height < 5 || input.width < 5) {
    throw ConfigError("lenet encoder needs an image input of at least 5x5, got " + to_string(input));
  }
  const std::size_t flat = 8 * (input.height - 4) * (input.width - 4);
  return ModelSpec(input, {LayerSpec::conv2d(input.channels, 4, 3), LayerSpec::relu(),
                           LayerSpec::conv2d(4, 8, 3), LayerSpec::relu(), LayerSpec::flatten(),
                           LayerSpec::dense(flat, hidden), LayerSpec::relu(),
                           LayerSpec::dense(hidden, head_width)});
}

// Gradients of the encoder's softmax cross-entropy at one sample, laid out
// like the encoder's parameters.
struct GradientPacket {
  GradientVector grad;

  friend bool operator==(const GradientPacket&, const GradientPacket&) = default;
};

struct GradientPool {
  std::vector<GradientPacket> packets;
};

struct ReconstructedSample {
  std::vector<double> features;
  std::size_t label = 0;
  double residual = 0.0;   // matching loss at the returned features
  double initial_residual = 0.0;

  friend bool operator==(const ReconstructedSample&, const ReconstructedSample&) = default;
};

// ---------------------------------------------------------------------------
// Client side

// Class member whose embedding is nearest the class-mean embedding; ties go
// to the earliest sample.
inline LabeledSample select_prototype(std::span<const LabeledSample> samples,
                                      const ModelInstance& model) {
  if (samples.empty()) throw InvalidArgument("select_prototype: empty class");
  const Matrix e = embed(model, stack_features(samples));
  std::vector<double> mean(e.cols(), 0.0);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    for (std::size_t k = 0; k < e.cols(); ++k) mean[k] += e(r, k);
  }
  for (auto& v : mean) v /= static_cast<double>(e.rows());
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double d = 0.0;
    for (std::size_t k = 0; k < e.cols(); ++k) d += (e(r, k) - mean[k]) * (e(r, k) - mean[k]);
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return samples[best];
}

// Per-coordinate population variance of the class's embeddings. Coordinates
// with zero variance take the mean variance instead.
inline std::vector<double> feature_variance(std::span<const LabeledSample> samples,
                                            const ModelInstance& model) {
  if (samples.empty()) throw InvalidArgument("feature_variance: empty class");
  const Matrix e = embed(model, stack_features(samples));
  const double n = static_cast<double>(e.rows());
  std::vector<double> mean(e.cols(), 0.0), var(e.cols(), 0.0);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    for (std::size_t k = 0; k < e.cols(); ++k) mean[k] += e(r, k) / n;
  }
  for (std::size_t r = 0; r < e.rows(); ++r) {
    for (std::size_t k = 0; k < e.cols(); ++k) var[k] += (e(r, k) - mean[k]) * (e(r, k) - mean[k]) / n;
  }
  double avg = 0.0;
  for (double v : var) avg += v / static_cast<double>(var.size());
  for (auto& v : var) {
    if (v == 0.0) v = avg;
  }
  return var;
}

struct PerturbConfig {
  double noise_scale = 0.1;
  std::size_t steps = 100;
  double learning_rate = 0.1;
};

// BCE of the classifier head at (latent(x) + offset) against the one-hot label.
inline double perturbation_loss(const ModelInstance& model, std::span<const double> x,
                                std::size_t label, std::span<const double> offset) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data().begin());
  Matrix off(1, offset.size());
  std::copy(offset.begin(), offset.end(), off.data().begin());
  const std::size_t lab[] = {label};
  return loss_value(model, in, BceLoss{one_hot(lab, model.output_width()), {}}, &off);
}

namespace detail {

inline std::vector<double> draw_feature_noise(Rng& rng, std::span<const double> variance,
                                              double noise_scale) {
  std::vector<double> eps(variance.size());
  for (std::size_t k = 0; k < eps.size(); ++k) {
    eps[k] = noise_scale * draw_normal(rng, 0.0, std::sqrt(variance[k]));
  }
  return eps;
}

inline std::optional<std::vector<double>> try_perturb(const LabeledSample& sample,
                                                      const ModelInstance& model,
                                                      std::span<const double> variance,
                                                      const PerturbConfig& cfg, double lr,
                                                      std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x9e27});
  Matrix x(1, sample.features.size());
  std::copy(sample.features.begin(), sample.features.end(), x.data().begin());
  const std::size_t lab[] = {sample.label};
  const BceLoss loss{one_hot(lab, model.output_width()), {}};
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto eps = draw_feature_noise(rng, variance, cfg.noise_scale);
    Matrix off(1, eps.size());
    std::copy(eps.begin(), eps.end(), off.data().begin());
    InputGradient g;
    try {
      g = input_gradient(model, x, loss, &off);
    } catch (const NumericError&) {
      return std::nullopt;
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      x.data()[k] -= lr * g.grad.data()[k];
      if (!std::isfinite(x.data()[k])) return std::nullopt;
    }
  }
  return std::vector<double>(x.data().begin(), x.data().end());
}

}  // namespace detail

// Moves the prototype so that its noisy latent feature is still classified
// correctly. Noise is noise_scale * N(0, variance), redrawn every step. On a
// non-finite update the run is repeated once at half the step size.
inline LabeledSample perturb_prototype(const LabeledSample& sample, const ModelInstance& model,
                                       std::span<const double> variance, const PerturbConfig& cfg,
                                       std::uint64_t seed) {
  if (model.spec.layer_count() < 2) throw InvalidArgument("perturb_prototype: model has no latent feature");
  if (variance.size() != model.spec.input_shape_of(model.spec.layer_count() - 1).size()) {
    throw InvalidArgument("perturb_prototype: variance length does not match the latent width");
  }
  if (!(cfg.learning_rate >= 0.0)) throw InvalidArgument("perturb_prototype: negative learning rate");
  auto out = detail::try_perturb(sample, model, variance, cfg, cfg.learning_rate, seed);
  if (!out) out = detail::try_perturb(sample, model, variance, cfg, cfg.learning_rate / 2, seed);
  if (!out) throw NumericError("prototype perturbation diverged", model.spec.layer_count());
  LabeledSample result = sample;
  result.features = std::move(*out);
  return result;
}

// Encoder parameter gradient of softmax cross-entropy at x, generic over the
// scalar so that dual numbers give its directional derivative in x.
template <class T>
std::vector<T> encoder_gradient(const ModelInstance& encoder, const BasicMatrix<T>& x,
                                std::size_t label) {
  auto cache = forward_cached<T>(encoder, x);
  const std::size_t lab[] = {label};
  auto e = softmax_cross_entropy<T>(cache.logits(), lab);
  return backward<T>(encoder, cache, std::move(e.grad), false).params;
}

inline GradientPacket encode_gradient(std::span<const double> features, std::size_t label,
                                      const ModelInstance& encoder) {
  if (label >= encoder.output_width()) throw InvalidArgument("encode_gradient: label outside the encoder head");
  Matrix x(1, features.size());
  std::copy(features.begin(), features.end(), x.data().begin());
  return {GradientVector(encoder.spec.layout(), encoder_gradient<double>(encoder, x, label))};
}

// ---------------------------------------------------------------------------
// Proxy side

inline GradientPool shuffle_pool(std::vector<GradientPacket> packets, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x5b0f});
  const auto perm = random_permutation(packets.size(), rng);
  GradientPool pool;
  pool.packets.reserve(packets.size());
  for (std::size_t i : perm) pool.packets.push_back(std::move(packets[i]));
  return pool;
}

// For softmax cross-entropy the final bias gradient is p - y, whose only
// negative entry sits at the true class.
inline std::size_t recover_label(const GradientPacket& packet) {
  const auto& layout = packet.grad.layout();
  if (layout.empty()) throw RecoveryError("packet has no parameter blocks");
  const auto bias = packet.grad.bias(layout.size() - 1);
  std::optional<std::size_t> found;
  for (std::size_t k = 0; k < bias.size(); ++k) {
    if (bias[k] < 0.0) {
      if (found) throw RecoveryError("more than one negative entry in the final bias gradient");
      found = k;
    }
  }
  if (!found) throw RecoveryError("no negative entry in the final bias gradient");
  return *found;
}

enum class ReconstructMethod { gradient_descent, lbfgs };

inline const char* to_string(ReconstructMethod m) {
  return m == ReconstructMethod::gradient_descent ? "gd" : "lbfgs";
}

struct ReconstructConfig {
  std::size_t steps = 200;
  double learning_rate = 0.1;
  ReconstructMethod method = ReconstructMethod::gradient_descent;
  std::size_t history = 10;  // L-BFGS memory
};

inline constexpr std::size_t kMaxDummyDim = 256;

// Sum over parameter blocks of the squared distance between the encoder
// gradient at x and the packet.
inline double matching_loss(const GradientPacket& target, const ModelInstance& encoder,
                            std::span<const double> x, std::size_t label) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data().begin());
  const auto g = encoder_gradient<double>(encoder, in, label);
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = g[i] - target.grad.values()[i];
    s += d * d;
  }
  return s;
}

struct MatchingEval {
  double value = 0.0;
  std::vector<double> grad;
};

// Exact input gradient of the matching loss: one forward-mode pass per input
// coordinate through the encoder's backward pass.
inline MatchingEval matching_loss_gradient(const GradientPacket& target, const ModelInstance& encoder,
                                           std::span<const double> x, std::size_t label) {
  const auto& G = target.grad.values();
  MatchingEval out{0.0, std::vector<double>(x.size(), 0.0)};
  BasicMatrix<Dual> in(1, x.size());
  for (std::size_t k = 0; k < x.size(); ++k) in.data()[k] = Dual(x[k]);
  for (std::size_t j = 0; j < x.size(); ++j) {
    in.data()[j].d = 1.0;
    const auto g = encoder_gradient<Dual>(encoder, in, label);
    in.data()[j].d = 0.0;
    double dj = 0.0, v = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double diff = g[i].v - G[i];
      v += diff * diff;
      dj += 2.0 * diff * g[i].d;
    }
    out.value = v;
    out.grad[j] = dj;
  }
  return out;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Descent {
  std::vector<double> x;
  double value = 0.0;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Returns nullopt when a non-finite loss shows up.
template <class F>
std::optional<Descent> minimize_gd(F&& f, std::vector<double> x, const ReconstructConfig& cfg) {
  auto e = f(x);
  if (!std::isfinite(e.value)) return std::nullopt;
  Descent best{x, e.value};
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= cfg.learning_rate * e.grad[k];
    e = f(x);
    if (!std::isfinite(e.value) || !all_finite(x)) return std::nullopt;
    if (e.value < best.value) best = {x, e.value};
  }
  return best;
}

// L-BFGS with a backtracking Armijo line search starting from `learning_rate`.
template <class F>
std::optional<Descent> minimize_lbfgs(F&& f, std::vector<double> x, const ReconstructConfig& cfg) {
  auto e = f(x);
  if (!std::isfinite(e.value)) return std::nullopt;
  std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;  // (s, y)
  const std::size_t n = x.size();
  for (std::size_t it = 0; it < cfg.steps; ++it) {
    std::vector<double> q = e.grad;
    std::vector<double> alpha(mem.size());
    for (std::size_t i = mem.size(); i-- > 0;) {
      const auto& [s, y] = mem[i];
      alpha[i] = dot(s, q) / dot(y, s);
      for (std::size_t k = 0; k < n; ++k) q[k] -= alpha[i] * y[k];
    }
    if (!mem.empty()) {
      const auto& [s, y] = mem.back();
      const double scale = dot(s, y) / dot(y, y);
      for (auto& v : q) v *= scale;
    }
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const auto& [s, y] = mem[i];
      const double beta = dot(y, q) / dot(y, s);
      for (std::size_t k = 0; k < n; ++k) q[k] += s[k] * (alpha[i] - beta);
    }
    double slope = -dot(e.grad, q);
    if (!(slope < 0.0)) {
      mem.clear();
      q = e.grad;
      slope = -dot(q, q);
      if (slope == 0.0) break;
    }
    double step = cfg.learning_rate;
    std::vector<double> xn(n);
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      for (std::size_t k = 0; k < n; ++k) xn[k] = x[k] - step * q[k];
      auto en = f(xn);
      if (std::isfinite(en.value) && en.value <= e.value + 1e-4 * step * slope) {
        std::vector<double> s(n), y(n);
        for (std::size_t k = 0; k < n; ++k) {
          s[k] = xn[k] - x[k];
          y[k] = en.grad[k] - e.grad[k];
        }
        if (dot(s, y) > 1e-300) {
          mem.emplace_back(std::move(s), std::move(y));
          if (mem.size() > cfg.history) mem.pop_front();
        }
        x = xn;
        e = std::move(en);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (!std::isfinite(e.value)) return std::nullopt;
  return Descent{x, e.value};
}

}  // namespace detail

// Recovers an input whose encoder gradient matches the packet, starting from
// a seeded standard normal draw. The returned features are the best iterate,
// so the residual never exceeds the initial one. A non-finite loss triggers
// one restart from a fresh draw.
inline ReconstructedSample reconstruct_sample(const GradientPacket& packet, const ModelInstance& encoder,
                                              std::size_t label, const ReconstructConfig& cfg,
                                              std::uint64_t seed) {
  const std::size_t dim = encoder.spec.input_size();
  if (dim > kMaxDummyDim) {
    throw InvalidArgument("reconstruct_sample: input dimension " + std::to_string(dim) +
                          " exceeds " + std::to_string(kMaxDummyDim));
  }
  require_same_layout(encoder.params, packet.grad, "reconstruct_sample");
  const auto f = [&](std::span<const double> x) {
    return matching_loss_gradient(packet, encoder, x, label);
  };
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    Rng rng = make_rng(seed, {0x7ec0, attempt});
    auto x0 = draw_normal_vector(rng, dim);
    const double initial = f(x0).value;
    if (!std::isfinite(initial)) continue;
    std::optional<detail::Descent> r;
    try {
      r = cfg.method == ReconstructMethod::lbfgs ? detail::minimize_lbfgs(f, x0, cfg)
                                                 : detail::minimize_gd(f, x0, cfg);
    } catch (const NumericError&) {
      r.reset();
    }
    if (!r) continue;
    if (r->value > initial) r = detail::Descent{x0, initial};
    return {std::move(r->x), label, r->value, initial};
  }
  throw NumericError("gradient matching produced a non-finite loss twice", encoder.spec.layer_count());
}

// Proxy bookkeeping: the evaluation set of the current task, the running best
// model of the current task and the frozen best of the previous one.
struct ProxyState {
  std::size_t task = 1;
  std::vector<ReconstructedSample> eval_set;
  std::optional<ModelInstance> best;
  double best_accuracy = -std::numeric_limits<double>::infinity();
  bool unvalidated = false;
  std::optional<ModelInstance> previous_best;
  std::size_t dropped_packets = 0;
};

inline double eval_accuracy(const ModelInstance& model, std::span<const ReconstructedSample> set) {
  if (set.empty()) throw InvalidArgument("eval_accuracy: empty set");
  Matrix x(set.size(), set.front().features.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::copy(set[i].features.begin(), set[i].features.end(), x.row(i).begin());
  }
  const Matrix z = forward(model, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = z.row(i);
    const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (arg == set[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

// A non-empty pool opens a new task: the running best is frozen as the
// previous best and the reconstructions become the new evaluation set.
// Packets whose label cannot be recovered are dropped.
inline ProxyState proxy_receive(ProxyState proxy, std::vector<GradientPacket> packets,
                                const ModelInstance& encoder, const ReconstructConfig& cfg,
                                std::uint64_t seed) {
  if (packets.empty()) return proxy;
  GradientPool pool = shuffle_pool(std::move(packets), seed);
  std::vector<ReconstructedSample> set;
  for (std::size_t i = 0; i < pool.packets.size(); ++i) {
    std::size_t label = 0;
    try {
      label = recover_label(pool.packets[i]);
    } catch (const RecoveryError&) {
      ++proxy.dropped_packets;
      continue;
    }
    set.push_back(reconstruct_sample(pool.packets[i], encoder, label, cfg, derive_seed(seed, {i})));
  }
  ++proxy.task;
  proxy.previous_best = proxy.best;
  proxy.best.reset();
  proxy.best_accuracy = -std::numeric_limits<double>::infinity();
  proxy.unvalidated = false;
  proxy.eval_set = std::move(set);
  return proxy;
}

// Adopts the candidate when its accuracy on the evaluation set is strictly
// higher than the best so far. The reconstructions live in the encoder's
// input space, which is the classifier's input space.
inline ProxyState proxy_evaluate(ProxyState proxy, const ModelInstance& candidate) {
  if (proxy.eval_set.empty()) {
    proxy.best = candidate;
    proxy.unvalidated = true;
    return proxy;
  }
  const double acc = eval_accuracy(candidate, proxy.eval_set);
  if (acc > proxy.best_accuracy) {
    proxy.best = candidate;
    proxy.best_accuracy = acc;
    proxy.unvalidated = false;
  }
  return proxy;
}

struct DistributedModels {
  std::optional<ModelInstance> previous;
  std::optional<ModelInstance> current;
};

inline DistributedModels distribute_best(const ProxyState& proxy) {
  if (proxy.task < 2) throw InvalidArgument("distribute_best: nothing to distribute before task 2");
  return {proxy.previous_best, proxy.best};
}

}  // namespace glfc
