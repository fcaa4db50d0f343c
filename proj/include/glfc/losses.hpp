#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "glfc/autodiff.hpp"
#include "glfc/dual.hpp"
#include "glfc/error.hpp"
#include "glfc/tensor.hpp"

namespace glfc {

enum class Squash { sigmoid, softmax };

inline const char* to_string(Squash s) { return s == Squash::sigmoid ? "sigmoid" : "softmax"; }

// Probabilities inside log terms are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-12;

inline double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }
inline bool prob_in_range(double p) { return p >= kProbFloor && p <= 1.0 - kProbFloor; }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <class T>
void softmax_row(std::span<const T> z, std::span<T> out) {
  T mx = z[0];
  for (const T& v : z) mx = v > mx ? v : mx;
  T sum = T(0.0);
  for (std::size_t k = 0; k < z.size(); ++k) {
    using std::exp;
    out[k] = exp(z[k] - mx);
    sum += out[k];
  }
  for (auto& v : out) v = v / sum;
}

inline Matrix probabilities(const Matrix& logits, Squash mode) {
  Matrix p(logits.rows(), logits.cols());
  if (mode == Squash::sigmoid) {
    for (std::size_t i = 0; i < logits.size(); ++i) p.data()[i] = sigmoid(logits.data()[i]);
  } else {
    for (std::size_t r = 0; r < logits.rows(); ++r) softmax_row(logits.row(r), p.row(r));
  }
  return p;
}

// Squash then rescale each row to sum to one (identity for softmax).
inline Matrix normalized_probabilities(const Matrix& logits, Squash mode) {
  Matrix p = probabilities(logits, mode);
  if (mode == Squash::sigmoid) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
      auto row = p.row(r);
      double s = 0.0;
      for (double v : row) s += v;
      for (auto& v : row) v /= s;
    }
  }
  return p;
}

inline Matrix one_hot(std::span<const std::size_t> labels, std::size_t width) {
  Matrix y(labels.size(), width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= width) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside head width " +
                            std::to_string(width));
    }
    y(i, labels[i]) = 1.0;
  }
  return y;
}

// Entropy -sum p ln p of one distribution, with clamped logs.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(clamp_prob(v));
  return h;
}

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()) + ")");
  }
}

// Binary cross-entropy of one logit against a (possibly soft) target and its
// derivative with respect to the logit.
struct BceTerm {
  double value;
  double dz;
};
inline BceTerm bce_term(double z, double y) {
  const double p = sigmoid(z);
  const double q = sigmoid(-z);
  const double value = -y * std::log(clamp_prob(p)) - (1.0 - y) * std::log(clamp_prob(q));
  const double dz = -y * (prob_in_range(p) ? q : 0.0) + (1.0 - y) * (prob_in_range(q) ? p : 0.0);
  return {value, dz};
}
}  // namespace detail

// 0.5 * ||z - target||^2 averaged over the batch.
struct MseLoss {
  Matrix target;

  LossEval evaluate(const Matrix& logits) const {
    detail::require_same_shape(logits, target, "mse loss");
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    LossEval e{0.0, Matrix(logits.rows(), logits.cols())};
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits.data()[i] - target.data()[i];
      e.value += 0.5 * d * d * inv_b;
      e.grad.data()[i] = d * inv_b;
    }
    return e;
  }
};

// Per-sample binary cross-entropy summed over classes.
inline std::vector<double> per_sample_bce(const Matrix& logits, const Matrix& targets) {
  detail::require_same_shape(logits, targets, "bce");
  std::vector<double> out(logits.rows(), 0.0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      out[r] += detail::bce_term(logits(r, k), targets(r, k)).value;
    }
  }
  return out;
}

// Batch mean of (weight_i *) summed per-class sigmoid BCE. Weights, when
// present, are constants: no gradient flows through them.
struct BceLoss {
  Matrix targets;
  std::vector<double> weights;  // empty means all ones

  LossEval evaluate(const Matrix& logits) const {
    detail::require_same_shape(logits, targets, "bce loss");
    if (!weights.empty() && weights.size() != logits.rows()) {
      throw InvalidArgument("bce loss: weight count does not match batch");
    }
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    LossEval e{0.0, Matrix(logits.rows(), logits.cols())};
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const double w = weights.empty() ? 1.0 : weights[r];
      double row = 0.0;
      for (std::size_t k = 0; k < logits.cols(); ++k) {
        const auto t = detail::bce_term(logits(r, k), targets(r, k));
        row += t.value;
        e.grad(r, k) = w * t.dz * inv_b;
      }
      e.value += w * row * inv_b;
    }
    return e;
  }
};

// Softmax cross-entropy, generic over the scalar so the same code runs on
// dual numbers. Uses log-softmax directly, so no clamping is needed.
template <class T>
struct SoftmaxCeEval {
  T value;
  BasicMatrix<T> grad;
};

template <class T>
SoftmaxCeEval<T> softmax_cross_entropy(const BasicMatrix<T>& logits,
                                       std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw InvalidArgument("softmax cross-entropy: label count does not match batch");
  }
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  SoftmaxCeEval<T> e{T(0.0), BasicMatrix<T>(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (labels[r] >= logits.cols()) throw InvalidArgument("softmax cross-entropy: label out of range");
    auto z = logits.row(r);
    T mx = z[0];
    for (const T& v : z) mx = v > mx ? v : mx;
    T sum = T(0.0);
    auto g = e.grad.row(r);
    for (std::size_t k = 0; k < z.size(); ++k) {
      using std::exp;
      g[k] = exp(z[k] - mx);
      sum += g[k];
    }
    using std::log;
    e.value += (log(sum) + mx - z[labels[r]]) * T(inv_b);
    for (std::size_t k = 0; k < z.size(); ++k) {
      g[k] = g[k] / sum;
      if (k == labels[r]) g[k] -= T(1.0);
      g[k] = g[k] * T(inv_b);
    }
  }
  return e;
}

struct SoftmaxCrossEntropyLoss {
  std::vector<std::size_t> labels;

  LossEval evaluate(const Matrix& logits) const {
    auto e = softmax_cross_entropy<double>(logits, labels);
    return {e.value, std::move(e.grad)};
  }
};

// Batch mean of KL(P || target) where P is the student's (renormalized)
// prediction. Target rows must be distributions.
struct RelationDistillationLoss {
  Matrix target;
  Squash squash = Squash::sigmoid;

  LossEval evaluate(const Matrix& logits) const {
    detail::require_same_shape(logits, target, "relation distillation");
    const std::size_t b = logits.rows(), c = logits.cols();
    const double inv_b = 1.0 / static_cast<double>(b);
    LossEval e{0.0, Matrix(b, c)};
    std::vector<double> s(c), p(c), g(c);
    for (std::size_t r = 0; r < b; ++r) {
      auto z = logits.row(r);
      auto y = target.row(r);
      double total = 0.0;
      if (squash == Squash::sigmoid) {
        for (std::size_t k = 0; k < c; ++k) total += (s[k] = sigmoid(z[k]));
        for (std::size_t k = 0; k < c; ++k) p[k] = s[k] / total;
      } else {
        softmax_row<double>(z, p);
      }
      double kl = 0.0, gp = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double lp = std::log(clamp_prob(p[k]));
        kl += p[k] * (lp - std::log(clamp_prob(y[k])));
        g[k] = lp - std::log(clamp_prob(y[k])) + (prob_in_range(p[k]) ? 1.0 : 0.0);
        gp += g[k] * p[k];
      }
      e.value += kl * inv_b;
      for (std::size_t k = 0; k < c; ++k) {
        if (squash == Squash::sigmoid) {
          e.grad(r, k) = (g[k] - gp) / total * s[k] * (1.0 - s[k]) * inv_b;
        } else {
          e.grad(r, k) = p[k] * (g[k] - gp) * inv_b;
        }
      }
    }
    return e;
  }
};

// iCaRL-style distillation: sigmoid BCE of the student's first outputs, one per old class,
// against the old model's sigmoid outputs, summed over old classes.
struct IcarlDistillationLoss {
  Matrix old_probs;  // batch x old classes

  LossEval evaluate(const Matrix& logits) const {
    if (logits.rows() != old_probs.rows() || logits.cols() < old_probs.cols()) {
      throw InvalidArgument("icarl distillation: old outputs do not fit the student head");
    }
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    LossEval e{0.0, Matrix(logits.rows(), logits.cols())};
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      for (std::size_t k = 0; k < old_probs.cols(); ++k) {
        const auto t = detail::bce_term(logits(r, k), old_probs(r, k));
        e.value += t.value * inv_b;
        e.grad(r, k) = t.dz * inv_b;
      }
    }
    return e;
  }
};

template <LogitLoss L>
struct ScaledLoss {
  double factor = 1.0;
  L inner;

  LossEval evaluate(const Matrix& logits) const {
    LossEval e = inner.evaluate(logits);
    e.value *= factor;
    for (auto& g : e.grad.data()) g *= factor;
    return e;
  }
};

// wa * A + wb * B. A zero-weight term is not evaluated.
template <LogitLoss A, LogitLoss B>
struct WeightedSum {
  double wa = 1.0;
  A a;
  double wb = 0.0;
  B b;

  LossEval evaluate(const Matrix& logits) const {
    LossEval out{0.0, Matrix(logits.rows(), logits.cols())};
    const auto add = [&](double w, const auto& term) {
      if (w == 0.0) return;
      LossEval e = term.evaluate(logits);
      out.value += w * e.value;
      for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.data()[i] += w * e.grad.data()[i];
    };
    add(wa, a);
    add(wb, b);
    return out;
  }
};

}  // namespace glfc
