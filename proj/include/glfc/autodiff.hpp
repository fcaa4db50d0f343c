#pragma once

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "glfc/dual.hpp"
#include "glfc/error.hpp"
#include "glfc/model.hpp"
#include "glfc/tensor.hpp"

namespace glfc {

// Activations of a forward pass: entry 0 is the input batch, entry i+1 the
// output of layer i.
template <class T>
struct ForwardCache {
  std::vector<BasicMatrix<T>> activations;

  const BasicMatrix<T>& logits() const { return activations.back(); }
};

template <class T>
struct BackwardResult {
  std::vector<T> params;   // same layout as the model's ParameterVector
  BasicMatrix<T> input;    // empty unless requested
};

namespace detail {

template <class T>
void check_finite(const BasicMatrix<T>& m, std::size_t layer) {
  for (const T& x : m.data()) {
    if (!std::isfinite(value_of(x))) throw NumericError("non-finite activation", layer);
  }
}

template <class T>
BasicMatrix<T> layer_forward(const LayerSpec& l, const Shape& in_shape, const Shape& out_shape,
                             const double* w, const BasicMatrix<T>& x) {
  const std::size_t b = x.rows();
  BasicMatrix<T> y(b, out_shape.size());
  switch (l.kind) {
    case LayerKind::dense: {
      const double* bias = w + l.out * l.in;
      for (std::size_t r = 0; r < b; ++r) {
        auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t o = 0; o < l.out; ++o) {
          const double* wo = w + o * l.in;
          T acc = T(bias[o]);
          for (std::size_t i = 0; i < l.in; ++i) acc += T(wo[i]) * xr[i];
          yr[o] = acc;
        }
      }
      break;
    }
    case LayerKind::conv2d: {
      const std::size_t k = l.kernel, H = in_shape.height, W = in_shape.width;
      const std::size_t OH = out_shape.height, OW = out_shape.width;
      const double* bias = w + l.out * l.in * k * k;
      for (std::size_t r = 0; r < b; ++r) {
        auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t oc = 0; oc < l.out; ++oc) {
          for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
              T acc = T(bias[oc]);
              for (std::size_t ic = 0; ic < l.in; ++ic) {
                const double* wk = w + ((oc * l.in + ic) * k) * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    acc += T(wk[ky * k + kx]) * xr[(ic * H + oy + ky) * W + ox + kx];
                  }
                }
              }
              yr[(oc * OH + oy) * OW + ox] = acc;
            }
          }
        }
      }
      break;
    }
    case LayerKind::relu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        y.data()[i] = x.data()[i] > T(0.0) ? x.data()[i] : T(0.0);
      }
      break;
    case LayerKind::flatten:
      y.data() = x.data();
      break;
    case LayerKind::mean_pool: {
      const std::size_t k = l.kernel, H = in_shape.height, W = in_shape.width;
      const std::size_t OH = out_shape.height, OW = out_shape.width;
      const double inv = 1.0 / static_cast<double>(k * k);
      for (std::size_t r = 0; r < b; ++r) {
        auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t c = 0; c < in_shape.channels; ++c) {
          for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
              T acc = T(0.0);
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  acc += xr[(c * H + oy * k + ky) * W + ox * k + kx];
                }
              }
              yr[(c * OH + oy) * OW + ox] = acc * T(inv);
            }
          }
        }
      }
      break;
    }
  }
  return y;
}

// Given dL/dy for one layer, accumulates parameter gradients into `gw` and
// returns dL/dx (skipped when `need_input` is false).
template <class T>
BasicMatrix<T> layer_backward(const LayerSpec& l, const Shape& in_shape, const Shape& out_shape,
                              const double* w, const BasicMatrix<T>& x, const BasicMatrix<T>& dy,
                              T* gw, bool need_input) {
  const std::size_t b = x.rows();
  BasicMatrix<T> dx;
  if (need_input) dx = BasicMatrix<T>(b, in_shape.size());
  switch (l.kind) {
    case LayerKind::dense: {
      T* gbias = gw + l.out * l.in;
      for (std::size_t r = 0; r < b; ++r) {
        auto xr = x.row(r);
        auto dyr = dy.row(r);
        for (std::size_t o = 0; o < l.out; ++o) {
          const T g = dyr[o];
          gbias[o] += g;
          T* gwo = gw + o * l.in;
          for (std::size_t i = 0; i < l.in; ++i) gwo[i] += g * xr[i];
          if (need_input) {
            auto dxr = dx.row(r);
            const double* wo = w + o * l.in;
            for (std::size_t i = 0; i < l.in; ++i) dxr[i] += g * T(wo[i]);
          }
        }
      }
      break;
    }
    case LayerKind::conv2d: {
      const std::size_t k = l.kernel, H = in_shape.height, W = in_shape.width;
      const std::size_t OH = out_shape.height, OW = out_shape.width;
      T* gbias = gw + l.out * l.in * k * k;
      for (std::size_t r = 0; r < b; ++r) {
        auto xr = x.row(r);
        auto dyr = dy.row(r);
        for (std::size_t oc = 0; oc < l.out; ++oc) {
          for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const T g = dyr[(oc * OH + oy) * OW + ox];
              gbias[oc] += g;
              for (std::size_t ic = 0; ic < l.in; ++ic) {
                const std::size_t wbase = ((oc * l.in + ic) * k) * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::size_t xi = (ic * H + oy + ky) * W + ox + kx;
                    gw[wbase + ky * k + kx] += g * xr[xi];
                    if (need_input) dx(r, xi) += g * T(w[wbase + ky * k + kx]);
                  }
                }
              }
            }
          }
        }
      }
      break;
    }
    case LayerKind::relu:
      if (need_input) {
        for (std::size_t i = 0; i < x.size(); ++i) {
          dx.data()[i] = x.data()[i] > T(0.0) ? dy.data()[i] : T(0.0);
        }
      }
      break;
    case LayerKind::flatten:
      if (need_input) dx.data() = dy.data();
      break;
    case LayerKind::mean_pool:
      if (need_input) {
        const std::size_t k = l.kernel, H = in_shape.height, W = in_shape.width;
        const std::size_t OH = out_shape.height, OW = out_shape.width;
        const double inv = 1.0 / static_cast<double>(k * k);
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t c = 0; c < in_shape.channels; ++c) {
            for (std::size_t oy = 0; oy < OH; ++oy) {
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const T g = dy(r, (c * OH + oy) * OW + ox) * T(inv);
                for (std::size_t ky = 0; ky < k; ++ky) {
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    dx(r, (c * H + oy * k + ky) * W + ox * k + kx) += g;
                  }
                }
              }
            }
          }
        }
      }
      break;
  }
  return dx;
}

inline const double* layer_weights(const ModelInstance& m, std::size_t layer) {
  for (const auto& pb : m.spec.layout()) {
    if (pb.layer == layer) return m.params.values().data() + pb.offset;
  }
  return nullptr;
}

inline std::ptrdiff_t layer_offset(const ModelSpec& spec, std::size_t layer) {
  for (const auto& pb : spec.layout()) {
    if (pb.layer == layer) return static_cast<std::ptrdiff_t>(pb.offset);
  }
  return -1;
}

}  // namespace detail

// Full forward pass keeping every activation. `head_offset`, when given, is
// added to the input of the final layer (the latent feature), which is how
// feature-space noise is injected.
template <class T>
ForwardCache<T> forward_cached(const ModelInstance& model, const BasicMatrix<T>& batch,
                               const BasicMatrix<T>* head_offset = nullptr) {
  const ModelSpec& spec = model.spec;
  if (batch.cols() != spec.input_size()) {
    throw InvalidArgument("batch width " + std::to_string(batch.cols()) +
                          " does not match model input " + to_string(spec.input_shape()));
  }
  ForwardCache<T> cache;
  cache.activations.reserve(spec.layer_count() + 1);
  cache.activations.push_back(batch);
  const std::size_t L = spec.layer_count();
  for (std::size_t i = 0; i < L; ++i) {
    if (i + 1 == L && head_offset != nullptr) {
      auto& feat = cache.activations.back();
      if (head_offset->rows() != feat.rows() || head_offset->cols() != feat.cols()) {
        throw InvalidArgument("head offset shape does not match the latent feature");
      }
      for (std::size_t j = 0; j < feat.size(); ++j) feat.data()[j] += head_offset->data()[j];
    }
    auto out = detail::layer_forward(spec.layers()[i], spec.input_shape_of(i),
                                     spec.output_shape(i), detail::layer_weights(model, i),
                                     cache.activations.back());
    detail::check_finite(out, i);
    cache.activations.push_back(std::move(out));
  }
  return cache;
}

// Reverse pass from dL/dlogits. Parameter gradients follow the model layout.
template <class T>
BackwardResult<T> backward(const ModelInstance& model, const ForwardCache<T>& cache,
                           BasicMatrix<T> dlogits, bool want_input) {
  const ModelSpec& spec = model.spec;
  BackwardResult<T> res;
  res.params.assign(spec.param_count(), T(0.0));
  BasicMatrix<T> grad = std::move(dlogits);
  for (std::size_t i = spec.layer_count(); i-- > 0;) {
    const auto off = detail::layer_offset(spec, i);
    T* gw = off >= 0 ? res.params.data() + off : nullptr;
    const bool need_input = want_input || i > 0;
    grad = detail::layer_backward(spec.layers()[i], spec.input_shape_of(i), spec.output_shape(i),
                                  detail::layer_weights(model, i), cache.activations[i], grad,
                                  gw, need_input);
  }
  if (want_input) res.input = std::move(grad);
  return res;
}

inline Matrix forward(const ModelInstance& model, const Matrix& batch) {
  return forward_cached(model, batch).activations.back();
}

// Latent feature: the input of the final layer.
inline Matrix embed(const ModelInstance& model, const Matrix& batch) {
  if (model.spec.layer_count() < 2) {
    throw InvalidArgument("embed: single-layer model has no latent feature");
  }
  auto cache = forward_cached(model, batch);
  return cache.activations[model.spec.layer_count() - 1];
}

// Value of a scalar loss and its gradient with respect to the logits.
struct LossEval {
  double value = 0.0;
  Matrix grad;
};

template <class L>
concept LogitLoss = requires(const L& loss, const Matrix& logits) {
  { loss.evaluate(logits) } -> std::convertible_to<LossEval>;
};

namespace detail {
inline void check_loss(const LossEval& e, const ModelSpec& spec) {
  if (!std::isfinite(e.value)) throw NumericError("non-finite loss", spec.layer_count());
}
}  // namespace detail

struct ParamGradient {
  double loss = 0.0;
  GradientVector grad;
};

template <LogitLoss L>
ParamGradient param_gradient(const ModelInstance& model, const Matrix& batch, const L& loss) {
  auto cache = forward_cached(model, batch);
  LossEval e = loss.evaluate(cache.logits());
  detail::check_loss(e, model.spec);
  auto res = backward(model, cache, std::move(e.grad), false);
  return {e.value, GradientVector(model.spec.layout(), std::move(res.params))};
}

struct InputGradient {
  double loss = 0.0;
  Matrix grad;
};

template <LogitLoss L>
InputGradient input_gradient(const ModelInstance& model, const Matrix& input, const L& loss,
                             const Matrix* head_offset = nullptr) {
  auto cache = forward_cached(model, input, head_offset);
  LossEval e = loss.evaluate(cache.logits());
  detail::check_loss(e, model.spec);
  auto res = backward(model, cache, std::move(e.grad), true);
  return {e.value, std::move(res.input)};
}

template <LogitLoss L>
double loss_value(const ModelInstance& model, const Matrix& batch, const L& loss,
                  const Matrix* head_offset = nullptr) {
  auto cache = forward_cached(model, batch, head_offset);
  return loss.evaluate(cache.logits()).value;
}

// params - lr * grad; returns a new vector.
inline ParameterVector sgd_step(const ParameterVector& params, const GradientVector& grad,
                                double lr) {
  require_same_layout(params, grad, "sgd_step");
  if (!(lr >= 0.0)) throw InvalidArgument("sgd_step: learning rate must be nonnegative");
  std::vector<double> out(params.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grad.values()[i];
  return {params.layout(), std::move(out)};
}

inline ModelInstance with_params(const ModelInstance& model, ParameterVector params) {
  return {model.spec, std::move(params)};
}

}  // namespace glfc
