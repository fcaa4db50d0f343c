#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glfc/error.hpp"
#include "glfc/random.hpp"
#include "glfc/tensor.hpp"

namespace glfc {

enum class LayerKind { dense, conv2d, relu, flatten, mean_pool };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::mean_pool: return "mean_pool";
  }
  return "?";
}

// One layer descriptor. Fields unused by a kind stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;      // dense: input width; conv2d: input channels
  std::size_t out = 0;     // dense: output width; conv2d: output channels
  std::size_t kernel = 0;  // conv2d: square kernel size; mean_pool: window

  static LayerSpec dense(std::size_t in, std::size_t out) {
    return {LayerKind::dense, in, out, 0};
  }
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel) {
    return {LayerKind::conv2d, in_channels, out_channels, kernel};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0}; }
  static LayerSpec mean_pool(std::size_t window) {
    return {LayerKind::mean_pool, 0, 0, window};
  }

  bool has_params() const noexcept {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Parameters of one layer: weights (row-major, `weight_shape`) followed by
// `bias_size` biases, starting at `offset` in the flat vector.
struct ParamBlock {
  std::size_t layer = 0;
  std::size_t offset = 0;
  std::vector<std::size_t> weight_shape;
  std::size_t bias_size = 0;

  std::size_t weight_count() const {
    return std::accumulate(weight_shape.begin(), weight_shape.end(), std::size_t{1},
                           std::multiplies<>());
  }
  std::size_t size() const { return weight_count() + bias_size; }

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

using Layout = std::vector<ParamBlock>;

inline std::size_t layout_size(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& b : layout) n += b.size();
  return n;
}

// Architecture descriptor. Construction validates that adjacent layer shapes
// compose; output_width() is the flattened size of the final layer output.
class ModelSpec {
 public:
  ModelSpec() = default;
  ModelSpec(Shape input, std::vector<LayerSpec> layers)
      : input_(input), layers_(std::move(layers)) {
    if (input_.size() == 0) throw InvalidArgument("model input shape is empty");
    if (layers_.empty()) throw InvalidArgument("model has no layers");
    shapes_.reserve(layers_.size() + 1);
    shapes_.push_back(input_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      shapes_.push_back(propagate(layers_[i], shapes_.back(), i));
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.kind == LayerKind::dense) {
        layout_.push_back({i, offset, {l.out, l.in}, l.out});
      } else if (l.kind == LayerKind::conv2d) {
        layout_.push_back({i, offset, {l.out, l.in, l.kernel, l.kernel}, l.out});
      } else {
        continue;
      }
      offset += layout_.back().size();
    }
  }

  const Shape& input_shape() const noexcept { return input_; }
  std::size_t input_size() const noexcept { return input_.size(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  // Output shape of layer i (i = 0 is the first layer).
  const Shape& output_shape(std::size_t i) const { return shapes_.at(i + 1); }
  const Shape& input_shape_of(std::size_t i) const { return shapes_.at(i); }
  std::size_t output_width() const { return shapes_.back().size(); }
  const Layout& layout() const noexcept { return layout_; }
  std::size_t param_count() const { return layout_size(layout_); }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.input_ == b.input_ && a.layers_ == b.layers_;
  }

 private:
  static Shape propagate(const LayerSpec& l, const Shape& in, std::size_t index) {
    const auto fail = [&](const std::string& why) {
      return InvalidArgument("layer " + std::to_string(index) + " (" + to_string(l.kind) +
                             "): " + why + ", input " + to_string(in));
    };
    switch (l.kind) {
      case LayerKind::dense:
        if (l.in != in.size()) throw fail("dense input width " + std::to_string(l.in));
        if (l.out == 0) throw fail("dense output width is zero");
        return {l.out, 1, 1};
      case LayerKind::conv2d:
        if (l.in != in.channels) throw fail("conv2d input channels " + std::to_string(l.in));
        if (l.out == 0 || l.kernel == 0 || l.kernel > in.height || l.kernel > in.width) {
          throw fail("bad conv2d geometry");
        }
        return {l.out, in.height - l.kernel + 1, in.width - l.kernel + 1};
      case LayerKind::relu:
        return in;
      case LayerKind::flatten:
        return {in.size(), 1, 1};
      case LayerKind::mean_pool:
        if (l.kernel == 0 || in.height % l.kernel != 0 || in.width % l.kernel != 0) {
          throw fail("pool window must divide spatial size");
        }
        return {in.channels, in.height / l.kernel, in.width / l.kernel};
    }
    throw fail("unknown layer kind");
  }

  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  Layout layout_;
};

// Flat real vector carrying a per-layer layout. Tagged so that parameters and
// gradients cannot be mixed up at call sites.
template <class Tag>
class FlatVector {
 public:
  FlatVector() = default;
  explicit FlatVector(Layout layout)
      : layout_(std::move(layout)), values_(layout_size(layout_), 0.0) {}
  FlatVector(Layout layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_size(layout_)) {
      throw InvalidArgument("flat vector length " + std::to_string(values_.size()) +
                            " does not match layout size " +
                            std::to_string(layout_size(layout_)));
    }
  }

  const Layout& layout() const noexcept { return layout_; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> block(std::size_t b) {
    const auto& pb = layout_.at(b);
    return {values_.data() + pb.offset, pb.size()};
  }
  std::span<const double> block(std::size_t b) const {
    const auto& pb = layout_.at(b);
    return {values_.data() + pb.offset, pb.size()};
  }
  std::span<const double> weights(std::size_t b) const { return block(b).first(layout_[b].weight_count()); }
  std::span<const double> bias(std::size_t b) const { return block(b).last(layout_[b].bias_size); }

  friend bool operator==(const FlatVector&, const FlatVector&) = default;

 private:
  Layout layout_;
  std::vector<double> values_;
};

struct ParameterTag {};
struct GradientTag {};
using ParameterVector = FlatVector<ParameterTag>;
using GradientVector = FlatVector<GradientTag>;

template <class A, class B>
void require_same_layout(const FlatVector<A>& a, const FlatVector<B>& b, const char* what) {
  if (a.layout() != b.layout()) throw InvalidArgument(std::string(what) + ": layout mismatch");
}

struct ModelInstance {
  ModelSpec spec;
  ParameterVector params;

  ModelInstance() = default;
  ModelInstance(ModelSpec s, ParameterVector p) : spec(std::move(s)), params(std::move(p)) {
    if (params.layout() != spec.layout()) {
      throw InvalidArgument("parameters do not conform to the model layout");
    }
  }

  std::size_t output_width() const { return spec.output_width(); }

  friend bool operator==(const ModelInstance&, const ModelInstance&) = default;
};

inline ModelInstance zero_model(const ModelSpec& spec) {
  return {spec, ParameterVector(spec.layout())};
}

// He-normal weights, zero biases.
inline ModelInstance init_model(const ModelSpec& spec, std::uint64_t seed) {
  ParameterVector p(spec.layout());
  Rng rng = make_rng(seed, {0x1417});
  for (std::size_t b = 0; b < spec.layout().size(); ++b) {
    const auto& pb = spec.layout()[b];
    const std::size_t fan_in = pb.weight_count() / pb.weight_shape.front();
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto blk = p.block(b);
    for (std::size_t i = 0; i < pb.weight_count(); ++i) blk[i] = draw_normal(rng, 0.0, stddev);
  }
  return {spec, std::move(p)};
}

// Multi-layer perceptron: dense/relu pairs, then a dense head.
inline ModelSpec mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t output_width) {
  std::vector<LayerSpec> layers;
  std::size_t prev = input_dim;
  for (std::size_t h : hidden) {
    layers.push_back(LayerSpec::dense(prev, h));
    layers.push_back(LayerSpec::relu());
    prev = h;
  }
  layers.push_back(LayerSpec::dense(prev, output_width));
  return {Shape{input_dim, 1, 1}, std::move(layers)};
}

// Two valid 3x3 convolutions with ReLU, one 2x2 mean pool, dense head.
inline ModelSpec mini_cnn_spec(Shape image, std::size_t channels, std::size_t output_width) {
  std::vector<LayerSpec> layers{
      LayerSpec::conv2d(image.channels, channels, 3), LayerSpec::relu(),
      LayerSpec::conv2d(channels, channels, 3),       LayerSpec::relu(),
      LayerSpec::mean_pool(2),                         LayerSpec::flatten()};
  ModelSpec probe(image, layers);
  const std::size_t flat = probe.output_width();
  layers.push_back(LayerSpec::dense(flat, output_width));
  return {image, std::move(layers)};
}

// Standard deviation of freshly added head rows (variance 0.01).
inline constexpr double kHeadInitStddev = 0.1;

// Appends `added_classes` output rows to the final dense layer. Existing rows
// and biases are copied bit-exactly; new weights are seeded normals, new
// biases zero.
inline ModelInstance expand_head(const ModelInstance& model, std::size_t added_classes,
                                 std::uint64_t seed) {
  if (added_classes == 0) throw InvalidArgument("expand_head: added_classes must be >= 1");
  const auto& layers = model.spec.layers();
  if (layers.back().kind != LayerKind::dense) {
    throw InvalidArgument("expand_head: final layer is not dense");
  }
  std::vector<LayerSpec> grown = layers;
  grown.back().out += added_classes;
  ModelSpec spec(model.spec.input_shape(), std::move(grown));

  ParameterVector p(spec.layout());
  const std::size_t last = spec.layout().size() - 1;
  for (std::size_t b = 0; b < last; ++b) {
    auto src = model.params.block(b);
    std::copy(src.begin(), src.end(), p.block(b).begin());
  }
  const std::size_t in = layers.back().in;
  const std::size_t old_out = layers.back().out;
  auto src = model.params.block(last);
  auto dst = p.block(last);
  std::copy(src.begin(), src.begin() + old_out * in, dst.begin());
  Rng rng = make_rng(seed, {0xe4a, added_classes});
  for (std::size_t i = old_out * in; i < (old_out + added_classes) * in; ++i) {
    dst[i] = draw_normal(rng, 0.0, kHeadInitStddev);
  }
  const std::size_t new_bias = (old_out + added_classes) * in;
  std::copy(src.begin() + old_out * in, src.end(), dst.begin() + new_bias);
  return {std::move(spec), std::move(p)};
}

// Keeps the first `width` output rows of the final dense layer.
inline ModelInstance truncate_head(const ModelInstance& model, std::size_t width) {
  const auto& layers = model.spec.layers();
  if (layers.back().kind != LayerKind::dense) {
    throw InvalidArgument("truncate_head: final layer is not dense");
  }
  if (width == 0 || width > layers.back().out) throw InvalidArgument("truncate_head: bad width");
  if (width == layers.back().out) return model;
  std::vector<LayerSpec> cut = layers;
  cut.back().out = width;
  ModelSpec spec(model.spec.input_shape(), std::move(cut));
  ParameterVector p(spec.layout());
  const std::size_t last = spec.layout().size() - 1;
  for (std::size_t b = 0; b < last; ++b) {
    auto src = model.params.block(b);
    std::copy(src.begin(), src.end(), p.block(b).begin());
  }
  const std::size_t in = layers.back().in;
  const std::size_t old_out = layers.back().out;
  auto src = model.params.block(last);
  auto dst = p.block(last);
  std::copy(src.begin(), src.begin() + width * in, dst.begin());
  std::copy(src.begin() + old_out * in, src.begin() + old_out * in + width, dst.begin() + width * in);
  return {std::move(spec), std::move(p)};
}

}  // namespace glfc
