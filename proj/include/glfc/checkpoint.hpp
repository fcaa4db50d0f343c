#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glfc/model.hpp"
#include "glfc/prototype.hpp"
#include "glfc/stream.hpp"

namespace glfc {

using json = nlohmann::json;

namespace detail {

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::flatten,
                 LayerKind::mean_pool}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidArgument("unknown layer kind '" + s + "'");
}

inline void require_format(const json& j, const char* format) {
  if (!j.is_object() || j.value("format", std::string()) != format) {
    throw InvalidArgument(std::string("checkpoint is not a ") + format + " document");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model spec and parameters

inline json to_json(const Shape& s) { return json::array({s.channels, s.height, s.width}); }

inline Shape shape_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("shape must be [channels, height, width]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

inline json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers()) {
    json e{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
      e["in"] = l.in;
      e["out"] = l.out;
    }
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::mean_pool) e["kernel"] = l.kernel;
    layers.push_back(std::move(e));
  }
  return {{"input", to_json(spec.input_shape())}, {"layers", std::move(layers)}};
}

inline ModelSpec spec_from_json(const json& j) {
  std::vector<LayerSpec> layers;
  for (const auto& e : j.at("layers")) {
    LayerSpec l;
    l.kind = detail::layer_kind_from_string(e.at("kind").get<std::string>());
    l.in = e.value("in", std::size_t{0});
    l.out = e.value("out", std::size_t{0});
    l.kernel = e.value("kernel", std::size_t{0});
    layers.push_back(l);
  }
  return ModelSpec(shape_from_json(j.at("input")), std::move(layers));
}

inline json layout_to_json(const Layout& layout) {
  json out = json::array();
  for (const auto& b : layout) {
    out.push_back({{"layer", b.layer}, {"offset", b.offset}, {"weight_shape", b.weight_shape},
                   {"bias_size", b.bias_size}});
  }
  return out;
}

// Doubles are written in shortest round-trip form, so parsing restores them
// bit for bit.
inline json to_json(const ModelInstance& model) {
  return {{"format", "glfc-model/1"},
          {"spec", to_json(model.spec)},
          {"layout", layout_to_json(model.spec.layout())},
          {"values", model.params.values()}};
}

inline ModelInstance model_from_json(const json& j) {
  detail::require_format(j, "glfc-model/1");
  ModelSpec spec = spec_from_json(j.at("spec"));
  if (j.contains("layout") && j.at("layout") != layout_to_json(spec.layout())) {
    throw InvalidArgument("model checkpoint layout does not match its spec");
  }
  return {spec, ParameterVector(spec.layout(), j.at("values").get<std::vector<double>>())};
}

inline constexpr char kModelMagic[8] = {'G', 'L', 'F', 'C', 'M', 'D', 'L', '1'};

// Binary checkpoint: magic, u64 header length, JSON spec header, u64 value
// count, raw little-endian IEEE doubles.
inline void write_model_binary(std::ostream& out, const ModelInstance& model) {
  static_assert(std::endian::native == std::endian::little, "binary checkpoints assume little endian");
  const std::string header = to_json(model.spec).dump();
  const std::uint64_t hlen = header.size();
  const std::uint64_t n = model.params.size();
  out.write(kModelMagic, sizeof kModelMagic);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(model.params.values().data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw InvalidArgument("failed to write binary model checkpoint");
}

inline ModelInstance read_model_binary(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0) {
    throw InvalidArgument("not a binary model checkpoint");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen > (1u << 24)) throw InvalidArgument("corrupt binary checkpoint header");
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  ModelSpec spec = spec_from_json(json::parse(header));
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n != spec.param_count()) throw InvalidArgument("binary checkpoint value count mismatch");
  std::vector<double> values(n);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw InvalidArgument("truncated binary model checkpoint");
  return {spec, ParameterVector(spec.layout(), std::move(values))};
}

// ---------------------------------------------------------------------------
// Gradient packets: one entry per parameter tensor, (layer, shape, values).

inline json to_json(const GradientPacket& packet) {
  json blocks = json::array();
  const auto& layout = packet.grad.layout();
  for (std::size_t b = 0; b < layout.size(); ++b) {
    const auto block = packet.grad.block(b);
    const auto nw = layout[b].weight_count();
    blocks.push_back({{"layer", layout[b].layer},
                      {"param", "weight"},
                      {"shape", layout[b].weight_shape},
                      {"values", std::vector<double>(block.begin(), block.begin() + nw)}});
    blocks.push_back({{"layer", layout[b].layer},
                      {"param", "bias"},
                      {"shape", json::array({layout[b].bias_size})},
                      {"values", std::vector<double>(block.begin() + nw, block.end())}});
  }
  return {{"format", "glfc-gradient-packet/1"}, {"blocks", std::move(blocks)}};
}

inline GradientPacket packet_from_json(const json& j) {
  detail::require_format(j, "glfc-gradient-packet/1");
  const auto& blocks = j.at("blocks");
  if (blocks.size() % 2 != 0) throw InvalidArgument("gradient packet blocks must come in weight/bias pairs");
  Layout layout;
  std::vector<double> values;
  for (std::size_t i = 0; i < blocks.size(); i += 2) {
    const auto& w = blocks[i];
    const auto& b = blocks[i + 1];
    if (w.at("param") != "weight" || b.at("param") != "bias" || w.at("layer") != b.at("layer")) {
      throw InvalidArgument("gradient packet blocks out of order");
    }
    ParamBlock pb{w.at("layer").get<std::size_t>(), values.size(),
                  w.at("shape").get<std::vector<std::size_t>>(),
                  b.at("shape").at(0).get<std::size_t>()};
    const auto wv = w.at("values").get<std::vector<double>>();
    const auto bv = b.at("values").get<std::vector<double>>();
    if (wv.size() != pb.weight_count() || bv.size() != pb.bias_size) {
      throw InvalidArgument("gradient packet block size does not match its shape");
    }
    values.insert(values.end(), wv.begin(), wv.end());
    values.insert(values.end(), bv.begin(), bv.end());
    layout.push_back(std::move(pb));
  }
  return {GradientVector(std::move(layout), std::move(values))};
}

// ---------------------------------------------------------------------------
// Exemplar memory: class -> sample indices into the training split.

inline json to_json(const ExemplarMemory& memory) {
  json classes = json::object();
  for (const auto& [c, v] : memory.per_class) {
    std::vector<std::size_t> idx;
    idx.reserve(v.size());
    for (const auto& s : v) idx.push_back(s.index);
    classes[std::to_string(c)] = std::move(idx);
  }
  return {{"format", "glfc-memory/1"}, {"capacity", memory.capacity}, {"classes", std::move(classes)}};
}

// `pool` must hold each referenced sample at position == its index.
inline ExemplarMemory memory_from_json(const json& j, std::span<const LabeledSample> pool) {
  detail::require_format(j, "glfc-memory/1");
  ExemplarMemory m;
  m.capacity = j.at("capacity").get<std::size_t>();
  for (const auto& [key, idx] : j.at("classes").items()) {
    const std::size_t c = std::stoul(key);
    auto& list = m.per_class[c];
    for (std::size_t i : idx.get<std::vector<std::size_t>>()) {
      if (i >= pool.size() || pool[i].index != i) {
        throw InvalidArgument("memory checkpoint index " + std::to_string(i) + " not in the pool");
      }
      if (pool[i].label != c) throw InvalidArgument("memory checkpoint sample has the wrong class");
      list.push_back(pool[i]);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Proxy evaluation set

inline json to_json(const ReconstructedSample& s) {
  return {{"label", s.label}, {"residual", s.residual}, {"initial_residual", s.initial_residual},
          {"features", s.features}};
}

inline json eval_set_to_json(const ProxyState& proxy) {
  json samples = json::array();
  for (const auto& s : proxy.eval_set) samples.push_back(to_json(s));
  return {{"format", "glfc-eval-set/1"},
          {"task", proxy.task},
          {"best_accuracy", proxy.best && !proxy.unvalidated ? json(proxy.best_accuracy) : json(nullptr)},
          {"dropped_packets", proxy.dropped_packets},
          {"samples", std::move(samples)}};
}

inline std::vector<ReconstructedSample> eval_set_from_json(const json& j) {
  detail::require_format(j, "glfc-eval-set/1");
  std::vector<ReconstructedSample> out;
  for (const auto& e : j.at("samples")) {
    out.push_back({e.at("features").get<std::vector<double>>(), e.at("label").get<std::size_t>(),
                   e.at("residual").get<double>(), e.at("initial_residual").get<double>()});
  }
  return out;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return json::parse(in);
}

}  // namespace glfc
