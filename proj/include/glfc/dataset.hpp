#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glfc/error.hpp"
#include "glfc/random.hpp"
#include "glfc/tensor.hpp"

namespace glfc {

// `index` is the sample's row in its source split; memory checkpoints refer
// to samples by it.
struct LabeledSample {
  std::vector<double> features;
  std::size_t label = 0;
  std::size_t index = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset {
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

inline Matrix stack_features(std::span<const LabeledSample> samples) {
  if (samples.empty()) return {};
  Matrix m(samples.size(), samples.front().features.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != m.cols()) throw InvalidArgument("ragged sample features");
    std::copy(samples[i].features.begin(), samples[i].features.end(), m.row(i).begin());
  }
  return m;
}

inline std::vector<std::size_t> stack_labels(std::span<const LabeledSample> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

inline std::map<std::size_t, std::vector<LabeledSample>> group_by_class(
    std::span<const LabeledSample> samples) {
  std::map<std::size_t, std::vector<LabeledSample>> out;
  for (const auto& s : samples) out[s.label].push_back(s);
  return out;
}

struct BlobConfig {
  std::size_t num_classes = 6;
  std::size_t dim = 16;
  std::size_t train_per_class = 60;
  std::size_t test_per_class = 40;
  double separation = 1.0;  // stddev of class centres
  double noise = 1.0;       // within-class stddev
  std::uint64_t seed = 7;

  friend bool operator==(const BlobConfig&, const BlobConfig&) = default;
};

// Isotropic Gaussian classes around N(0, separation^2) centres.
inline Dataset make_blobs(const BlobConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.dim == 0) throw InvalidArgument("blobs: empty geometry");
  Dataset ds;
  ds.input_shape = {cfg.dim, 1, 1};
  ds.num_classes = cfg.num_classes;
  Rng centre_rng = make_rng(cfg.seed, {0xb10b});
  std::vector<std::vector<double>> centres;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    centres.push_back(draw_normal_vector(centre_rng, cfg.dim, 0.0, cfg.separation));
  }
  const auto fill = [&](std::vector<LabeledSample>& out, std::size_t per_class, std::uint64_t tag) {
    Rng rng = make_rng(cfg.seed, {tag});
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        LabeledSample s{draw_normal_vector(rng, cfg.dim, 0.0, cfg.noise), c, out.size()};
        for (std::size_t d = 0; d < cfg.dim; ++d) s.features[d] += centres[c][d];
        out.push_back(std::move(s));
      }
    }
  };
  fill(ds.train, cfg.train_per_class, 0x7a1);
  fill(ds.test, cfg.test_per_class, 0x7e5);
  return ds;
}

// Rows of `label, f_1, ..., f_d`. Blank lines and lines starting with '#'
// are skipped. Features are multiplied by `scale`.
inline std::vector<LabeledSample> read_samples_csv(std::istream& in, double scale = 1.0) {
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw InvalidArgument("csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (values.size() < 2) throw InvalidArgument("csv line " + std::to_string(line_no) + ": no features");
    if (width == 0) width = values.size();
    if (values.size() != width) throw InvalidArgument("csv line " + std::to_string(line_no) + ": ragged row");
    const double label = values.front();
    if (label < 0 || label != static_cast<double>(static_cast<std::size_t>(label))) {
      throw InvalidArgument("csv line " + std::to_string(line_no) + ": label must be a nonnegative integer");
    }
    LabeledSample s;
    s.label = static_cast<std::size_t>(label);
    s.index = out.size();
    s.features.assign(values.begin() + 1, values.end());
    for (auto& f : s.features) f *= scale;
    out.push_back(std::move(s));
  }
  return out;
}

// Loads a CSV corpus and splits each class into train/test with a seeded
// shuffle; `test_fraction` of every class goes to the test split.
inline Dataset load_csv_dataset(const std::string& path, Shape input_shape, double test_fraction,
                                std::uint64_t seed, double scale = 1.0) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset " + path);
  auto all = read_samples_csv(in, scale);
  if (all.empty()) throw InvalidArgument("dataset " + path + " is empty");
  if (input_shape.size() == 0) input_shape = {all.front().features.size(), 1, 1};
  if (input_shape.size() != all.front().features.size()) {
    throw InvalidArgument("dataset feature width does not match the declared input shape");
  }
  Dataset ds;
  ds.input_shape = input_shape;
  for (const auto& s : all) ds.num_classes = std::max(ds.num_classes, s.label + 1);
  auto groups = group_by_class(all);
  Rng rng = make_rng(seed, {0xc5f});
  for (auto& [label, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto& split = i < n_test ? ds.test : ds.train;
      LabeledSample s = members[i];
      s.index = split.size();
      split.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace glfc
