#include <gtest/gtest.h>

#include <sstream>

#include "glfc/glfc.hpp"
#include "oracles.hpp"

using namespace glfc;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

Matrix row_matrix(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

}  // namespace

TEST(Tensor, MatrixRowsAreContiguous) {
  Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(to_vec(m.row(1)), (std::vector<double>{4, 5, 6}));
}

TEST(Random, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = make_rng(5, {1, 2}), b = make_rng(5, {1, 2}), c = make_rng(5, {2, 1});
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  Rng r = make_rng(9);
  auto s = sample_without_replacement(10, 4, r);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::unique(s.begin(), s.end()), s.end());
  EXPECT_EQ(s.size(), 4u);
}

TEST(Model, LayoutCountsWeightsAndBiases) {
  const ModelSpec spec = mlp_spec(5, {7}, 3);
  ASSERT_EQ(spec.layout().size(), 2u);
  EXPECT_EQ(spec.param_count(), 5u * 7 + 7 + 7 * 3 + 3);
  EXPECT_EQ(spec.output_width(), 3u);
}

TEST(Model, RejectsIncompatibleLayers) {
  EXPECT_THROW(ModelSpec(Shape{4}, {LayerSpec::dense(5, 2)}), InvalidArgument);
  EXPECT_THROW(ModelSpec(Shape{1, 2, 2}, {LayerSpec::conv2d(1, 2, 3)}), InvalidArgument);
}

TEST(Forward, DenseReluMatchesNaiveLoops) {
  const ModelInstance m = init_model(mlp_spec(4, {6}, 3), 11);
  Rng rng = make_rng(1);
  const auto x = draw_normal_vector(rng, 4);
  const auto h = oracle::relu(oracle::dense(to_vec(m.params.weights(0)), to_vec(m.params.bias(0)), x));
  const auto z = oracle::dense(to_vec(m.params.weights(1)), to_vec(m.params.bias(1)), h);
  const Matrix got = forward(m, row_matrix(x));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got(0, k), z[k], 1e-12);
  const Matrix e = embed(m, row_matrix(x));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(e(0, k), h[k], 1e-12);
}

TEST(Forward, ConvolutionMatchesNaiveLoops) {
  const ModelSpec spec(Shape{2, 5, 4}, {LayerSpec::conv2d(2, 3, 3), LayerSpec::flatten()});
  ModelInstance m = init_model(spec, 4);
  Rng rng = make_rng(2);
  for (auto& b : m.params.block(0).last(3)) b = draw_normal(rng);
  const auto x = draw_normal_vector(rng, 40);
  const auto want = oracle::conv2d(x, 2, 5, 4, to_vec(m.params.weights(0)), to_vec(m.params.bias(0)), 3);
  const Matrix got = forward(m, row_matrix(x));
  ASSERT_EQ(got.cols(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got(0, i), want[i], 1e-12);
}

TEST(Backward, ParameterGradientMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelInstance m = init_model(mini_cnn_spec(Shape{1, 6, 6}, 2, 4), seed);
    Rng rng = make_rng(seed, {3});
    Matrix x(3, 36);
    for (auto& v : x.data()) v = draw_normal(rng);
    const std::vector<std::size_t> labels{0, 3, 1};
    const BceLoss loss{one_hot(labels, 4), {}};
    const auto g = param_gradient(m, x, loss).grad.values();
    const auto f = [&](const std::vector<double>& p) {
      double total = 0.0;
      const ModelInstance mm{m.spec, ParameterVector(m.spec.layout(), p)};
      const Matrix z = forward(mm, x);
      for (std::size_t r = 0; r < 3; ++r) total += oracle::bce_sum(to_vec(z.row(r)), labels[r]);
      return total / 3.0;
    };
    EXPECT_LT(oracle::rel_error(g, oracle::central_difference(f, m.params.values())), 1e-6) << "seed " << seed;
  }
}

TEST(Backward, InputGradientMatchesCentralDifferences) {
  const ModelInstance m = init_model(mlp_spec(5, {8, 8}, 4), 3);
  Rng rng = make_rng(7);
  const auto x = draw_normal_vector(rng, 5);
  const SoftmaxCrossEntropyLoss loss{{2}};
  const auto g = input_gradient(m, row_matrix(x), loss).grad.data();
  const auto f = [&](const std::vector<double>& v) {
    const Matrix z = forward(m, row_matrix(v));
    return -std::log(oracle::softmax(to_vec(z.row(0)))[2]);
  };
  EXPECT_LT(oracle::rel_error(g, oracle::central_difference(f, x)), 1e-7);
}

TEST(Backward, NonFiniteLossThrowsNumericError) {
  ModelInstance m = init_model(mlp_spec(2, {}, 2), 1);
  m.params.values()[0] = std::numeric_limits<double>::infinity();
  const Matrix x = Matrix::from_rows({{1.0, 1.0}});
  EXPECT_THROW(param_gradient(m, x, MseLoss{Matrix(1, 2)}), NumericError);
}

TEST(Model, SgdStepMovesAgainstGradient) {
  const ModelInstance m = init_model(mlp_spec(3, {}, 2), 1);
  GradientVector g(m.spec.layout(), std::vector<double>(m.spec.param_count(), 2.0));
  const auto p = sgd_step(m.params, g, 0.25);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.values()[i], m.params.values()[i] - 0.5);
  EXPECT_THROW(sgd_step(m.params, g, -1.0), InvalidArgument);
}

TEST(Model, ExpandHeadKeepsOldRowsExactly) {
  const ModelInstance m = init_model(mlp_spec(3, {4}, 2), 8);
  const ModelInstance g = expand_head(m, 3, 99);
  EXPECT_EQ(g.output_width(), 5u);
  EXPECT_EQ(to_vec(g.params.block(0)), to_vec(m.params.block(0)));
  const auto w_old = m.params.weights(1), w_new = g.params.weights(1);
  for (std::size_t i = 0; i < w_old.size(); ++i) EXPECT_EQ(w_new[i], w_old[i]);
  for (std::size_t k = 2; k < 5; ++k) EXPECT_EQ(g.params.bias(1)[k], 0.0);
  EXPECT_EQ(truncate_head(g, 2), m);
  EXPECT_THROW(expand_head(m, 0, 1), InvalidArgument);
}

TEST(Checkpoint, JsonAndBinaryRoundTripBitExact) {
  ModelInstance m = init_model(mini_cnn_spec(Shape{1, 6, 6}, 2, 3), 5);
  m.params.values()[0] = 0.1 + 0.2;
  m.params.values()[1] = -std::numeric_limits<double>::denorm_min();
  const ModelInstance from_text = model_from_json(json::parse(to_json(m).dump()));
  EXPECT_EQ(from_text, m);
  std::stringstream buf;
  write_model_binary(buf, m);
  EXPECT_EQ(read_model_binary(buf), m);
}

TEST(Checkpoint, CorruptBinaryIsRejected) {
  std::stringstream buf("NOTAMODELxxxxxxxx");
  EXPECT_THROW(read_model_binary(buf), InvalidArgument);
  const ModelInstance m = init_model(mlp_spec(2, {}, 2), 1);
  std::stringstream full;
  write_model_binary(full, m);
  std::string bytes = full.str();
  bytes.resize(bytes.size() - 4);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_model_binary(cut), InvalidArgument);
}
