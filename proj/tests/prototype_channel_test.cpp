#include <gtest/gtest.h>

#include "glfc/glfc.hpp"
#include "oracles.hpp"

using namespace glfc;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<LabeledSample> cloud(std::size_t n, std::size_t dim, std::size_t label, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({draw_normal_vector(rng, dim), label, i});
  return out;
}

ModelInstance one_layer_encoder(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  return init_model(ModelSpec(Shape{dim}, {LayerSpec::dense(dim, classes)}), seed);
}

}  // namespace

TEST(Prototype, IsTheSampleNearestTheMeanEmbedding) {
  const ModelInstance m = init_model(mlp_spec(3, {5}, 2), 4);
  const auto samples = cloud(12, 3, 1, 8);
  std::vector<std::vector<double>> e;
  std::vector<double> mu(5, 0.0);
  for (const auto& s : samples) {
    e.push_back(oracle::relu(oracle::dense(to_vec(m.params.weights(0)), to_vec(m.params.bias(0)), s.features)));
    for (std::size_t k = 0; k < 5; ++k) mu[k] += e.back()[k] / 12;
  }
  std::size_t arg = 0;
  double best = 1e300;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double d = 0.0;
    for (std::size_t k = 0; k < 5; ++k) d += (e[i][k] - mu[k]) * (e[i][k] - mu[k]);
    if (d < best) best = d, arg = i;
  }
  EXPECT_EQ(select_prototype(samples, m), samples[arg]);

  const auto var = feature_variance(samples, m);
  ASSERT_EQ(var.size(), 5u);
  for (double v : var) EXPECT_GT(v, 0.0);
}

TEST(Prototype, PerturbationWithoutNoiseIsPlainGradientDescent) {
  const ModelInstance m = init_model(mlp_spec(3, {4}, 3), 2);
  const LabeledSample s{{0.2, -0.1, 0.5}, 1, 0};
  const std::vector<double> var(4, 1.0), zero(4, 0.0);
  const PerturbConfig cfg{0.0, 5, 0.1};
  auto x = s.features;
  for (int step = 0; step < 5; ++step) {
    const auto g = oracle::central_difference(
        [&](const std::vector<double>& v) { return perturbation_loss(m, v, 1, zero); }, x);
    for (std::size_t k = 0; k < 3; ++k) x[k] -= 0.1 * g[k];
  }
  const auto got = perturb_prototype(s, m, var, cfg, 3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got.features[k], x[k], 1e-8);
  EXPECT_EQ(got.label, 1u);
  EXPECT_EQ(perturb_prototype(s, m, var, {0.1, 5, 0.1}, 3), perturb_prototype(s, m, var, {0.1, 5, 0.1}, 3));
  EXPECT_THROW(perturb_prototype(s, m, std::vector<double>(3, 1.0), cfg, 3), InvalidArgument);
}

TEST(Packet, OneLayerGradientIsOuterProduct) {
  const ModelInstance enc = one_layer_encoder(4, 3, 1);
  const std::vector<double> x{0.5, -1.0, 0.25, 2.0};
  const auto packet = encode_gradient(x, 2, enc);
  const auto p = oracle::softmax(oracle::dense(to_vec(enc.params.weights(0)), to_vec(enc.params.bias(0)), x));
  for (std::size_t o = 0; o < 3; ++o) {
    const double d = p[o] - (o == 2 ? 1.0 : 0.0);
    EXPECT_NEAR(packet.grad.bias(0)[o], d, 1e-15);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(packet.grad.weights(0)[o * 4 + i], d * x[i], 1e-15);
  }
  EXPECT_EQ(recover_label(packet), 2u);
}

TEST(Packet, RecoveryFailsWithoutAUniqueNegativeEntry) {
  const ModelInstance enc = one_layer_encoder(2, 3, 1);
  GradientPacket p = encode_gradient(std::vector<double>{1, 1}, 0, enc);
  auto& v = p.grad.values();
  std::fill(v.begin(), v.end(), 0.1);
  EXPECT_THROW(recover_label(p), RecoveryError);
  std::fill(v.end() - 3, v.end(), -0.1);
  EXPECT_THROW(recover_label(p), RecoveryError);
}

TEST(Packet, JsonRoundTripIsBitExact) {
  const ModelInstance enc = init_model(encoder_spec(Shape{6}, 4), 3);
  const auto packet = encode_gradient(std::vector<double>{0.1, 0.2, 0.3, -0.7, 1e-300, 5}, 3, enc);
  const auto back = packet_from_json(json::parse(to_json(packet).dump()));
  EXPECT_EQ(back.grad, packet.grad);
  json broken = to_json(packet);
  broken["blocks"][0]["values"].erase(0);
  EXPECT_THROW(packet_from_json(broken), InvalidArgument);
}

TEST(Packet, ShuffleIsASeededPermutation) {
  const ModelInstance enc = one_layer_encoder(2, 5, 1);
  std::vector<GradientPacket> ps;
  for (std::size_t c = 0; c < 5; ++c) ps.push_back(encode_gradient(std::vector<double>{1.0, 0.5}, c, enc));
  const auto a = shuffle_pool(ps, 9), b = shuffle_pool(ps, 9);
  ASSERT_EQ(a.packets.size(), 5u);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.packets[i].grad, b.packets[i].grad);
    labels.push_back(recover_label(a.packets[i]));
  }
  std::sort(labels.begin(), labels.end());
  EXPECT_EQ(labels, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Reconstruction, RecoversTheInputOfAOneLayerEncoder) {
  for (auto method : {ReconstructMethod::gradient_descent, ReconstructMethod::lbfgs}) {
    const ModelInstance enc = one_layer_encoder(5, 6, 12);
    Rng rng = make_rng(3);
    const auto x = draw_normal_vector(rng, 5);
    const auto packet = encode_gradient(x, 4, enc);
    ReconstructConfig cfg;
    cfg.method = method;
    const auto rec = reconstruct_sample(packet, enc, 4, cfg, 7);
    EXPECT_EQ(rec.label, 4u);
    EXPECT_LE(rec.residual, 1e-3 * rec.initial_residual) << to_string(method);
    EXPECT_NEAR(matching_loss(packet, enc, rec.features, 4), rec.residual, 1e-12);
    double se = 0.0;
    for (std::size_t k = 0; k < 5; ++k) se += (rec.features[k] - x[k]) * (rec.features[k] - x[k]);
    EXPECT_LT(std::sqrt(se / 5), 0.05) << to_string(method);
  }
}

TEST(Reconstruction, MatchingLossIsZeroAtTheTruth) {
  const ModelInstance enc = init_model(encoder_spec(Shape{1, 6, 6}, 3, EncoderArch::lenet), 5);
  Rng rng = make_rng(1);
  const auto x = draw_normal_vector(rng, 36);
  const auto packet = encode_gradient(x, 1, enc);
  EXPECT_EQ(matching_loss(packet, enc, x, 1), 0.0);
  auto y = x;
  y[0] += 0.5;
  EXPECT_GT(matching_loss(packet, enc, y, 1), 0.0);
}

TEST(Proxy, TracksStrictlyBetterModelsWithinATask) {
  const ModelInstance enc = one_layer_encoder(2, 2, 1);
  std::vector<GradientPacket> ps{encode_gradient(std::vector<double>{3, 0}, 0, enc),
                                 encode_gradient(std::vector<double>{0, 3}, 1, enc)};
  ProxyState proxy;
  EXPECT_THROW(distribute_best(proxy), InvalidArgument);
  proxy = proxy_evaluate(proxy, enc);
  EXPECT_TRUE(proxy.unvalidated);
  const ModelInstance first = *proxy.best;

  proxy = proxy_receive(proxy, ps, enc, {}, 4);
  EXPECT_EQ(proxy.task, 2u);
  EXPECT_EQ(proxy.eval_set.size(), 2u);
  EXPECT_EQ(*proxy.previous_best, first);
  EXPECT_FALSE(proxy.best.has_value());

  ModelInstance good = zero_model(enc.spec), bad = zero_model(enc.spec), also_good = zero_model(enc.spec);
  good.params.values() = {1, 0, 0, 1, 0, 0};
  also_good.params.values() = {2, 0, 0, 2, 0, 0};
  bad.params.values() = {0, 1, 1, 0, 0, 0};
  proxy = proxy_evaluate(proxy, bad);
  EXPECT_EQ(proxy.best_accuracy, 0.0);
  proxy = proxy_evaluate(proxy, good);
  EXPECT_EQ(proxy.best_accuracy, 1.0);
  proxy = proxy_evaluate(proxy, also_good);
  EXPECT_EQ(*proxy.best, good);
  const auto dist = distribute_best(proxy);
  EXPECT_EQ(*dist.current, good);
  EXPECT_EQ(*dist.previous, first);

  EXPECT_EQ(proxy_receive(proxy, {}, enc, {}, 1).task, proxy.task);
}

TEST(Proxy, EvalSetAndMemoryCheckpointsRoundTrip) {
  ProxyState proxy;
  proxy.eval_set.push_back({{0.1, 1.0 / 3.0}, 1, 1e-9, 0.5});
  EXPECT_EQ(eval_set_from_json(json::parse(eval_set_to_json(proxy).dump())), proxy.eval_set);

  const auto pool = cloud(6, 2, 0, 1);
  ExemplarMemory mem;
  mem.capacity = 4;
  mem.per_class[0] = {pool[4], pool[1]};
  EXPECT_EQ(memory_from_json(to_json(mem), pool), mem);
  json bad = to_json(mem);
  bad["classes"]["0"].push_back(17);
  EXPECT_THROW(memory_from_json(bad, pool), InvalidArgument);
}
