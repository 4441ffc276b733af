#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "gradient_checks.hpp"
#include "winn/net_zoo.hpp"

using namespace winn;
namespace wt = winn::testing;

TEST(NetZoo, FullCriticShapeChain) {
  const auto spec = preset_spec("appendixC64");
  EXPECT_EQ(spec.name, "appendixC64");
  EXPECT_EQ(spec.input_shape, (Shape{3, 64, 64}));
  const std::vector<Shape> expected = {{32, 64, 64},  {64, 64, 64},  {64, 32, 32},  {64, 32, 32},
                                       {128, 32, 32}, {128, 16, 16}, {128, 16, 16}, {256, 16, 16},
                                       {256, 8, 8},   {256, 8, 8},   {512, 8, 8},   {512, 4, 4}};
  EXPECT_EQ(shape_chain(spec), expected);
  // Layer norm after every convolution except the first; swish after every convolution.
  EXPECT_FALSE(spec.layers[0].norm);
  for (std::size_t i = 1; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::Conv) EXPECT_TRUE(spec.layers[i].norm) << i;
  for (const auto& l : spec.layers) EXPECT_EQ(l.swish, l.kind == LayerKind::Conv);
}

TEST(NetZoo, FullCriticForwardGivesOneScorePerSample) {
  Preset p = build_preset("appendixC64", 1);
  Rng rng(3);
  Tensor f = eval_f(p.params, p.spec, uniform_tensor({1, 3, 64, 64}, -1, 1, rng), Mode::Eval);
  EXPECT_EQ(f.shape(), (Shape{1}));
  EXPECT_EQ(p.params.value("head.f.weight").shape(), (Shape{512 * 4 * 4, 1}));
}

TEST(NetZoo, ScaledPresetsHalveConsistently) {
  const auto spec = preset_spec("appendixC_scaled(32,2)");
  const auto chain = shape_chain(spec);
  EXPECT_EQ(chain[2], (Shape{32, 16, 16}));
  EXPECT_EQ(chain.back(), (Shape{256, 2, 2}));
  EXPECT_EQ(preset_spec("appendixC_scaled(16,8,1)").input_shape, (Shape{1, 16, 16}));
}

TEST(NetZoo, NonIntegerSpatialSizeIsConfigError) {
  EXPECT_THROW(preset_spec("appendixC_scaled(24,1)"), ConfigError);
  EXPECT_THROW(preset_spec("appendixC_scaled(64,3)"), ConfigError);
  EXPECT_THROW(preset_spec("supervised_head(1)"), ConfigError);
  EXPECT_THROW(preset_spec("mlp2d(0)"), ConfigError);
  EXPECT_THROW(preset_spec("resnet32"), ConfigError);
  ArchitectureSpec bad = mlp2d_spec(4);
  bad.input_shape = {3, 6, 6};
  bad.layers = {{LayerKind::AvgPool}, {LayerKind::AvgPool}};
  EXPECT_THROW(shape_chain(bad), ConfigError);
}

TEST(NetZoo, Mlp2dGivesScalarPerPoint) {
  Preset p = build_preset("mlp2d(16)", 2);
  Tensor f = eval_f(p.params, p.spec, Tensor({1, 2}, {0.3, -0.4}), Mode::Eval);
  EXPECT_EQ(f.shape(), (Shape{1}));
}

TEST(NetZoo, WrongBatchShapeIsConfigError) {
  Preset p = build_preset("mlp2d(4)", 2);
  EXPECT_THROW(eval_f(p.params, p.spec, Tensor({2, 3}), Mode::Eval), ConfigError);
}

TEST(NetZoo, ParameterNamesUniqueAndDeterministic) {
  Preset a = build_preset("supervised_head(10)", 9);
  Preset b = build_preset("supervised_head(10)", 9);
  EXPECT_EQ(a.params, b.params);
  std::set<std::string> names;
  for (const auto& e : a.params.entries()) EXPECT_TRUE(names.insert(e.name).second) << e.name;
  EXPECT_EQ(a.params[a.params.find("head.class.weight")].role, ParamRole::TopLayer);
  EXPECT_EQ(a.params[a.params.find("norm1.gain")].role, ParamRole::Norm);
  EXPECT_FALSE(build_preset("supervised_head(10)", 10).params == a.params);
}

TEST(NetZoo, ZeroTopLayerGivesZeroScores) {
  Preset p = build_preset("appendixC_scaled(16,8)", 4);
  p.params.value("head.f.weight") = Tensor(p.params.value("head.f.weight").shape());
  Rng rng(1);
  Tensor f = eval_f(p.params, p.spec, uniform_tensor({4, 3, 16, 16}, -1, 1, rng), Mode::Eval);
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(NetZoo, ScoresArePerSampleAndPermutationEquivariant) {
  Preset p = build_preset("appendixC_scaled(16,8)", 4);
  Rng rng(5);
  Tensor x = uniform_tensor({3, 3, 16, 16}, -1, 1, rng);
  Tensor f = eval_f(p.params, p.spec, x, Mode::Eval);
  // Batch [x2, x0, x0, x1]
  const std::size_t rs = x.row_size();
  Tensor perm({4, 3, 16, 16});
  const std::size_t order[] = {2, 0, 0, 1};
  for (std::size_t i = 0; i < 4; ++i) std::copy_n(x.row(order[i]).begin(), rs, perm.row(i).begin());
  Tensor g = eval_f(p.params, p.spec, perm, Mode::Eval);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], f[order[i]], 1e-13);
  EXPECT_EQ(g[1], g[2]);
  EXPECT_EQ(eval_f(p.params, p.spec, x, Mode::Eval), f);
}

TEST(NetZoo, ReducedCriticGradientsMatchFiniteDifferences) {
  Preset p = build_preset("appendixC_scaled(16,8)", 6);
  Rng rng(21);
  ModelParams params = wt::roughened(p.params, 0.2, rng);
  for (int trial = 0; trial < 5; ++trial) {
    auto r = wt::check_network_gradients(p.spec, params, rng, 2, trial == 0);
    EXPECT_LE(r.param_rel, 1e-5) << trial;
    EXPECT_LE(r.input_rel, 1e-5) << trial;
  }
}

TEST(NetZoo, SupervisedHeadGradientsMatchFiniteDifferences) {
  Preset p = build_preset("supervised_head(3,8,4)", 6);
  Rng rng(22);
  ModelParams params = wt::roughened(p.params, 0.2, rng);
  auto r = wt::check_network_gradients(p.spec, params, rng);
  EXPECT_LE(r.param_rel, 1e-5);
  EXPECT_LE(r.input_rel, 1e-5);
}

TEST(AltInitializer, ShapeChainEndsAt64x64x3) {
  AltInitializer init(1);
  EXPECT_EQ(AltInitializer::shape_chain().back(), (Shape{3, 64, 64}));
  Rng rng(2);
  Tensor out = init.generate(2, rng);
  EXPECT_EQ(out.shape(), (Shape{2, 3, 64, 64}));
  EXPECT_TRUE(out.all_finite());
}

TEST(AltInitializer, SameSeedSameWeights) {
  EXPECT_EQ(AltInitializer(7).weights(), AltInitializer(7).weights());
  EXPECT_FALSE(AltInitializer(7).weights() == AltInitializer(8).weights());
}

TEST(AltInitializer, WeightStdIsPointOne) {
  AltInitializer init(3);
  // First 1e5 weight draws.
  double s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (const auto& w : init.weights())
    for (double v : w.values()) {
      if (n == 100000) break;
      s += v;
      ss += v * v;
      ++n;
    }
  ASSERT_EQ(n, 100000u);
  const double mean = s / n;
  const double sd = std::sqrt(ss / n - mean * mean);
  EXPECT_NEAR(sd, 0.1, 0.002);
}

TEST(AltInitializer, OutputMeanIsZeroWithinThreeStandardErrors) {
  AltInitializer init(5);
  Rng rng(6);
  // Per-image means are independent draws; 10^4 images in batches.
  const std::size_t images = 10000, chunk = 250;
  std::vector<double> means;
  for (std::size_t done = 0; done < images; done += chunk) {
    Tensor out = init.generate(chunk, rng);
    for (std::size_t i = 0; i < chunk; ++i) {
      double m = 0.0;
      for (double v : out.row(i)) m += v;
      means.push_back(m / static_cast<double>(out.row_size()));
    }
  }
  double mu = 0.0;
  for (double m : means) mu += m;
  mu /= means.size();
  double var = 0.0;
  for (double m : means) var += (m - mu) * (m - mu);
  var /= (means.size() - 1);
  const double se = std::sqrt(var / means.size());
  EXPECT_LE(std::abs(mu), 3.0 * se) << "mean " << mu << " se " << se;
}

TEST(AltInitializer, DeterministicPerSeed) {
  Rng a(11), b(11);
  EXPECT_EQ(AltInitializer(2).generate(2, a), AltInitializer(2).generate(2, b));
}
