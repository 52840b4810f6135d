#include <gtest/gtest.h>

#include <functional>

#include "oracles.hpp"

using namespace lcgan;
using testing_support::kDiscriminatorRows;
using testing_support::kGeneratorRows;
using testing_support::random_tensor;
using testing_support::rel_err;
using testing_support::rows_weight_count;

namespace {

// Direct loops, PyTorch conventions: down kernels are out x in x k x k,
// transposed kernels in x out x k x k.
Tensor<double> conv_oracle(const Tensor<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                           const LayerSpec& l) {
  const Shape s = x.shape();
  const int k = 4;
  if (l.kind == LayerKind::kConvDown) {
    Tensor<double> out(Shape{s.n, l.out_channels, s.h / 2, s.w / 2});
    for (int n = 0; n < s.n; ++n)
      for (int o = 0; o < l.out_channels; ++o)
        for (int y = 0; y < s.h / 2; ++y)
          for (int xx = 0; xx < s.w / 2; ++xx) {
            double acc = b.empty() ? 0.0 : b[o];
            for (int i = 0; i < s.c; ++i)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = 2 * y - 1 + ky;
                  const int ix = 2 * xx - 1 + kx;
                  if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) continue;
                  acc += w[((o * s.c + i) * k + ky) * k + kx] * x.at(n, i, iy, ix);
                }
            out.at(n, o, y, xx) = acc;
          }
    return out;
  }
  Tensor<double> out(Shape{s.n, l.out_channels, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int o = 0; o < l.out_channels; ++o)
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) out.at(n, o, y, xx) = b.empty() ? 0.0 : b[o];
    for (int i = 0; i < s.c; ++i)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          for (int o = 0; o < l.out_channels; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = 2 * y - 1 + ky;
                const int ox = 2 * xx - 1 + kx;
                if (oy < 0 || ox < 0 || oy >= 2 * s.h || ox >= 2 * s.w) continue;
                out.at(n, o, oy, ox) += w[((i * l.out_channels + o) * k + ky) * k + kx] * x.at(n, i, y, xx);
              }
  }
  return out;
}

LayerSpec layer(LayerKind kind, int in, int out, Norm norm, Activation act, double dropout = 0.0) {
  LayerSpec l;
  l.kind = kind;
  l.in_channels = in;
  l.out_channels = out;
  l.norm = norm;
  l.activation = act;
  l.dropout = dropout;
  return l;
}

// Central-difference check of <forward(), r> against analytic gradients for
// a sample of coordinates. Outputs are differenced elementwise before the
// reduction so large outputs do not drown the difference in roundoff.
void expect_gradients(const std::function<Tensor<double>()>& forward, const Tensor<double>& r,
                      std::vector<double>& values, const std::vector<double>& analytic, int samples,
                      std::mt19937_64& gen, const std::string& what, double tol = 1e-5,
                      double h = 1e-6) {
  ASSERT_EQ(values.size(), analytic.size());
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = samples >= static_cast<int>(values.size()) ? static_cast<std::size_t>(s) % values.size()
                                                                     : pick(gen);
    const double saved = values[i];
    values[i] = saved + h;
    const auto yp = forward();
    values[i] = saved - h;
    const auto ym = forward();
    values[i] = saved;
    double numeric = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) numeric += r[k] * (yp[k] - ym[k]);
    numeric /= 2 * h;
    const double scale = std::max(1e-3, std::abs(numeric) + std::abs(analytic[i]));
    EXPECT_LT(std::abs(numeric - analytic[i]) / scale, tol) << what << " index " << i << " numeric " << numeric
                                                            << " analytic " << analytic[i];
  }
}

}  // namespace

TEST(Shapes, GeneratorMatchesBlockShapes) {
  Network<float> g(generator_spec(1.0));
  g.init(0, "test");
  Tensor<float> x(Shape{1, 4, 256, 256});
  const auto y = g.forward(x, Mode::kEval);
  ASSERT_EQ(g.input_shapes().size(), kGeneratorRows.size());
  for (std::size_t i = 0; i < kGeneratorRows.size(); ++i) {
    EXPECT_EQ(g.input_shapes()[i], kGeneratorRows[i].in) << "block " << i + 1;
    EXPECT_EQ(g.output_shapes()[i], kGeneratorRows[i].out) << "block " << i + 1;
  }
  EXPECT_EQ(y.shape(), (Shape{1, 6, 256, 256}));
}

TEST(Shapes, DiscriminatorMatchesBlockShapes) {
  Network<float> d(discriminator_spec(1.0));
  d.init(0, "test");
  Tensor<float> x(Shape{1, 10, 256, 256});
  const auto y = d.forward(x, Mode::kEval);
  ASSERT_EQ(d.input_shapes().size(), kDiscriminatorRows.size());
  for (std::size_t i = 0; i < kDiscriminatorRows.size(); ++i) {
    EXPECT_EQ(d.input_shapes()[i], kDiscriminatorRows[i].in) << "block " << i + 1;
    EXPECT_EQ(d.output_shapes()[i], kDiscriminatorRows[i].out) << "block " << i + 1;
  }
  EXPECT_EQ(y.shape(), (Shape{1, 1, 8, 8}));
}

TEST(Shapes, WrongMaskChannelsRejected) {
  Network<float> d(discriminator_spec(0.125));
  d.init(0, "test");
  EXPECT_THROW(d.forward(Tensor<float>(Shape{1, 9, 256, 256}), Mode::kEval), ShapeError);
  Network<float> g(generator_spec(0.125));
  EXPECT_THROW(g.forward(Tensor<float>(Shape{1, 4, 128, 128}), Mode::kEval), ShapeError);
}

TEST(ParameterCount, WeightOnlyMatchesRowSums) {
  const auto g = count_parameters(generator_spec(1.0));
  const auto d = count_parameters(discriminator_spec(1.0));
  EXPECT_EQ(g.weight_only, rows_weight_count(kGeneratorRows));
  EXPECT_EQ(d.weight_only, rows_weight_count(kDiscriminatorRows));
  EXPECT_EQ(g.weight_only, 41828352);
  EXPECT_EQ(d.weight_only, 2770944);
  EXPECT_EQ(g.weight_only + d.weight_only, 44599296);
  EXPECT_NEAR(100.0 * d.weight_only / g.weight_only, 6.62, 0.01);
}

TEST(ParameterCount, TotalsMatchInstantiatedTensors) {
  for (double m : {0.125, 0.5, 1.0}) {
    Network<float> g(generator_spec(m));
    std::int64_t weights = 0;
    std::int64_t total = 0;
    for (auto* p : g.parameters()) {
      total += static_cast<std::int64_t>(p->size());
      if (p->dims.size() == 4) weights += static_cast<std::int64_t>(p->size());
    }
    const auto c = count_parameters(generator_spec(m));
    EXPECT_EQ(c.weight_only, weights);
    EXPECT_EQ(c.total, total);
  }
}

TEST(WidthMultiplier, ValidatesRange) {
  EXPECT_NO_THROW(generator_spec(0.125));
  EXPECT_NO_THROW(discriminator_spec(2.0));
  EXPECT_THROW(generator_spec(0.1), ConfigError);
  EXPECT_THROW(generator_spec(0.3), ConfigError);
  EXPECT_EQ(generator_spec(0.125).layers[0].out_channels, 8);
}

TEST(Spec, JsonRoundTrip) {
  for (double m : {0.125, 1.0}) {
    EXPECT_EQ(spec_from_json(to_json(generator_spec(m))), generator_spec(m));
    EXPECT_EQ(spec_from_json(to_json(discriminator_spec(m))), discriminator_spec(m));
  }
}

TEST(Spec, DropoutOnlyInBlocksNineAndTen) {
  const auto s = generator_spec(1.0);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    EXPECT_EQ(s.layers[i].dropout, (i == 8 || i == 9) ? 0.5 : 0.0) << i;
  }
}

TEST(Generator, SoftmaxSumsToOne) {
  Network<float> g(generator_spec(0.125));
  g.init(4, "test");
  std::mt19937_64 gen(1);
  const auto y = g.forward(random_tensor<float>({2, 4, 256, 256}, gen), Mode::kEval);
  const std::size_t plane = y.shape().plane();
  for (int n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < plane; i += 37) {
      double s = 0.0;
      for (int c = 0; c < 6; ++c) s += y.channel(n, c)[i];
      ASSERT_NEAR(s, 1.0, 1e-5);
    }
  }
}

TEST(Generator, EvalDeterministicTrainDropoutStochastic) {
  Network<float> g(generator_spec(0.125));
  g.init(4, "test");
  std::mt19937_64 gen(1);
  const auto x = random_tensor<float>({1, 4, 256, 256}, gen);
  EXPECT_EQ(g.forward(x, Mode::kEval).vec(), g.forward(x, Mode::kEval).vec());
  Rng r1(1, "dropout", 0);
  Rng r2(1, "dropout", 1);
  const auto a = g.forward(x, Mode::kTrain, &r1);
  const auto b = g.forward(x, Mode::kTrain, &r2);
  EXPECT_NE(a.vec(), b.vec());
  Rng r3(1, "dropout", 0);
  EXPECT_EQ(a.vec(), g.forward(x, Mode::kTrain, &r3).vec());
}

TEST(Generator, InitStatistics) {
  Network<double> g(generator_spec(0.5));
  g.init(9, "test");
  for (auto* p : g.parameters()) {
    const bool kernel = p->dims.size() == 4;
    const bool gamma = p->name.find("bn.weight") != std::string::npos;
    double mean = 0.0;
    for (double v : p->value) mean += v;
    mean /= static_cast<double>(p->size());
    if (kernel && p->size() > 10000) {
      double var = 0.0;
      for (double v : p->value) var += (v - mean) * (v - mean);
      EXPECT_NEAR(std::sqrt(var / p->size()), 0.02, 0.002) << p->name;
      EXPECT_NEAR(mean, 0.0, 0.002) << p->name;
    } else if (gamma) {
      EXPECT_NEAR(mean, 1.0, 0.01) << p->name;
    } else if (!kernel) {
      for (double v : p->value) EXPECT_EQ(v, 0.0) << p->name;
    }
  }
}

TEST(Discriminator, ScoresInOpenUnitInterval) {
  Network<float> d(discriminator_spec(0.125));
  d.init(2, "test");
  Tensor<float> x(Shape{1, 10, 256, 256});
  x.fill(0.3f);
  const auto y = d.forward(x, Mode::kEval);
  ASSERT_EQ(y.size(), 64u);
  for (float v : y.vec()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Discriminator, EvalScoresIndependentOfBatchOrder) {
  Network<double> d(discriminator_spec(0.125));
  d.init(2, "test");
  std::mt19937_64 gen(3);
  const auto x = random_tensor<double>({3, 10, 256, 256}, gen);
  const auto y = d.forward(x, Mode::kEval);
  Tensor<double> xr(x.shape());
  const int perm[3] = {2, 0, 1};
  for (int n = 0; n < 3; ++n) std::copy_n(x.sample(perm[n]), x.shape().sample_size(), xr.sample(n));
  const auto yr = d.forward(xr, Mode::kEval);
  for (int n = 0; n < 3; ++n) {
    for (int i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(yr.sample(n)[i], y.sample(perm[n])[i]);
  }
}

TEST(Block, ConvolutionsMatchDirectLoops) {
  std::mt19937_64 gen(21);
  for (auto kind : {LayerKind::kConvDown, LayerKind::kConvUp}) {
    const auto l = layer(kind, 3, 5, Norm::kNone, Activation::kLeakyRelu);
    Block<double> b(l, "b.");
    Rng rng(1, "init");
    b.init(rng);
    auto params = b.parameters();
    for (auto* p : params) {
      for (auto& v : p->value) v = std::uniform_real_distribution<double>(-1, 1)(gen);
    }
    const auto x = random_tensor<double>({2, 3, 6, 6}, gen);
    const auto y = b.forward(x, Mode::kEval, false, nullptr);
    auto z = conv_oracle(x, params[0]->value, params[1]->value, l);
    ASSERT_EQ(y.shape(), z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double expect = z[i] > 0 ? z[i] : 0.2 * z[i];
      EXPECT_NEAR(y[i], expect, 1e-12);
    }
  }
}

TEST(Block, BatchNormTrainAndEval) {
  std::mt19937_64 gen(22);
  const auto l = layer(LayerKind::kConvDown, 2, 3, Norm::kBatchNorm, Activation::kRelu);
  Block<double> b(l, "b.");
  Rng rng(1, "init");
  b.init(rng);
  const auto x = random_tensor<double>({4, 2, 8, 8}, gen);
  const auto y = b.forward(x, Mode::kTrain, false, nullptr);
  const auto z = conv_oracle(x, b.parameters()[0]->value, {}, l);
  const auto gamma = b.parameters()[1]->value;
  const auto beta = b.parameters()[2]->value;
  const std::size_t plane = z.shape().plane();
  const double count = 4.0 * plane;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < plane; ++i) mean += z.channel(n, c)[i];
    mean /= count;
    double var = 0.0;
    for (int n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < plane; ++i) var += std::pow(z.channel(n, c)[i] - mean, 2);
    for (int n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = gamma[c] * (z.channel(n, c)[i] - mean) / std::sqrt(var / count + 1e-5) + beta[c];
        EXPECT_NEAR(y.channel(n, c)[i], std::max(0.0, v), 1e-10);
      }
    EXPECT_NEAR(b.buffers()[0]->value[c], 0.1 * mean, 1e-12);
    EXPECT_NEAR(b.buffers()[1]->value[c], 0.9 + 0.1 * var / (count - 1), 1e-12);
  }
  // Eval uses running statistics.
  const auto ye = b.forward(x, Mode::kEval, false, nullptr);
  for (int c = 0; c < 3; ++c) {
    const double rm = b.buffers()[0]->value[c];
    const double rv = b.buffers()[1]->value[c];
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = gamma[c] * (z.channel(0, c)[i] - rm) / std::sqrt(rv + 1e-5) + beta[c];
      EXPECT_NEAR(ye.channel(0, c)[i], std::max(0.0, v), 1e-10);
    }
  }
}

TEST(Block, GradientsMatchFiniteDifferences) {
  struct Case {
    LayerSpec spec;
    const char* name;
  };
  const std::vector<Case> cases = {
      {layer(LayerKind::kConvDown, 3, 4, Norm::kNone, Activation::kLeakyRelu), "down-lrelu"},
      {layer(LayerKind::kConvDown, 3, 4, Norm::kBatchNorm, Activation::kLeakyRelu), "down-bn-lrelu"},
      {layer(LayerKind::kConvDown, 3, 4, Norm::kNone, Activation::kRelu), "down-relu"},
      {layer(LayerKind::kConvDown, 3, 1, Norm::kNone, Activation::kSigmoid), "down-sigmoid"},
      {layer(LayerKind::kConvUp, 3, 4, Norm::kBatchNorm, Activation::kRelu), "up-bn-relu"},
      {layer(LayerKind::kConvUp, 3, 4, Norm::kBatchNorm, Activation::kRelu, 0.5), "up-bn-dropout-relu"},
      {layer(LayerKind::kConvUp, 3, 6, Norm::kNone, Activation::kSoftmax), "up-softmax"},
  };
  std::mt19937_64 gen(23);
  for (const auto& c : cases) {
    Block<double> b(c.spec, "b.");
    Rng init(2, "init");
    b.init(init);
    auto x = random_tensor<double>({2, 3, 4, 4}, gen);
    const Shape os = b.output_shape(x.shape());
    const auto r = random_tensor<double>(os, gen);
    auto forward = [&] {
      Rng drop(5, "dropout");
      return b.forward(x, Mode::kTrain, true, &drop);
    };
    forward();
    for (auto* p : b.parameters()) p->zero_grad();
    const auto dx = b.backward(r, true);
    expect_gradients(forward, r, x.vec(), dx.vec(), 40, gen, std::string(c.name) + " input");
    for (auto* p : b.parameters()) {
      const auto analytic = p->grad;
      expect_gradients(forward, r, p->value, analytic, 30, gen, std::string(c.name) + " " + p->name);
    }
  }
}

// A small step keeps the perturbation from crossing ReLU kinks somewhere in
// the half-million units downstream of early blocks.
TEST(Network, GeneratorGradientsThroughSkips) {
  Network<double> g(generator_spec(0.125));
  g.init(3, "test");
  std::mt19937_64 gen(24);
  auto x = random_tensor<double>({2, 4, 256, 256}, gen);
  const auto r = random_tensor<double>({2, 6, 256, 256}, gen);
  auto forward = [&] {
    Rng drop(1, "dropout");
    return g.forward(x, Mode::kTrain, &drop);
  };
  forward();
  g.zero_grad();
  const auto dx = g.backward(r);
  expect_gradients(forward, r, x.vec(), dx.vec(), 12, gen, "generator input", 1e-4, 1e-7);
  for (auto* p : g.parameters()) {
    if (p->name.rfind("block1.", 0) != 0 && p->name.rfind("block7.", 0) != 0 &&
        p->name.rfind("block9.", 0) != 0 && p->name.rfind("block14.", 0) != 0) {
      continue;
    }
    const auto analytic = p->grad;
    expect_gradients(forward, r, p->value, analytic, 4, gen, p->name, 1e-4, 1e-7);
  }
}

TEST(Network, BackwardWithoutParamGradsLeavesGradsUntouched) {
  Network<double> d(discriminator_spec(0.125));
  d.init(3, "test");
  std::mt19937_64 gen(25);
  const auto x = random_tensor<double>({1, 10, 256, 256}, gen);
  const auto y = d.forward(x, Mode::kTrain);
  d.zero_grad();
  const auto dx = d.backward(random_tensor<double>(y.shape(), gen), false);
  EXPECT_EQ(dx.shape(), x.shape());
  for (auto* p : d.parameters()) {
    for (double v : p->grad) ASSERT_EQ(v, 0.0) << p->name;
  }
}
