#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "gradcheck.hpp"
#include "redo/primitives.hpp"

namespace redo {
namespace {

using testing::GradChecker;
using testing::random_tensor;

Eigen::MatrixXd as_matrix(const Tensor<double>& t) {
  const int rows = t.dim(0), cols = static_cast<int>(t.size() / rows);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = t[static_cast<std::size_t>(r) * cols + c];
  return m;
}

std::vector<Parameter<double>*> trainable(ParameterStore<double>& s) {
  std::vector<Parameter<double>*> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i].trainable) out.push_back(&s[i]);
  return out;
}

// Random, non-zero values everywhere so gates and biases are exercised.
void randomize(ParameterStore<double>& s, Rng& rng, double scale = 0.4) {
  initialize_parameters(s, rng, 0.8);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i].trainable)
      for (auto& v : s[i].value.storage()) v += scale * normal(rng);
}

TEST(OrthogonalInit, SquareGainPointEight) {
  Rng rng(3);
  const Eigen::MatrixXd w = as_matrix(orthogonal_init<double>({8, 8}, 0.8, rng));
  EXPECT_LT((w * w.transpose() - 0.64 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(OrthogonalInit, UnitGainColumnsOrthonormal) {
  Rng rng(4);
  const Eigen::MatrixXd w = as_matrix(orthogonal_init<double>({6, 6}, 1.0, rng));
  EXPECT_LT((w.transpose() * w - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(OrthogonalInit, WideAndTallSingularValues) {
  Rng rng(5);
  for (Shape shape : {Shape{4, 16}, Shape{16, 4}, Shape{5, 3, 3, 3}}) {
    const Eigen::MatrixXd w = as_matrix(orthogonal_init<double>(shape, 0.8, rng));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
    for (int i = 0; i < svd.singularValues().size(); ++i)
      EXPECT_NEAR(svd.singularValues()(i), 0.8, 1e-4) << to_string(shape);
  }
  const Eigen::MatrixXd wide = as_matrix(orthogonal_init<double>({4, 16}, 0.8, rng));
  EXPECT_LT((wide * wide.transpose() - 0.64 * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(OrthogonalInit, DeterministicAndChecked) {
  Rng a(9), b(9);
  EXPECT_EQ(orthogonal_init<float>({5, 7}, 0.8, a), orthogonal_init<float>({5, 7}, 0.8, b));
  Rng r(1);
  EXPECT_THROW(orthogonal_init<double>({}, 0.8, r), ContractError);
  EXPECT_THROW(orthogonal_init<double>({0, 3}, 0.8, r), ContractError);
  EXPECT_THROW(orthogonal_init<double>({3, 3}, 0.0, r), ContractError);
}

TEST(SpectralNorm, IdentityAndDiagonal) {
  std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::vector<double> u{0.6, 0.0, 0.8};
  auto est = spectral_step<double>(eye, 3, 3, u, true);
  EXPECT_NEAR(est.sigma, 1.0, 1e-12);

  std::vector<double> diag{2, 0, 0, 1};
  std::vector<double> u2{0.3, 0.9539392014169456};
  for (int it = 0; it < 60; ++it) est = spectral_step<double>(diag, 2, 2, u2, true);
  EXPECT_NEAR(est.sigma, 2.0, 1e-9);
  Graph<double> g(false);
  Tensor<double> ut({2}, std::vector<double>(u2));
  Var w = g.constant(Tensor<double>({2, 2}, diag));
  const Tensor<double>& out = g.value(op::spectral_norm(g, w, ut));
  EXPECT_NEAR(out[0], 1.0, 1e-9);
  EXPECT_NEAR(out[3], 0.5, 1e-9);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
}

TEST(SpectralNorm, ConvergesToSvdAndKeepsUnitU) {
  Rng rng(11);
  Tensor<double> w = random_tensor({16, 16}, rng);
  std::vector<double> u(16);
  double n = 0;
  for (double& x : u) {
    x = normal(rng);
    n += x * x;
  }
  for (double& x : u) x /= std::sqrt(n);
  SpectralEstimate<double> est;
  for (int it = 0; it < 400; ++it) {
    est = spectral_step<double>(w.span(), 16, 16, u, true);
    double un = 0;
    for (double x : u) un += x * x;
    ASSERT_NEAR(std::sqrt(un), 1.0, 1e-6);
  }
  const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(as_matrix(w)).singularValues()(0);
  EXPECT_NEAR(est.sigma / top, 1.0, 1e-3);
}

TEST(SpectralNorm, ZeroMatrixPassesThrough) {
  Graph<double> g(true);
  Tensor<double> u({3}, std::vector<double>{1, 0, 0});
  Var w = g.input(Tensor<double>({3, 2}));
  Var out = op::spectral_norm(g, w, u);
  for (double v : g.value(out).storage()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(u[0], 1.0);
  g.backward(out, Tensor<double>({3, 2}, 1.0));
  for (double v : g.grad(w).storage()) EXPECT_EQ(v, 1.0);
}

TEST(SpectralNorm, FrozenStoreKeepsU) {
  ParameterStore<double> s;
  Linear<double> lin(s, "l", 4, 3, true, true);
  Rng rng(2);
  initialize_parameters(s, rng, 0.8);
  const Tensor<double> before = lin.spectral_u()->value;
  Graph<double> g(true);
  g.freeze(s);
  lin(g, g.constant(random_tensor({2, 4}, rng)));
  EXPECT_EQ(lin.spectral_u()->value, before);
  Graph<double> g2(true);
  lin(g2, g2.constant(random_tensor({2, 4}, rng)));
  EXPECT_FALSE(lin.spectral_u()->value == before);
}

TEST(SelfAttention, IdentityAtInitAndStochasticRows) {
  ParameterStore<double> s;
  SelfAttention<double> sa(s, "sa", 16, true);
  Rng rng(6);
  initialize_parameters(s, rng, 0.8);
  EXPECT_EQ(sa.gamma().value[0], 0.0);
  Graph<double> g(false);
  Tensor<double> xin = random_tensor({2, 16, 4, 4}, rng);
  Var x = g.constant(xin);
  EXPECT_EQ(g.value(sa(g, x)), xin);
  const Tensor<double>& a = g.value(sa.attention(g, x));
  ASSERT_EQ(a.shape(), (Shape{2, 16, 16}));
  for (int r = 0; r < 32; ++r) {
    double sum = 0;
    for (int c = 0; c < 16; ++c) sum += a[static_cast<std::size_t>(r) * 16 + c];
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(SelfAttention, SinglePositionIsValueProjection) {
  ParameterStore<double> s;
  SelfAttention<double> sa(s, "sa", 8, false);
  Rng rng(8);
  initialize_parameters(s, rng, 0.8);
  sa.gamma().value[0] = 0.7;
  Tensor<double> xin = random_tensor({1, 8, 1, 1}, rng);
  Graph<double> g(false);
  const Tensor<double> y = g.value(sa(g, g.constant(xin)));
  // One position: the attention weight is 1, so attend(x) = W_out W_value x.
  const Tensor<double>& wv = s.get("sa.value.weight").value;  // [4, 8, 1, 1]
  const Tensor<double>& wo = s.get("sa.out.weight").value;    // [8, 4, 1, 1]
  for (int c = 0; c < 8; ++c) {
    double acc = 0;
    for (int j = 0; j < 4; ++j) {
      double vj = 0;
      for (int k = 0; k < 8; ++k) vj += wv[j * 8 + k] * xin[k];
      acc += wo[c * 4 + j] * vj;
    }
    EXPECT_NEAR(y[c], xin[c] + 0.7 * acc, 1e-12);
  }
}

TEST(ConditionalBatchNorm, IdentityAffineIsBatchNorm) {
  ParameterStore<double> s;
  ConditionalBatchNorm<double> cbn(s, "cbn", 3, 4, false);
  Rng rng(12);
  initialize_parameters(s, rng, 0.8);
  cbn.gamma_map().weight().value.fill(0.0);
  cbn.beta_map().weight().value.fill(0.0);
  Tensor<double> xin = random_tensor({4, 3, 5, 5}, rng, 2.0);
  for (std::size_t i = 0; i < xin.size(); ++i) xin[i] += 3.0;
  Graph<double> g(true);
  const Tensor<double>& y = g.value(cbn(g, g.constant(xin), g.constant(random_tensor({4, 4}, rng))));
  Tensor<double> rm({3}), rv({3}, 1.0);
  Graph<double> g2(true);
  const Tensor<double>& ref = g2.value(op::batch_norm(g2, g2.constant(xin), rm, rv));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  // Per-channel moments of the normalized output.
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int b = 0; b < 4; ++b)
      for (int p = 0; p < 25; ++p) m += y[(b * 3 + c) * 25 + p];
    m /= 100;
    for (int b = 0; b < 4; ++b)
      for (int p = 0; p < 25; ++p) v += (y[(b * 3 + c) * 25 + p] - m) * (y[(b * 3 + c) * 25 + p] - m);
    v /= 100;
    EXPECT_NEAR(m, 0.0, 1e-3);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  EXPECT_GT(cbn.running_var().value[0], 0.0);
}

TEST(ConditionalBatchNorm, ConstantInputGivesShift) {
  ParameterStore<double> s;
  ConditionalBatchNorm<double> cbn(s, "cbn", 2, 3, false);
  Rng rng(13);
  initialize_parameters(s, rng, 0.8);
  cbn.beta_map().weight().value.fill(0.0);
  cbn.beta_map().bias()->value.fill(0.25);
  Graph<double> g(true);
  const Tensor<double>& y =
      g.value(cbn(g, g.constant(Tensor<double>({3, 2, 4, 4}, 5.0)), g.constant(random_tensor({3, 3}, rng))));
  for (double v : y.storage()) EXPECT_NEAR(v, 0.25, 1e-9);
}

TEST(ConditionalBatchNorm, BatchOfOneRejectedInTraining) {
  ParameterStore<double> s;
  ConditionalBatchNorm<double> cbn(s, "cbn", 2, 3, false);
  Rng rng(14);
  initialize_parameters(s, rng, 0.8);
  Graph<double> g(true);
  EXPECT_THROW(cbn(g, g.constant(random_tensor({1, 2, 4, 4}, rng)), g.constant(random_tensor({1, 3}, rng))),
               ContractError);
  Graph<double> e(false);
  EXPECT_NO_THROW(cbn(e, e.constant(random_tensor({1, 2, 4, 4}, rng)), e.constant(random_tensor({1, 3}, rng))));
}

TEST(PyramidPooling, ChannelArithmeticAndConstantInput) {
  ParameterStore<double> s;
  PyramidPooling<double> ppm(s, "ppm", 64);
  EXPECT_EQ(ppm.output_channels(), 68);
  Rng rng(15);
  initialize_parameters(s, rng, 0.8);
  Graph<double> g(false);
  const Tensor<double>& y = g.value(ppm(g, g.constant(Tensor<double>({1, 64, 8, 8}, 0.5))));
  ASSERT_EQ(y.shape(), (Shape{1, 68, 8, 8}));
  const Tensor<double>& w = ppm.projection(0).weight().value;
  double expect = 0;
  for (int c = 0; c < 64; ++c) expect += w[c] * 0.5;
  for (int p = 0; p < 64; ++p) EXPECT_NEAR(y[64 * 64 + p], expect, 1e-12);
}

TEST(PyramidPooling, TwoBinsAverageBlocks) {
  Graph<double> g(false);
  Tensor<double> x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = i;
  const Tensor<double>& p = g.value(op::adaptive_avg_pool(g, g.constant(x), 2));
  EXPECT_DOUBLE_EQ(p[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(p[1], (2 + 3 + 6 + 7) / 4.0);
  EXPECT_DOUBLE_EQ(p[2], (8 + 9 + 12 + 13) / 4.0);
  EXPECT_DOUBLE_EQ(p[3], (10 + 11 + 14 + 15) / 4.0);
}

TEST(ResBlock, ZeroBranchIsIdentity) {
  for (ResNorm norm : {ResNorm::None, ResNorm::Instance}) {
    ParameterStore<double> s;
    ResBlock<double> rb(s, "rb", {8, 8, ResVariant::Plain, norm, false});
    Rng rng(16);
    initialize_parameters(s, rng, 0.8);
    s.get("rb.conv2.weight").value.fill(0.0);
    if (auto* b = s.find("rb.conv2.bias")) b->value.fill(0.0);
    Tensor<double> xin = random_tensor({2, 8, 6, 6}, rng);
    Graph<double> g(false);
    const Tensor<double>& y = g.value(rb(g, g.constant(xin)));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], xin[i], 1e-12);
  }
}

TEST(ResBlock, DownAndUpShapes) {
  ParameterStore<double> s;
  ResBlock<double> down(s, "down", {3, 8, ResVariant::Down, ResNorm::None, true, false});
  ResBlock<double> up(s, "up", {8, 4, ResVariant::Up, ResNorm::ConditionalBatch, true, true, 5});
  Rng rng(17);
  initialize_parameters(s, rng, 0.8);
  Graph<double> g(true);
  Var y = down(g, g.constant(random_tensor({2, 3, 64, 64}, rng)));
  EXPECT_EQ(g.shape(y), (Shape{2, 8, 32, 32}));
  Var u = up(g, g.constant(random_tensor({2, 8, 8, 8}, rng)), g.constant(random_tensor({2, 5}, rng)));
  EXPECT_EQ(g.shape(u), (Shape{2, 4, 16, 16}));
  for (double v : g.value(u).storage()) EXPECT_TRUE(std::isfinite(v));
}

// Finite differences over every trainable parameter and the input.

TEST(PrimitiveGrad, SelfAttention) {
  ParameterStore<double> s;
  SelfAttention<double> sa(s, "sa", 8, true);
  Rng rng(20);
  randomize(s, rng);
  GradChecker gc({random_tensor({2, 8, 3, 4}, rng)}, trainable(s));
  EXPECT_LT(gc.run([&](Graph<double>& g, const std::vector<Var>& in) { return sa(g, in[0]); }).max_rel_error, 1e-3);
}

TEST(PrimitiveGrad, ConditionalBatchNormTraining) {
  ParameterStore<double> s;
  ConditionalBatchNorm<double> cbn(s, "cbn", 3, 4, false);
  Rng rng(21);
  randomize(s, rng);
  GradChecker gc({random_tensor({3, 3, 4, 4}, rng), random_tensor({3, 4}, rng)}, trainable(s));
  gc.set_training(true);
  EXPECT_LT(gc.run([&](Graph<double>& g, const std::vector<Var>& in) { return cbn(g, in[0], in[1]); }).max_rel_error,
            1e-3);
}

TEST(PrimitiveGrad, ConditionalBatchNormEvalSpectral) {
  ParameterStore<double> s;
  ConditionalBatchNorm<double> cbn(s, "cbn", 3, 4, true);
  Rng rng(22);
  randomize(s, rng);
  cbn.running_mean().value.fill(0.3);
  cbn.running_var().value.fill(1.7);
  GradChecker gc({random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 4}, rng)}, trainable(s));
  EXPECT_LT(gc.run([&](Graph<double>& g, const std::vector<Var>& in) { return cbn(g, in[0], in[1]); }).max_rel_error,
            1e-3);
}

TEST(PrimitiveGrad, PyramidPooling) {
  ParameterStore<double> s;
  PyramidPooling<double> ppm(s, "ppm", 4);
  Rng rng(23);
  randomize(s, rng);
  GradChecker gc({random_tensor({2, 4, 6, 6}, rng)}, trainable(s));
  EXPECT_LT(gc.run([&](Graph<double>& g, const std::vector<Var>& in) { return ppm(g, in[0]); }).max_rel_error, 1e-3);
}

TEST(PrimitiveGrad, ResBlockVariants) {
  struct Case {
    const char* name;
    ResBlockConfig cfg;
    bool training;
    Shape in;
  };
  std::vector<Case> cases = {
      {"instance", {4, 4, ResVariant::Plain, ResNorm::Instance, false}, false, {2, 4, 6, 6}},
      {"plain-proj", {3, 5, ResVariant::Plain, ResNorm::None, true}, false, {2, 3, 4, 4}},
      {"down", {3, 4, ResVariant::Down, ResNorm::None, true, false}, false, {2, 3, 8, 8}},
      {"up-cbn", {4, 3, ResVariant::Up, ResNorm::ConditionalBatch, false, true, 3}, true, {2, 4, 4, 4}},
  };
  for (const Case& c : cases) {
    ParameterStore<double> s;
    ResBlock<double> rb(s, "rb", c.cfg);
    Rng rng(24);
    randomize(s, rng);
    std::vector<Tensor<double>> inputs{random_tensor(c.in, rng)};
    const bool cond = c.cfg.norm == ResNorm::ConditionalBatch;
    if (cond) inputs.push_back(random_tensor({c.in[0], 3}, rng));
    auto params = trainable(s);
    // conv1 bias is cancelled by the batch norm that follows it
    if (cond) std::erase_if(params, [](auto* p) { return p->name == "rb.conv1.bias"; });
    GradChecker gc(inputs, params);
    gc.set_training(c.training);
    auto r = gc.run([&](Graph<double>& g, const std::vector<Var>& in) { return rb(g, in[0], cond ? in[1] : Var{}); });
    EXPECT_LT(r.max_rel_error, 1e-3) << c.name;
  }
}

TEST(PrimitiveGrad, SpectralLayers) {
  ParameterStore<double> s;
  Conv2d<double> conv(s, "c", 2, 3, 3, {1, -1, Padding::Reflect, true, true});
  Linear<double> lin(s, "l", 5, 4, true, true);
  Rng rng(25);
  randomize(s, rng);
  GradChecker gc({random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 5}, rng)}, trainable(s));
  auto r = gc.run([&](Graph<double>& g, const std::vector<Var>& in) {
    Var a = op::reshape(g, conv(g, in[0]), {2, 75});
    Var b = op::reshape(g, lin(g, in[1]), {1, 12});
    return op::concat_channels(g, {op::reshape(g, a, {1, 150, 1, 1}), op::reshape(g, b, {1, 12, 1, 1})});
  });
  EXPECT_LT(r.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace redo
