#include <gtest/gtest.h>

#include <vector>

#include "redo/objectives.hpp"
#include "redo/random.hpp"

using namespace redo;

namespace {

double info(const std::vector<double>& a, const std::vector<double>& b) {
  return information_conservation_loss<double>(a, b);
}

}  // namespace

TEST(HingeLoss, Examples) {
  EXPECT_EQ(discriminator_hinge_loss(2.0, -2.0), 0.0);
  EXPECT_EQ(discriminator_hinge_loss(0.0, 0.0), 2.0);
  EXPECT_EQ(discriminator_hinge_loss(1.0, -1.0), 0.0);
  EXPECT_EQ(generator_adversarial_loss(3.0), -3.0);
  EXPECT_EQ(generator_adversarial_loss(0.0), 0.0);
  EXPECT_EQ(generator_adversarial_loss(-1.5), 1.5);
}

TEST(HingeLoss, MonotoneAndBounded) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double r = 3 * normal(rng), f = 3 * normal(rng), dr = std::abs(normal(rng)), df = std::abs(normal(rng));
    const double l = discriminator_hinge_loss(r, f);
    EXPECT_LE(discriminator_hinge_loss(r + dr, f), l);
    EXPECT_GE(discriminator_hinge_loss(r, f + df), l);
    EXPECT_GE(l, 0.0);
    if (r < 1 || f > -1)
      EXPECT_GT(l, 0.0);
    else
      EXPECT_EQ(l, 0.0);
  }
}

TEST(HingeLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const double h = 1e-6;
  for (int t = 0; t < 200; ++t) {
    const double r = 3 * normal(rng), f = 3 * normal(rng);
    if (std::abs(r - 1) < 1e-3 || std::abs(f + 1) < 1e-3) continue;  // kinks
    const auto [gr, gf] = discriminator_hinge_grad(r, f);
    const double nr = (discriminator_hinge_loss(r + h, f) - discriminator_hinge_loss(r - h, f)) / (2 * h);
    const double nf = (discriminator_hinge_loss(r, f + h) - discriminator_hinge_loss(r, f - h)) / (2 * h);
    EXPECT_NEAR(gr, nr, 1e-6);
    EXPECT_NEAR(gf, nf, 1e-6);
    const double ng = (generator_adversarial_loss(f + h) - generator_adversarial_loss(f - h)) / (2 * h);
    EXPECT_NEAR(ng, -1.0, 1e-6);
  }
}

TEST(HingeLoss, BatchMean) {
  std::vector<double> real{2.0, 0.0, 0.5}, fake{-2.0, 0.0, -0.5};
  double expect = 0;
  for (int k = 0; k < 3; ++k) expect += discriminator_hinge_loss(real[k], fake[k]);
  EXPECT_NEAR(mean_discriminator_loss<double>(real, fake), expect / 3, 1e-15);
}

TEST(InfoLoss, Examples) {
  EXPECT_EQ(info({0.3, -1.2}, {0.3, -1.2}), 0.0);
  EXPECT_EQ(info({1, 0}, {0, 0}), 1.0);
  EXPECT_EQ(info({1, 2, 3}, {1, 2, 2}), 1.0);
  EXPECT_THROW(info({1, 2}, {1, 2, 3}), ContractError);
}

TEST(InfoLoss, SymmetricWithGradientIdentity) {
  Rng rng(3);
  const double h = 1e-6;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(8), b(8);
    for (int j = 0; j < 8; ++j) {
      a[j] = normal(rng);
      b[j] = normal(rng);
    }
    EXPECT_EQ(info(a, b), info(b, a));
    EXPECT_GE(info(a, b), 0.0);
    const std::vector<double> g = information_conservation_grad<double>(a, b);
    for (int j = 0; j < 8; ++j) {
      EXPECT_EQ(g[j], 2 * (a[j] - b[j]));
      std::vector<double> p = a, m = a;
      p[j] += h;
      m[j] -= h;
      const double num = (info(p, b) - info(m, b)) / (2 * h);
      EXPECT_LT(std::abs(num - g[j]) / std::max(std::abs(g[j]), 1e-6), 1e-3);
    }
  }
}

TEST(TotalLoss, Examples) {
  std::vector<double> z{0.5, -0.5}, same = z, off{2.5, -0.5};
  EXPECT_NEAR(generator_total_loss<double>(1.0, same, z, 0.1), -1.0, 1e-15);
  EXPECT_NEAR(generator_total_loss<double>(0.0, off, z, 0.1), 0.4, 1e-15);
  EXPECT_EQ(generator_total_loss<double>(0.7, off, z, 0.0), -0.7);
}

TEST(LambdaZ, Formula) {
  EXPECT_EQ(lambda_z_value(2, 32), 0.078125);
  EXPECT_EQ(lambda_z_value(2, 32, LambdaPreset::Lfw), 0.234375);
  EXPECT_EQ(lambda_z_value(2, 32) * 2 * 32, 5.0);
  EXPECT_NEAR(lambda_z_value(3, 16), 5.0 / 48, 1e-15);
  EXPECT_THROW(lambda_z_value(0, 32), ContractError);

  LossWeights w;
  EXPECT_EQ(w.resolve(2, 32), 0.078125);
  w.preset = LambdaPreset::Lfw;
  EXPECT_EQ(w.resolve(2, 32), 0.234375);
  w.mode = LossWeights::Mode::Explicit;
  w.lambda_z = 0.5;
  EXPECT_EQ(w.resolve(2, 32), 0.5);
  w.lambda_z = -1;
  EXPECT_THROW(w.resolve(2, 32), ContractError);
}
