#pragma once

// Hinge adversarial losses, the information-conservation term and the lambda_z schedule.
// Everything here is written in minimized form.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "redo/error.hpp"

namespace redo {

enum class LambdaPreset { Default, Lfw };

/// lambda_z = 5 / (n d), or 15 / (n d) for the faces preset.
inline double lambda_z_value(int regions, int latent_dim, LambdaPreset preset = LambdaPreset::Default) {
  require(regions >= 1 && latent_dim >= 1, "lambda_z_value needs positive n and d");
  const double numerator = preset == LambdaPreset::Lfw ? 15.0 : 5.0;
  return numerator / (static_cast<double>(regions) * latent_dim);
}

struct LossWeights {
  enum class Mode { Auto, Explicit };
  Mode mode = Mode::Auto;
  LambdaPreset preset = LambdaPreset::Default;
  double lambda_z = 0.0;  // used in explicit mode

  double resolve(int regions, int latent_dim) const {
    if (mode == Mode::Auto) return lambda_z_value(regions, latent_dim, preset);
    require(lambda_z >= 0.0, "lambda_z must be non-negative");
    return lambda_z;
  }
};

/// -[min(0, -1 + real) + min(0, -1 - fake)]
template <class T>
T discriminator_hinge_loss(T score_real, T score_fake) {
  return -(std::min(T(0), T(-1) + score_real) + std::min(T(0), T(-1) - score_fake));
}

/// d/d(real) and d/d(fake) of discriminator_hinge_loss (0 on the flat side, at the kink too).
template <class T>
std::pair<T, T> discriminator_hinge_grad(T score_real, T score_fake) {
  return {score_real < T(1) ? T(-1) : T(0), score_fake > T(-1) ? T(1) : T(0)};
}

template <class T>
T generator_adversarial_loss(T score_fake) {
  return -score_fake;
}

/// sum_j (zhat_j - z_j)^2
template <class T>
T information_conservation_loss(std::span<const T> z_hat, std::span<const T> z) {
  require(z_hat.size() == z.size(), "information loss: latent sizes differ (" + std::to_string(z_hat.size()) + " vs " +
                                        std::to_string(z.size()) + ")");
  T s = 0;
  for (std::size_t j = 0; j < z.size(); ++j) s += (z_hat[j] - z[j]) * (z_hat[j] - z[j]);
  return s;
}

/// d/d(zhat) = 2 (zhat - z)
template <class T>
std::vector<T> information_conservation_grad(std::span<const T> z_hat, std::span<const T> z) {
  require(z_hat.size() == z.size(), "information loss: latent sizes differ");
  std::vector<T> g(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) g[j] = T(2) * (z_hat[j] - z[j]);
  return g;
}

template <class T>
T generator_total_loss(T score_fake, std::span<const T> z_hat, std::span<const T> z, double lambda_z) {
  return generator_adversarial_loss(score_fake) + static_cast<T>(lambda_z) * information_conservation_loss(z_hat, z);
}

/// Batch means of the scalar losses above. Rows of `z_hat` / `z` are samples.
template <class T>
T mean_discriminator_loss(std::span<const T> real, std::span<const T> fake) {
  require(!real.empty() && !fake.empty(), "empty score batch");
  T a = 0, b = 0;
  for (T r : real) a += -std::min(T(0), T(-1) + r);
  for (T f : fake) b += -std::min(T(0), T(-1) - f);
  return a / static_cast<T>(real.size()) + b / static_cast<T>(fake.size());
}

}  // namespace redo
