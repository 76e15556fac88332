#pragma once

// Composition algebra: I = sum_k M^k * V^k, and the redraw of a single region.

#include <cmath>
#include <string>
#include <vector>

#include "redo/scene.hpp"

namespace redo {

inline constexpr double kMaskOvershootClamp = 1e-3;

/// Appends the background plane M^n = 1 - sum_{k<n} M^k to n-1 object masks.
/// Per-pixel object mass up to 1 + 1e-3 is renormalized onto the simplex;
/// anything larger raises InvalidMaskError naming the worst pixel.
inline MaskSet complete_background_mask(const MaskStack& objects) {
  require(objects.count >= 1, "complete_background_mask needs at least one object mask");
  require(objects.values.size() == static_cast<std::size_t>(objects.count) * objects.width * objects.height,
          "object mask data does not match its shape");
  const int w = objects.width, h = objects.height, hw = w * h, n = objects.count + 1;
  int worst = -1;
  double worst_mass = 0;
  for (int p = 0; p < hw; ++p) {
    double sum = 0;
    for (int k = 0; k < objects.count; ++k) {
      const float v = objects.values[static_cast<std::size_t>(k) * hw + p];
      require(std::isfinite(v) && v >= 0.f && v <= 1.f, "object mask entry outside [0, 1]");
      sum += v;
    }
    if (sum > worst_mass) {
      worst_mass = sum;
      worst = p;
    }
  }
  if (worst_mass > 1.0 + kMaskOvershootClamp)
    throw InvalidMaskError("object masks overlap: mass " + std::to_string(worst_mass) + " at pixel (" +
                               std::to_string(worst % w) + ", " + std::to_string(worst / w) + ")",
                           worst % w, worst / w, worst_mass);

  MaskStack out(n, w, h);
  for (int p = 0; p < hw; ++p) {
    double sum = 0;
    for (int k = 0; k < objects.count; ++k) sum += objects.values[static_cast<std::size_t>(k) * hw + p];
    const double scale = sum > 1.0 ? 1.0 / sum : 1.0;
    double used = 0;
    for (int k = 0; k < objects.count; ++k) {
      const float v = static_cast<float>(objects.values[static_cast<std::size_t>(k) * hw + p] * scale);
      out.values[static_cast<std::size_t>(k) * hw + p] = v;
      used += v;
    }
    out.values[static_cast<std::size_t>(n - 1) * hw + p] = static_cast<float>(std::max(0.0, 1.0 - used));
  }
  return MaskSet(std::move(out));
}

/// Per-pixel convex combination sum_k M^k V^k.
///
/// Evaluated as  V^p + sum_k M^k (V^k - V^p)  with p the dominant region at the
/// pixel (lowest index on ties). This equals the plain sum on the simplex and
/// makes three cases exact: identical appearances, hard masks, and slots whose
/// appearance equals the dominant one.
inline Image compose(const MaskSet& masks, const std::vector<RegionAppearance>& appearances) {
  require(static_cast<int>(appearances.size()) == masks.regions(),
          "compose: expected " + std::to_string(masks.regions()) + " appearances, got " +
              std::to_string(appearances.size()));
  const Image& first = appearances.front();
  require(first.width == masks.width() && first.height == masks.height(), "compose: mask and appearance sizes differ");
  for (const Image& a : appearances) require(a.same_shape(first), "compose: appearances differ in shape");
  const int w = first.width, h = first.height, ch = first.channels, n = masks.regions(), hw = w * h;
  const std::vector<float>& m = masks.values();
  Image out(w, h, ch);
  for (int p = 0; p < hw; ++p) {
    int pivot = 0;
    for (int k = 1; k < n; ++k)
      if (m[static_cast<std::size_t>(k) * hw + p] > m[static_cast<std::size_t>(pivot) * hw + p]) pivot = k;
    for (int c = 0; c < ch; ++c) {
      const std::size_t o = static_cast<std::size_t>(c) * hw + p;
      const float base = appearances[pivot].pixels[o];
      float acc = 0.f;
      for (int k = 0; k < n; ++k) {
        const float diff = appearances[k].pixels[o] - base;
        if (diff != 0.f) acc += m[static_cast<std::size_t>(k) * hw + p] * diff;
      }
      out.pixels[o] = base + acc;
    }
  }
  return out;
}

/// Redraws region i only: compose with V^k = input for k != i and V^i = replacement.
/// Pixels where masks[i] is zero come back bit-identical to the input.
inline Image redraw_one(const Image& input, const MaskSet& masks, const RegionAppearance& replacement, RegionIndex i) {
  i.validate(masks.regions());
  require(input.same_shape(replacement), "redraw_one: replacement shape differs from the input");
  std::vector<RegionAppearance> slots(static_cast<std::size_t>(masks.regions()), input);
  slots[static_cast<std::size_t>(i.zero_based())] = replacement;
  return compose(masks, slots);
}

}  // namespace redo
