#pragma once

// Scene data model: images, soft mask sets and region indices.

#include <cmath>
#include <string>
#include <vector>

#include "redo/tensor.hpp"

namespace redo {

struct SceneConfig {
  int regions = 2;  // n: n-1 objects plus the background, which is always region n
  int width = 128;
  int height = 128;
  int channels = 3;
  int latent_dim = 32;

  void validate() const {
    require(regions >= 2, "scene needs at least two regions");
    require(width >= 1 && height >= 1 && channels >= 1 && latent_dim >= 1, "scene dimensions must be positive");
    require(width % 4 == 0 && height % 4 == 0, "scene width and height must be divisible by 4");
  }
};

/// W x H x C pixels stored channel-major (c, y, x). Pixel values live in [-1, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
  bool operator==(const Image&) const = default;

  /// Every value finite and inside [-1, 1].
  bool in_range() const {
    for (float v : pixels)
      if (!std::isfinite(v) || v < -1.f || v > 1.f) return false;
    return true;
  }
};

/// Appearance proposed for one region; same layout as an image.
using RegionAppearance = Image;

/// `count` planes of W x H values, plane-major. No simplex requirement.
struct MaskStack {
  int count = 0;
  int width = 0;
  int height = 0;
  std::vector<float> values;

  MaskStack() = default;
  MaskStack(int n, int w, int h, float fill = 0.f)
      : count(n), width(w), height(h), values(static_cast<std::size_t>(n) * w * h, fill) {}

  float& at(int k, int x, int y) { return values[(static_cast<std::size_t>(k) * height + y) * width + x]; }
  float at(int k, int x, int y) const { return values[(static_cast<std::size_t>(k) * height + y) * width + x]; }
  bool operator==(const MaskStack&) const = default;
};

/// n soft masks forming a per-pixel probability simplex. Region k (0-based
/// here) corresponds to the 1-based RegionIndex k + 1; the last plane is the background.
class MaskSet {
 public:
  static constexpr double kSimplexTolerance = 1e-5;

  MaskSet() = default;

  /// Validates entries in [0, 1] and per-pixel sums within kSimplexTolerance of 1.
  explicit MaskSet(MaskStack stack) : stack_(std::move(stack)) {
    require(stack_.count >= 2, "a mask set needs at least two regions");
    const int hw = stack_.width * stack_.height;
    for (int p = 0; p < hw; ++p) {
      double sum = 0;
      for (int k = 0; k < stack_.count; ++k) {
        const float v = stack_.values[static_cast<std::size_t>(k) * hw + p];
        require(std::isfinite(v) && v >= 0.f && v <= 1.f, "mask entry outside [0, 1]");
        sum += v;
      }
      require(std::abs(sum - 1.0) <= kSimplexTolerance,
              "mask set is not a simplex at pixel " + std::to_string(p) + " (sum " + std::to_string(sum) + ")");
    }
  }

  int regions() const { return stack_.count; }
  int width() const { return stack_.width; }
  int height() const { return stack_.height; }
  float at(int k, int x, int y) const { return stack_.at(k, x, y); }
  const MaskStack& stack() const { return stack_; }
  const std::vector<float>& values() const { return stack_.values; }
  bool operator==(const MaskSet& o) const { return stack_ == o.stack_; }

 private:
  MaskStack stack_;
};

/// 1-based region number; region n is the background and a legal redraw target.
struct RegionIndex {
  int value = 1;

  int zero_based() const { return value - 1; }
  void validate(int regions) const {
    require(value >= 1 && value <= regions,
            "region index " + std::to_string(value) + " outside 1.." + std::to_string(regions));
  }
};

/// Packs images into an NCHW batch tensor.
template <class T = float>
Tensor<T> to_batch(const std::vector<Image>& images) {
  require(!images.empty(), "to_batch on an empty list");
  const Image& f = images.front();
  Tensor<T> out({static_cast<int>(images.size()), f.channels, f.height, f.width});
  std::size_t off = 0;
  for (const Image& im : images) {
    require(im.same_shape(f), "to_batch: images differ in shape");
    for (float v : im.pixels) out[off++] = static_cast<T>(v);
  }
  return out;
}

template <class T>
Image image_from_batch(const Tensor<T>& batch, int index) {
  require(batch.rank() == 4 && index >= 0 && index < batch.dim(0), "image_from_batch index out of range");
  Image im(batch.dim(3), batch.dim(2), batch.dim(1));
  const std::size_t n = im.pixels.size();
  for (std::size_t i = 0; i < n; ++i) im.pixels[i] = static_cast<float>(batch[index * n + i]);
  return im;
}

template <class T>
MaskSet masks_from_batch(const Tensor<T>& batch, int index) {
  require(batch.rank() == 4 && index >= 0 && index < batch.dim(0), "masks_from_batch index out of range");
  MaskStack s(batch.dim(1), batch.dim(3), batch.dim(2));
  const std::size_t n = s.values.size();
  for (std::size_t i = 0; i < n; ++i) s.values[i] = static_cast<float>(batch[index * n + i]);
  return MaskSet(std::move(s));
}

template <class T = float>
Tensor<T> masks_to_batch(const std::vector<MaskSet>& masks) {
  require(!masks.empty(), "masks_to_batch on an empty list");
  const MaskSet& f = masks.front();
  Tensor<T> out({static_cast<int>(masks.size()), f.regions(), f.height(), f.width()});
  std::size_t off = 0;
  for (const MaskSet& m : masks)
    for (float v : m.values()) out[off++] = static_cast<T>(v);
  return out;
}

}  // namespace redo
