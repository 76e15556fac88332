#pragma once

// Synthetic datasets, image-folder ingestion and splits.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "redo/png_io.hpp"
#include "redo/random.hpp"
#include "redo/scene.hpp"

namespace redo {

struct LabeledExample {
  std::string id;
  Image image;
  std::optional<MaskSet> gt;  // hard masks, one-hot per pixel
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Binary 28x28-style digit glyphs with their digit labels.
struct GlyphSet {
  int width = 0;
  int height = 0;
  std::vector<std::vector<std::uint8_t>> glyphs;  // 0 or 1 per pixel, row-major
  std::vector<int> labels;
};

/// h in degrees, s and v in [0, 1]; returns RGB in [0, 1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

/// 8-bit value mapped to [-1, 1] as q / 127.5 - 1.
inline float from_byte(std::uint8_t q) { return static_cast<float>(q / 127.5 - 1.0); }
std::uint8_t to_byte(float v);

Image image_from_raster(const Raster& r, int channels = 3);
Raster raster_from_image(const Image& im);
/// Mask PNG layout: pixel value = 0-based region id (background is n - 1).
Raster raster_from_masks(const MaskSet& m);
MaskSet masks_from_raster(const Raster& r, int regions);
/// One grayscale plane per region, 255 * mass.
Raster raster_from_plane(const MaskSet& m, int region);

/// IDX files (big-endian, magic 2051 for images, 2049 for labels); glyphs are binarized at 0.5.
GlyphSet read_idx_glyphs(const std::string& images_path, const std::string& labels_path);
/// Stand-in glyphs when no digit files are at hand: stroke-drawn digits with random
/// thickness, shear, rotation and scale, centered in 28x28 like the originals.
GlyphSet synthetic_glyphs(int count, Rng& rng);

/// n = 3: region 1 odd digit, region 2 even digit, region 3 background.
std::vector<LabeledExample> make_colored_2mnist(int count, int size, const GlyphSet& glyphs, Rng& rng);
/// n = 2: region 1 a filled disc, region 2 the background.
std::vector<LabeledExample> make_blob_toy(int count, int size, Rng& rng);

Image resize_bilinear(const Image& im, int width, int height);
Raster resize_nearest(const Raster& r, int width, int height);
/// Short side to `size`, then center crop to size x size. Returns the intermediate size.
std::pair<int, int> short_side_geometry(int width, int height, int size);

/// Short-side resize (bilinear) and center crop to size x size.
Image preprocess_image(const Raster& raw, int size);
/// Same geometry with nearest-neighbour resampling, then region ids to masks.
MaskSet preprocess_mask(const Raster& raw, int size, int regions);

struct FolderLoad {
  std::vector<LabeledExample> examples;
  std::vector<std::string> skipped;  // "file: reason"
};

/// Loads every .png under `path` (sorted by name). With `gt_path`, masks are matched by file name.
FolderLoad load_image_folder(const std::string& path, int size, const std::optional<std::string>& gt_path = {},
                             int regions = 2);

/// Splits by fractions (train, val, test); val and test sizes are rounded, train takes the rest.
DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<double, 3> fractions, Rng& rng);
/// Explicit lists; they must be disjoint and cover `ids` exactly.
DatasetSplit split_dataset(const std::vector<std::string>& ids, const DatasetSplit& lists);
inline constexpr std::array<double, 3> kFlowersFractions{6149.0 / 8189.0, 1020.0 / 8189.0, 1020.0 / 8189.0};

/// images/<id>.png, masks/<id>.png and manifest.csv (id,split).
void write_dataset(const std::string& dir, const std::vector<LabeledExample>& examples, const DatasetSplit& split);

struct StoredDataset {
  std::vector<LabeledExample> examples;
  DatasetSplit split;
  std::vector<LabeledExample> subset(const std::vector<std::string>& ids) const;
};
StoredDataset read_dataset(const std::string& dir, int size, int regions);

}  // namespace redo
