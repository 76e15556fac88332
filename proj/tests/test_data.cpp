#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "redo/data.hpp"

using namespace redo;
namespace fs = std::filesystem;

namespace {

double hue_of(const Image& im, int x, int y) {
  const double r = (im.at(x, y, 0) + 1) / 2, g = (im.at(x, y, 1) + 1) / 2, b = (im.at(x, y, 2) + 1) / 2;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  if (d <= 0) return -1;
  double h;
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2;
  else
    h = (r - g) / d + 4;
  h *= 60;
  return h < 0 ? h + 360 : h;
}

int region_at(const MaskSet& m, int x, int y) {
  for (int k = 0; k < m.regions(); ++k)
    if (m.at(k, x, y) == 1.f) return k;
  return -1;
}

void expect_one_hot(const MaskSet& m) {
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      int ones = 0;
      for (int k = 0; k < m.regions(); ++k) {
        const float v = m.at(k, x, y);
        ASSERT_TRUE(v == 0.f || v == 1.f);
        ones += v == 1.f;
      }
      ASSERT_EQ(ones, 1);
    }
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path(::testing::TempDir()) / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_be32(std::ofstream& o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

TEST(PixelRange, ByteMapping) {
  EXPECT_EQ(from_byte(0), -1.f);
  EXPECT_EQ(from_byte(255), 1.f);
  for (int q = 0; q < 256; ++q) EXPECT_EQ(to_byte(from_byte(static_cast<std::uint8_t>(q))), q);
  EXPECT_EQ(to_byte(-3.f), 0);
  EXPECT_EQ(to_byte(3.f), 255);
}

TEST(BlobToy, AreaMatchesDisc) {
  const int size = 128;
  Rng rng(21);
  Rng replay = rng;
  auto blobs = make_blob_toy(60, size, rng);
  int checked = 0;
  for (const LabeledExample& ex : blobs) {
    // replay the generator's draws: two colors, then radius and center
    for (int k = 0; k < 6; ++k) uniform01(replay);
    const double r = uniform(replay, size / 8.0, size / 3.0);
    const double cx = uniform(replay, r / 2, size - r / 2);
    const double cy = uniform(replay, r / 2, size - r / 2);
    ASSERT_GE(r, size / 8.0);
    ASSERT_LE(r, size / 3.0);
    if (cx - r < 0 || cy - r < 0 || cx + r > size || cy + r > size) continue;
    double mass = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) mass += ex.gt->at(0, x, y);
    const double area = std::numbers::pi * r * r;
    EXPECT_NEAR(mass / area, 1.0, 0.05) << ex.id;
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(BlobToy, HueRangesAndMasks) {
  Rng rng(22);
  auto blobs = make_blob_toy(100, 32, rng);
  ASSERT_EQ(blobs.size(), 100u);
  EXPECT_EQ(blobs[0].id, "blob_000000");
  for (const LabeledExample& ex : blobs) {
    ASSERT_TRUE(ex.image.in_range());
    ASSERT_TRUE(ex.gt.has_value());
    ASSERT_EQ(ex.gt->regions(), 2);
    expect_one_hot(*ex.gt);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double h = hue_of(ex.image, x, y);
        if (region_at(*ex.gt, x, y) == 0) {
          ASSERT_GE(h, -1e-3);
          ASSERT_LT(h, 180 + 1e-3);
        } else {
          ASSERT_GE(h, 180 - 1e-3);
          ASSERT_LT(h, 360 + 1e-3);
        }
      }
  }
}

TEST(BlobToy, Deterministic) {
  Rng a(5), b(5);
  auto x = make_blob_toy(20, 32, a), y = make_blob_toy(20, 32, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].image, y[i].image);
    EXPECT_EQ(*x[i].gt, *y[i].gt);
  }
  EXPECT_THROW(make_blob_toy(1, 16, a), ContractError);
}

TEST(Colored2Mnist, RegionsHuesAndBackgroundMass) {
  Rng rng(31);
  GlyphSet glyphs = synthetic_glyphs(200, rng);
  auto data = make_colored_2mnist(1000, 64, glyphs, rng);
  ASSERT_EQ(data.size(), 1000u);
  double bg = 0;
  for (const LabeledExample& ex : data) {
    ASSERT_TRUE(ex.image.in_range());
    ASSERT_EQ(ex.gt->regions(), 3);
    expect_one_hot(*ex.gt);
    double mass = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int k = region_at(*ex.gt, x, y);
        mass += k == 2;
        const double h = hue_of(ex.image, x, y);
        if (k == 0) {
          ASSERT_GE(h, -1e-3);
          ASSERT_LT(h, 120 + 1e-3);
        } else if (k == 1) {
          ASSERT_GE(h, 180 - 1e-3);
          ASSERT_LT(h, 300 + 1e-3);
        }
      }
    bg += mass / (64 * 64);
  }
  EXPECT_GE(bg / 1000, 0.5);
  EXPECT_TRUE(make_colored_2mnist(0, 64, glyphs, rng).empty());
}

TEST(Colored2Mnist, BothDigitsUsuallyVisible) {
  Rng rng(32);
  GlyphSet glyphs = synthetic_glyphs(100, rng);
  auto data = make_colored_2mnist(200, 64, glyphs, rng);
  int both = 0;
  for (const LabeledExample& ex : data) {
    std::set<int> seen;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) seen.insert(region_at(*ex.gt, x, y));
    both += seen.size() == 3;
  }
  EXPECT_GT(both, 180);
}

TEST(SyntheticGlyphs, ParityAndShape) {
  Rng rng(33);
  GlyphSet g = synthetic_glyphs(50, rng);
  EXPECT_EQ(g.width, 28);
  EXPECT_EQ(g.height, 28);
  ASSERT_EQ(g.glyphs.size(), 50u);
  for (std::size_t i = 0; i < g.glyphs.size(); ++i) {
    EXPECT_EQ(g.labels[i], static_cast<int>(i % 10));
    int on = 0;
    for (std::uint8_t v : g.glyphs[i]) {
      ASSERT_TRUE(v == 0 || v == 1);
      on += v;
    }
    EXPECT_GT(on, 20);
    EXPECT_LT(on, 28 * 28 / 2);
  }
}

TEST(Idx, ReadsAndBinarizes) {
  TempDir dir("idx");
  const std::string img = (dir.path / "images-idx3-ubyte").string(), lab = (dir.path / "labels-idx1-ubyte").string();
  {
    std::ofstream o(img, std::ios::binary);
    write_be32(o, 2051);
    write_be32(o, 3);
    write_be32(o, 2);
    write_be32(o, 4);
    for (int k = 0; k < 3; ++k)
      for (int p = 0; p < 8; ++p) o.put(static_cast<char>((p + k) % 2 ? 200 : (p == 0 ? 128 : 127)));
    std::ofstream l(lab, std::ios::binary);
    write_be32(l, 2049);
    write_be32(l, 3);
    for (char c : {7, 2, 4}) l.put(c);
  }
  GlyphSet g = read_idx_glyphs(img, lab);
  EXPECT_EQ(g.width, 4);
  EXPECT_EQ(g.height, 2);
  EXPECT_EQ(g.labels, (std::vector<int>{7, 2, 4}));
  EXPECT_EQ(g.glyphs[0], (std::vector<std::uint8_t>{1, 1, 0, 1, 0, 1, 0, 1}));
  EXPECT_EQ(g.glyphs[1][0], 1);

  {
    std::ofstream o(img, std::ios::binary);
    write_be32(o, 2049);
    write_be32(o, 0);
  }
  EXPECT_THROW(read_idx_glyphs(img, lab), IoError);
  EXPECT_THROW(read_idx_glyphs((dir.path / "missing").string(), lab), IoError);
}

TEST(Geometry, ShortSideResize) {
  EXPECT_EQ(short_side_geometry(300, 200, 128), (std::pair<int, int>{192, 128}));
  EXPECT_EQ(short_side_geometry(200, 300, 128), (std::pair<int, int>{128, 192}));
  EXPECT_EQ(short_side_geometry(64, 64, 128), (std::pair<int, int>{128, 128}));
}

TEST(Png, RoundTrip) {
  TempDir dir("png");
  Raster rgb(5, 3, 3), gray(4, 4, 1);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<std::uint8_t>(i * 7);
  for (std::size_t i = 0; i < gray.data.size(); ++i) gray.data[i] = static_cast<std::uint8_t>(i * 13);
  write_png((dir.path / "a.png").string(), rgb);
  write_png((dir.path / "b.png").string(), gray);
  Raster a = read_png((dir.path / "a.png").string()), b = read_png((dir.path / "b.png").string());
  EXPECT_EQ(a.data, rgb.data);
  EXPECT_EQ(a.channels, 3);
  EXPECT_EQ(b.data, gray.data);
  EXPECT_EQ(b.channels, 1);
  EXPECT_THROW(read_png((dir.path / "nope.png").string()), IoError);
  std::ofstream((dir.path / "junk.png").string()) << "not a png";
  EXPECT_THROW(read_png((dir.path / "junk.png").string()), IoError);
}

TEST(Masks, RasterRoundTrip) {
  Rng rng(4);
  auto blobs = make_blob_toy(1, 32, rng);
  Raster r = raster_from_masks(*blobs[0].gt);
  std::set<int> values(r.data.begin(), r.data.end());
  EXPECT_EQ(values, (std::set<int>{0, 1}));
  EXPECT_EQ(masks_from_raster(r, 2), *blobs[0].gt);
  // two regions also accept a 0/255 matte
  Raster matte(2, 1, 1);
  matte.data = {255, 3};
  MaskSet m = masks_from_raster(matte, 2);
  EXPECT_EQ(m.at(0, 0, 0), 1.f);
  EXPECT_EQ(m.at(1, 1, 0), 1.f);
  Raster bad(2, 2, 1);
  bad.data = {0, 1, 5, 1};
  EXPECT_THROW(masks_from_raster(bad, 3), IoError);
}

// a 300x200 checkerboard image and identical mask pair
TEST(Folder, GeometryMatchesBetweenImageAndMask) {
  TempDir dir("folder");
  fs::create_directories(dir.path / "img");
  fs::create_directories(dir.path / "gt");
  Raster im(300, 200, 3), mk(300, 200, 1);
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 300; ++x) {
      const bool on = ((x / 25) + (y / 25)) % 2;
      for (int c = 0; c < 3; ++c) im.at(x, y, c) = on ? 255 : 0;
      mk.at(x, y, 0) = on ? 0 : 1;
    }
  write_png((dir.path / "img" / "a.png").string(), im);
  write_png((dir.path / "gt" / "a.png").string(), mk);
  write_png((dir.path / "img" / "b.png").string(), Raster(64, 64, 3));
  write_png((dir.path / "gt" / "b.png").string(), Raster(64, 64, 1));
  std::ofstream((dir.path / "img" / "c.png").string()) << "broken";
  std::ofstream((dir.path / "gt" / "c.png").string()) << "broken";

  FolderLoad load = load_image_folder((dir.path / "img").string(), 128, (dir.path / "gt").string(), 2);
  ASSERT_EQ(load.examples.size(), 2u);
  EXPECT_EQ(load.skipped.size(), 1u);
  const LabeledExample& a = load.examples[0];
  EXPECT_EQ(a.id, "a");
  EXPECT_EQ(a.image.width, 128);
  EXPECT_EQ(a.image.height, 128);
  // 300x200 -> 192x128, crop offset 32 in x; source cell size 25 -> 16 after scaling
  int agree = 0, total = 0;
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) {
      const double sx = (x + 32 + 0.5) * 300.0 / 192.0, sy = (y + 0.5) * 200.0 / 128.0;
      const bool want = ((static_cast<int>(sx) / 25) + (static_cast<int>(sy) / 25)) % 2;
      const bool bright = a.image.at(x, y, 0) > 0;
      const bool masked = a.gt->at(0, x, y) == 1.f;
      agree += masked == bright;
      total += 1;
      if (std::fmod(sx, 25.0) > 2 && std::fmod(sx, 25.0) < 23 && std::fmod(sy, 25.0) > 2 && std::fmod(sy, 25.0) < 23) {
        ASSERT_EQ(bright, want) << x << "," << y;
        ASSERT_EQ(masked, want) << x << "," << y;
      }
    }
  EXPECT_GT(agree, total * 0.97);

  // square input: pure resize
  EXPECT_EQ(load.examples[1].image.width, 128);

  // idempotent
  FolderLoad again = load_image_folder((dir.path / "img").string(), 128, (dir.path / "gt").string(), 2);
  ASSERT_EQ(again.examples.size(), load.examples.size());
  for (std::size_t i = 0; i < again.examples.size(); ++i) {
    EXPECT_EQ(again.examples[i].id, load.examples[i].id);
    EXPECT_EQ(again.examples[i].image, load.examples[i].image);
    EXPECT_EQ(*again.examples[i].gt, *load.examples[i].gt);
  }

  fs::remove(dir.path / "gt" / "b.png");
  EXPECT_THROW(load_image_folder((dir.path / "img").string(), 128, (dir.path / "gt").string(), 2), IoError);
}

TEST(Split, Fractions) {
  std::vector<std::string> ids;
  for (int i = 0; i < 8189; ++i) ids.push_back("x" + std::to_string(i));
  Rng a(1), b(1);
  DatasetSplit s = split_dataset(ids, kFlowersFractions, a);
  EXPECT_EQ(s.train.size(), 6149u);
  EXPECT_EQ(s.val.size(), 1020u);
  EXPECT_EQ(s.test.size(), 1020u);
  std::set<std::string> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), ids.size());
  DatasetSplit t = split_dataset(ids, kFlowersFractions, b);
  EXPECT_EQ(s.train, t.train);
  EXPECT_EQ(s.test, t.test);

  DatasetSplit only = split_dataset(ids, {1, 0, 0}, a);
  EXPECT_EQ(only.train.size(), ids.size());
  EXPECT_TRUE(only.val.empty() && only.test.empty());
  EXPECT_THROW(split_dataset(ids, {0.5, 0.2, 0.2}, a), ContractError);
}

TEST(Split, ExplicitLists) {
  std::vector<std::string> ids{"a", "b", "c", "d"};
  DatasetSplit ok{{"a", "b"}, {"c"}, {"d"}};
  EXPECT_EQ(split_dataset(ids, ok).val, (std::vector<std::string>{"c"}));
  EXPECT_THROW(split_dataset(ids, DatasetSplit{{"a", "b"}, {"b"}, {"c", "d"}}), ContractError);
  EXPECT_THROW(split_dataset(ids, DatasetSplit{{"a"}, {"c"}, {"d"}}), ContractError);
  EXPECT_THROW(split_dataset(ids, DatasetSplit{{"a", "b", "e"}, {"c"}, {"d"}}), ContractError);
}

TEST(Dataset, WriteReadRoundTrip) {
  TempDir dir("ds");
  Rng rng(9);
  auto blobs = make_blob_toy(10, 32, rng);
  std::vector<std::string> ids;
  for (auto& e : blobs) ids.push_back(e.id);
  DatasetSplit split = split_dataset(ids, {0.6, 0.2, 0.2}, rng);
  write_dataset(dir.path.string(), blobs, split);
  EXPECT_TRUE(fs::exists(dir.path / "manifest.csv"));
  StoredDataset ds = read_dataset(dir.path.string(), 32, 2);
  ASSERT_EQ(ds.examples.size(), 10u);
  auto sorted = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(sorted(ds.split.val), sorted(split.val));
  EXPECT_EQ(sorted(ds.split.test), sorted(split.test));
  std::vector<LabeledExample> test = ds.subset(split.test);
  ASSERT_EQ(test.size(), split.test.size());
  for (const LabeledExample& e : test) {
    const auto it = std::find_if(blobs.begin(), blobs.end(), [&](const LabeledExample& b) { return b.id == e.id; });
    ASSERT_NE(it, blobs.end());
    EXPECT_EQ(*e.gt, *it->gt);
    for (std::size_t k = 0; k < e.image.pixels.size(); ++k) ASSERT_NEAR(e.image.pixels[k], it->image.pixels[k], 1.0 / 127.5);
  }
}
