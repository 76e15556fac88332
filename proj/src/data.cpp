#include "redo/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "redo/error.hpp"

namespace fs = std::filesystem;

namespace redo {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::uint8_t to_byte(float v) {
  const double q = std::round((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

Image image_from_raster(const Raster& r, int channels) {
  require(r.channels == 1 || r.channels == 3, "raster must be gray or RGB");
  require(channels == 1 || channels == 3, "images are gray or RGB");
  Image im(r.width, r.height, channels);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) {
        std::uint8_t q;
        if (r.channels == channels) {
          q = r.at(x, y, c);
        } else if (r.channels == 1) {
          q = r.at(x, y, 0);
        } else {
          q = static_cast<std::uint8_t>(
              std::lround(0.299 * r.at(x, y, 0) + 0.587 * r.at(x, y, 1) + 0.114 * r.at(x, y, 2)));
        }
        im.at(x, y, c) = from_byte(q);
      }
  return im;
}

Raster raster_from_image(const Image& im) {
  require(im.channels == 1 || im.channels == 3, "only gray or RGB images can be written");
  Raster r(im.width, im.height, im.channels);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) r.at(x, y, c) = to_byte(im.at(x, y, c));
  return r;
}

Raster raster_from_masks(const MaskSet& m) {
  Raster r(m.width(), m.height(), 1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      int best = 0;
      for (int k = 1; k < m.regions(); ++k)
        if (m.at(k, x, y) > m.at(best, x, y)) best = k;
      r.at(x, y, 0) = static_cast<std::uint8_t>(best);
    }
  return r;
}

Raster raster_from_plane(const MaskSet& m, int region) {
  require(region >= 0 && region < m.regions(), "mask plane out of range");
  Raster r(m.width(), m.height(), 1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      r.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(std::clamp(m.at(region, x, y), 0.f, 1.f) * 255.0));
  return r;
}

MaskSet masks_from_raster(const Raster& r, int regions) {
  require(regions >= 2 && regions <= 256, "mask regions must be in 2..256");
  int top = 0;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) top = std::max<int>(top, r.at(x, y, 0));
  // Region ids when every value fits, otherwise a 0/255 foreground matte thresholded at one half.
  const bool ids = top < regions;
  if (!ids && regions != 2)
    throw IoError("mask values up to " + std::to_string(top) + " do not fit " + std::to_string(regions) + " regions");
  MaskStack s(regions, r.width, r.height);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const int v = r.at(x, y, 0);
      const int k = ids ? v : (v >= 128 ? 0 : 1);
      s.at(k, x, y) = 1.f;
    }
  return MaskSet(std::move(s));
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

}  // namespace

GlyphSet read_idx_glyphs(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) throw IoError("cannot open " + images_path);
  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) throw IoError("cannot open " + labels_path);
  if (read_be32(im, images_path) != 2051) throw IoError(images_path + ": bad magic, expected 2051");
  if (read_be32(lb, labels_path) != 2049) throw IoError(labels_path + ": bad magic, expected 2049");
  const std::uint32_t count = read_be32(im, images_path);
  const std::uint32_t rows = read_be32(im, images_path);
  const std::uint32_t cols = read_be32(im, images_path);
  const std::uint32_t nlabels = read_be32(lb, labels_path);
  if (count != nlabels) throw IoError("IDX image and label counts differ");
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) throw IoError("implausible IDX glyph size");

  GlyphSet out;
  out.width = static_cast<int>(cols);
  out.height = static_cast<int>(rows);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!im.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IoError("truncated IDX image data in " + images_path);
    char label;
    if (!lb.get(label)) throw IoError("truncated IDX label data in " + labels_path);
    std::vector<std::uint8_t> g(buf.size());
    for (std::size_t k = 0; k < buf.size(); ++k) g[k] = buf[k] >= 128 ? 1 : 0;
    out.glyphs.push_back(std::move(g));
    out.labels.push_back(static_cast<unsigned char>(label));
  }
  return out;
}

namespace {

using Stroke = std::vector<std::array<double, 2>>;

std::vector<Stroke> ellipse(double cx, double cy, double rx, double ry) {
  Stroke s;
  for (int k = 0; k <= 16; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 16;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return {s};
}

std::vector<Stroke> digit_strokes(int d) {
  switch (d) {
    case 0: return ellipse(0.5, 0.5, 0.32, 0.45);
    case 1: return {{{0.35, 0.2}, {0.55, 0.05}, {0.55, 0.95}}};
    case 2: return {{{0.2, 0.25}, {0.35, 0.08}, {0.65, 0.08}, {0.8, 0.25}, {0.75, 0.45}, {0.2, 0.95}, {0.82, 0.95}}};
    case 3: return {{{0.2, 0.1}, {0.8, 0.1}, {0.45, 0.45}, {0.75, 0.6}, {0.75, 0.85}, {0.55, 0.95}, {0.2, 0.9}}};
    case 4: return {{{0.65, 0.95}, {0.65, 0.05}, {0.15, 0.65}, {0.85, 0.65}}};
    case 5:
      return {{{0.8, 0.05}, {0.25, 0.05}, {0.22, 0.45}, {0.6, 0.4}, {0.8, 0.6}, {0.75, 0.85}, {0.5, 0.95}, {0.2, 0.88}}};
    case 6:
      return {{{0.7, 0.05}, {0.35, 0.35}, {0.22, 0.7}, {0.35, 0.93}, {0.65, 0.93}, {0.78, 0.72}, {0.65, 0.52},
               {0.35, 0.52}, {0.25, 0.65}}};
    case 7: return {{{0.15, 0.05}, {0.85, 0.05}, {0.4, 0.95}}};
    case 8: {
      auto a = ellipse(0.5, 0.28, 0.25, 0.22);
      auto b = ellipse(0.5, 0.72, 0.3, 0.23);
      a.push_back(b.front());
      return a;
    }
    default: {
      auto s = digit_strokes(6);
      for (auto& st : s)
        for (auto& p : st) p = {1.0 - p[0], 1.0 - p[1]};
      return s;
    }
  }
}

double segment_distance(double px, double py, std::array<double, 2> a, std::array<double, 2> b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a[0] + t * dx - px, ey = a[1] + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

GlyphSet synthetic_glyphs(int count, Rng& rng) {
  GlyphSet out;
  out.width = out.height = 28;
  for (int i = 0; i < count; ++i) {
    const int d = i % 10;
    const double scale = uniform(rng, 16.0, 20.0);
    const double shear = uniform(rng, -0.25, 0.25);
    const double angle = uniform(rng, -0.15, 0.15);
    const double thick = uniform(rng, 1.1, 2.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    std::vector<Stroke> strokes = digit_strokes(d);
    for (Stroke& s : strokes)
      for (auto& p : s) {
        const double x = (p[0] - 0.5) + shear * (0.5 - p[1]);
        const double y = p[1] - 0.5;
        p = {14.0 + scale * (ca * x - sa * y), 14.0 + scale * (sa * x + ca * y)};
      }
    std::vector<std::uint8_t> g(28 * 28, 0);
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        double best = 1e9;
        for (const Stroke& s : strokes)
          for (std::size_t k = 0; k + 1 < s.size(); ++k) best = std::min(best, segment_distance(x + 0.5, y + 0.5, s[k], s[k + 1]));
        g[y * 28 + x] = best <= thick ? 1 : 0;
      }
    out.glyphs.push_back(std::move(g));
    out.labels.push_back(d);
  }
  return out;
}

namespace {

std::string example_id(const std::string& prefix, int i) {
  std::ostringstream os;
  os << prefix << '_';
  os.width(6);
  os.fill('0');
  os << i;
  return os.str();
}

void paint(Image& im, int x, int y, const std::array<double, 3>& rgb) {
  for (int c = 0; c < 3; ++c) im.at(x, y, c) = from_byte(static_cast<std::uint8_t>(std::lround(rgb[c] * 255.0)));
}

}  // namespace

std::vector<LabeledExample> make_colored_2mnist(int count, int size, const GlyphSet& glyphs, Rng& rng) {
  std::vector<LabeledExample> out;
  if (count <= 0) return out;
  require(size >= 32, "colored 2-MNIST needs size >= 32");
  std::vector<std::size_t> odd, even;
  for (std::size_t k = 0; k < glyphs.labels.size(); ++k) (glyphs.labels[k] % 2 ? odd : even).push_back(k);
  require(!odd.empty() && !even.empty(), "glyph source needs both odd and even digits");
  const int gsize = std::max(8, static_cast<int>(std::lround(28.0 * size / 64.0)));

  for (int i = 0; i < count; ++i) {
    LabeledExample ex;
    ex.id = example_id("c2mnist", i);
    ex.image = Image(size, size, 3);
    std::vector<std::uint8_t> label(static_cast<std::size_t>(size) * size, 2);
    const auto bg = hsv_to_rgb(uniform(rng, 0, 360), uniform(rng, 0, 0.2), uniform(rng, 0.2, 0.9));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) paint(ex.image, x, y, bg);

    struct Digit {
      std::size_t glyph;
      int region;
      std::array<double, 3> rgb;
      int x0, y0;
    };
    std::array<Digit, 2> digits{};
    digits[0] = {odd[uniform_int(rng, 0, static_cast<int>(odd.size()) - 1)], 0,
                 hsv_to_rgb(uniform(rng, 0, 120), uniform(rng, 0.6, 1), uniform(rng, 0.6, 1)), 0, 0};
    digits[1] = {even[uniform_int(rng, 0, static_cast<int>(even.size()) - 1)], 1,
                 hsv_to_rgb(uniform(rng, 180, 300), uniform(rng, 0.6, 1), uniform(rng, 0.6, 1)), 0, 0};
    for (Digit& d : digits) {
      d.x0 = uniform_int(rng, 0, size - gsize);
      d.y0 = uniform_int(rng, 0, size - gsize);
    }
    if (uniform01(rng) < 0.5) std::swap(digits[0], digits[1]);
    for (const Digit& d : digits) {
      const std::vector<std::uint8_t>& g = glyphs.glyphs[d.glyph];
      for (int y = 0; y < gsize; ++y)
        for (int x = 0; x < gsize; ++x) {
          const int gx = x * glyphs.width / gsize, gy = y * glyphs.height / gsize;
          if (!g[gy * glyphs.width + gx]) continue;
          paint(ex.image, d.x0 + x, d.y0 + y, d.rgb);
          label[(d.y0 + y) * size + d.x0 + x] = static_cast<std::uint8_t>(d.region);
        }
    }
    MaskStack s(3, size, size);
    for (int p = 0; p < size * size; ++p) s.values[label[p] * size * size + p] = 1.f;
    ex.gt = MaskSet(std::move(s));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<LabeledExample> make_blob_toy(int count, int size, Rng& rng) {
  require(size >= 32, "blob toy needs size >= 32");
  std::vector<LabeledExample> out;
  for (int i = 0; i < count; ++i) {
    LabeledExample ex;
    ex.id = example_id("blob", i);
    // saturated colors in disjoint hue bands: a partial blend of two of them is off the palette
    const auto bg = hsv_to_rgb(uniform(rng, 200, 340), uniform(rng, 0.9, 1), uniform(rng, 0.85, 1));
    const auto fg = hsv_to_rgb(uniform(rng, 10, 150), uniform(rng, 0.9, 1), uniform(rng, 0.85, 1));
    const double r = uniform(rng, size / 8.0, size / 3.0);
    const double cx = uniform(rng, r / 2, size - r / 2);
    const double cy = uniform(rng, r / 2, size - r / 2);
    ex.image = Image(size, size, 3);
    MaskStack s(2, size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const bool inside = dx * dx + dy * dy <= r * r;
        paint(ex.image, x, y, inside ? fg : bg);
        s.at(inside ? 0 : 1, x, y) = 1.f;
      }
    ex.gt = MaskSet(std::move(s));
    out.push_back(std::move(ex));
  }
  return out;
}

Image resize_bilinear(const Image& im, int width, int height) {
  require(width > 0 && height > 0, "resize target must be positive");
  Image out(width, height, im.channels);
  const double sx = static_cast<double>(im.width) / width, sy = static_cast<double>(im.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, im.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, im.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, im.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, im.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < im.channels; ++c) {
        const double top = (1 - wx) * im.at(x0, y0, c) + wx * im.at(x1, y0, c);
        const double bot = (1 - wx) * im.at(x0, y1, c) + wx * im.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Raster resize_nearest(const Raster& r, int width, int height) {
  Raster out(width, height, r.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(r.height - 1, static_cast<int>((y + 0.5) * r.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(r.width - 1, static_cast<int>((x + 0.5) * r.width / width));
      for (int c = 0; c < r.channels; ++c) out.at(x, y, c) = r.at(sx, sy, c);
    }
  }
  return out;
}

std::pair<int, int> short_side_geometry(int width, int height, int size) {
  require(width > 0 && height > 0 && size > 0, "image geometry must be positive");
  if (width <= height) return {size, static_cast<int>(std::lround(static_cast<double>(height) * size / width))};
  return {static_cast<int>(std::lround(static_cast<double>(width) * size / height)), size};
}

namespace {

template <class R>
R crop(const R& r, int x0, int y0, int size);

template <>
Image crop(const Image& im, int x0, int y0, int size) {
  Image out(size, size, im.channels);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(x, y, c) = im.at(x0 + x, y0 + y, c);
  return out;
}

template <>
Raster crop(const Raster& r, int x0, int y0, int size) {
  Raster out(size, size, r.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < r.channels; ++c) out.at(x, y, c) = r.at(x0 + x, y0 + y, c);
  return out;
}

}  // namespace

Image preprocess_image(const Raster& raw, int size) {
  const auto [w, h] = short_side_geometry(raw.width, raw.height, size);
  Image im = image_from_raster(raw, 3);
  if (w != im.width || h != im.height) im = resize_bilinear(im, w, h);
  return crop(im, (w - size) / 2, (h - size) / 2, size);
}

MaskSet preprocess_mask(const Raster& raw, int size, int regions) {
  Raster gray = raw;
  if (raw.channels != 1) {
    gray = Raster(raw.width, raw.height, 1);
    for (int y = 0; y < raw.height; ++y)
      for (int x = 0; x < raw.width; ++x) gray.at(x, y, 0) = raw.at(x, y, 0);
  }
  const auto [w, h] = short_side_geometry(gray.width, gray.height, size);
  if (w != gray.width || h != gray.height) gray = resize_nearest(gray, w, h);
  return masks_from_raster(crop(gray, (w - size) / 2, (h - size) / 2, size), regions);
}

namespace {

std::vector<fs::path> png_files(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

FolderLoad load_image_folder(const std::string& path, int size, const std::optional<std::string>& gt_path, int regions) {
  if (!fs::is_directory(path)) throw IoError("image folder not found: " + path);
  if (gt_path && !fs::is_directory(*gt_path)) throw IoError("mask folder not found: " + *gt_path);
  FolderLoad out;
  for (const fs::path& f : png_files(path)) {
    LabeledExample ex;
    ex.id = f.stem().string();
    if (gt_path) {
      const fs::path m = fs::path(*gt_path) / f.filename();
      if (!fs::exists(m)) throw IoError("no mask for " + f.filename().string() + " in " + *gt_path);
    }
    try {
      ex.image = preprocess_image(read_png(f.string()), size);
      if (gt_path) ex.gt = preprocess_mask(read_png((fs::path(*gt_path) / f.filename()).string()), size, regions);
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
      out.skipped.push_back(f.string() + ": " + e.what());
      continue;
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<double, 3> fractions, Rng& rng) {
  for (double f : fractions) require(f >= 0.0, "split fractions must be non-negative");
  require(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) < 1e-9, "split fractions must sum to 1");
  {
    std::set<std::string> uniq(ids.begin(), ids.end());
    require(uniq.size() == ids.size(), "split_dataset: duplicate ids");
  }
  std::vector<std::string> order = ids;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1))]);
  const std::size_t n = order.size();
  const std::size_t nval = static_cast<std::size_t>(std::lround(fractions[1] * n));
  const std::size_t ntest = std::min(n - nval, static_cast<std::size_t>(std::lround(fractions[2] * n)));
  const std::size_t ntrain = n - nval - ntest;
  DatasetSplit s;
  s.train.assign(order.begin(), order.begin() + ntrain);
  s.val.assign(order.begin() + ntrain, order.begin() + ntrain + nval);
  s.test.assign(order.begin() + ntrain + nval, order.end());
  return s;
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, const DatasetSplit& lists) {
  std::map<std::string, int> seen;
  for (const auto* part : {&lists.train, &lists.val, &lists.test})
    for (const std::string& id : *part)
      if (++seen[id] > 1) throw ContractError("split lists overlap at id " + id);
  std::set<std::string> all(ids.begin(), ids.end());
  if (all.size() != seen.size()) throw ContractError("split lists do not partition the ids");
  for (const auto& [id, count] : seen)
    if (!all.contains(id)) throw ContractError("split lists name unknown id " + id);
  return lists;
}

void write_dataset(const std::string& dir, const std::vector<LabeledExample>& examples, const DatasetSplit& split) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (!ec) fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw IoError("cannot create dataset folder " + dir + ": " + ec.message());
  std::map<std::string, std::string> part;
  for (const std::string& id : split.train) part[id] = "train";
  for (const std::string& id : split.val) part[id] = "val";
  for (const std::string& id : split.test) part[id] = "test";
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  manifest << "id,split\n";
  for (const LabeledExample& ex : examples) {
    write_png((fs::path(dir) / "images" / (ex.id + ".png")).string(), raster_from_image(ex.image));
    if (ex.gt) write_png((fs::path(dir) / "masks" / (ex.id + ".png")).string(), raster_from_masks(*ex.gt));
    auto it = part.find(ex.id);
    manifest << ex.id << ',' << (it == part.end() ? "train" : it->second) << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir);
}

std::vector<LabeledExample> StoredDataset::subset(const std::vector<std::string>& ids) const {
  std::map<std::string, const LabeledExample*> by_id;
  for (const LabeledExample& ex : examples) by_id[ex.id] = &ex;
  std::vector<LabeledExample> out;
  for (const std::string& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw IoError("dataset has no example " + id);
    out.push_back(*it->second);
  }
  return out;
}

StoredDataset read_dataset(const std::string& dir, int size, int regions) {
  const fs::path root(dir);
  std::ifstream manifest(root / "manifest.csv");
  StoredDataset ds;
  if (!manifest) {
    // Plain folder: everything is training data.
    const fs::path images = fs::is_directory(root / "images") ? root / "images" : root;
    const fs::path masks = root / "masks";
    FolderLoad load = load_image_folder(images.string(), size,
                                        fs::is_directory(masks) ? std::optional<std::string>(masks.string()) : std::nullopt,
                                        regions);
    ds.examples = std::move(load.examples);
    for (const LabeledExample& ex : ds.examples) ds.split.train.push_back(ex.id);
    return ds;
  }
  std::string line;
  std::getline(manifest, line);
  if (line != "id,split") throw IoError("unexpected manifest header in " + dir);
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("bad manifest line: " + line);
    const std::string id = line.substr(0, comma), part = line.substr(comma + 1);
    LabeledExample ex;
    ex.id = id;
    ex.image = preprocess_image(read_png((root / "images" / (id + ".png")).string()), size);
    const fs::path m = root / "masks" / (id + ".png");
    if (fs::exists(m)) ex.gt = preprocess_mask(read_png(m.string()), size, regions);
    if (part == "train") ds.split.train.push_back(id);
    else if (part == "val") ds.split.val.push_back(id);
    else if (part == "test") ds.split.test.push_back(id);
    else throw IoError("unknown split '" + part + "' in manifest");
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace redo
