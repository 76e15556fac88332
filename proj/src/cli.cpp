#include "redo/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "redo/error.hpp"
#include "redo/evaluation.hpp"

namespace fs = std::filesystem;

namespace redo {

namespace {

constexpr int kGap = 2;

Raster gray_to_rgb(const Raster& g) {
  Raster out(g.width, g.height, 3);
  for (std::size_t p = 0; p < g.data.size(); ++p)
    for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = g.data[p];
  return out;
}

std::vector<float> latent_from(Rng& rng, int d) { return sample_latent(d, rng); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create folder " + p.string());
}

std::array<double, 3> parse_fractions(const std::string& s) {
  if (s == "flowers") return kFlowersFractions;
  std::array<double, 3> f{};
  std::istringstream in(s);
  std::string part;
  int k = 0;
  while (std::getline(in, part, ',')) {
    if (k == 3) throw ConfigError("split needs three fractions, got " + s);
    try {
      f[k++] = std::stod(part);
    } catch (const std::exception&) {
      throw ConfigError("bad split fraction '" + part + "'");
    }
  }
  if (k != 3) throw ConfigError("split needs three fractions, got " + s);
  return f;
}

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

// make-dataset ----------------------------------------------------------------

struct MakeDatasetArgs {
  std::string kind = "blobs";
  int count = 100;
  int size = 0;
  std::string split = "0.8,0.1,0.1";
  std::string mnist_images, mnist_labels;
};

int cmd_make_dataset(const Globals& g, const MakeDatasetArgs& a) {
  if (g.out.empty()) throw ConfigError("make-dataset needs --out");
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  if (a.kind != "blobs" && a.kind != "c2mnist") throw ConfigError("--kind must be blobs or c2mnist");
  const int size = a.size > 0 ? a.size : (a.kind == "blobs" ? 32 : 64);
  if (size < 8) throw ConfigError("--size must be >= 8");
  if (a.mnist_images.empty() != a.mnist_labels.empty())
    throw ConfigError("--mnist-images and --mnist-labels go together");
  const auto fractions = parse_fractions(a.split);

  Rng rng(g.seed);
  std::vector<LabeledExample> examples;
  if (a.kind == "blobs") {
    examples = make_blob_toy(a.count, size, rng);
  } else {
    GlyphSet glyphs;
    if (!a.mnist_images.empty()) {
      glyphs = read_idx_glyphs(a.mnist_images, a.mnist_labels);
    } else {
      Rng glyph_rng(derive_seed(g.seed, 1));
      glyphs = synthetic_glyphs(2000, glyph_rng);
    }
    examples = make_colored_2mnist(a.count, size, glyphs, rng);
  }
  std::vector<std::string> ids;
  for (const auto& e : examples) ids.push_back(e.id);
  Rng split_rng(derive_seed(g.seed, 0));
  const DatasetSplit split = split_dataset(ids, fractions, split_rng);
  write_dataset(g.out, examples, split);
  std::cout << "wrote " << examples.size() << " examples (" << split.train.size() << " train, " << split.val.size()
            << " val, " << split.test.size() << " test) to " << g.out << "\n";
  return kExitOk;
}

// train -----------------------------------------------------------------------

struct TrainArgs {
  long steps = -1;
};

RunConfig resolved_config(const Globals& g) {
  const auto path = resolve_config_path(g.config);
  if (!path) throw ConfigError("no config given (use --config or set REDO_CONFIG)");
  RunConfig cfg = load_run_config(*path);
  if (g.seed_set) cfg.train.seed = g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  return cfg;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig cfg = resolved_config(g);
  if (a.steps >= 0) cfg.train.max_steps = a.steps;
  cfg.validate();
  cfg.train.out_dir = cfg.out_dir;

  LoadedData loaded = load_run_data(cfg);
  if (loaded.data.train.empty()) throw ConfigError("no training images in the configured dataset");
  for (const auto& ex : loaded.data.val)
    if (!ex.gt) throw ConfigError("validation example " + ex.id + " has no ground truth");

  ensure_dir(cfg.out_dir);
  {
    std::ofstream(fs::path(cfg.out_dir) / "config.toml") << to_config_text(cfg);
  }
  TrainHooks hooks;
  std::vector<Image> panel_images;
  for (std::size_t k = 0; k < loaded.data.val.size() && static_cast<int>(k) < cfg.panel_count; ++k)
    panel_images.push_back(loaded.data.val[k].image);
  if (panel_images.empty())
    for (std::size_t k = 0; k < loaded.data.train.size() && static_cast<int>(k) < cfg.panel_count; ++k)
      panel_images.push_back(loaded.data.train[k]);
  if (cfg.panels) {
    ensure_dir(fs::path(cfg.out_dir) / "panels");
    hooks.on_eval = [&](TrainState& st, double iou) {
      const fs::path p = fs::path(cfg.out_dir) / "panels" / ("step_" + std::to_string(st.step) + ".png");
      write_png(p.string(), training_panel(*st.models, panel_images, cfg.train.seed));
      std::cout << "step " << st.step << " val_iou " << iou << "\n";
    };
  }
  const TrainResult r = train(cfg.net, cfg.train, loaded.data, hooks);
  std::cout << "done: " << r.steps << " steps, " << r.restarts << " restarts\n";
  if (!r.best_checkpoint.empty())
    std::cout << "best checkpoint " << r.best_checkpoint << " (step " << r.best_step << ", val IoU " << r.best_val_iou
              << ")\n";
  std::cout << "final checkpoint " << r.final_checkpoint << "\n";
  return kExitOk;
}

// segment ---------------------------------------------------------------------

struct SegmentArgs {
  std::string checkpoint, input;
  bool soft = false;
};

std::unique_ptr<ModelSet<float>> checked_models(const Globals& g, const std::string& ckpt, NetworkConfig& net) {
  if (!fs::is_regular_file(ckpt)) throw ConfigError("checkpoint not found: " + ckpt);
  auto models = load_models(ckpt, &net);
  if (const auto path = resolve_config_path(g.config)) {
    const RunConfig cfg = load_run_config(*path);
    if (cfg.net.image_size != net.image_size)
      throw ConfigError("image size mismatch: config says " + std::to_string(cfg.net.image_size) +
                        ", checkpoint was trained at " + std::to_string(net.image_size));
  }
  return models;
}

int cmd_segment(const Globals& g, const SegmentArgs& a) {
  if (g.out.empty()) throw ConfigError("segment needs --out");
  if (!fs::is_directory(a.input)) throw ConfigError("input folder not found: " + a.input);
  NetworkConfig net;
  auto models = checked_models(g, a.checkpoint, net);
  FolderLoad load = load_image_folder(a.input, net.image_size);
  if (load.examples.empty()) throw IoError("no readable images in " + a.input);
  ensure_dir(g.out);
  std::vector<Image> images;
  for (const auto& e : load.examples) images.push_back(e.image);
  const std::vector<MaskSet> masks = predict_masks(*models, images);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const std::string& id = load.examples[k].id;
    write_png((fs::path(g.out) / (id + ".png")).string(), raster_from_masks(masks[k]));
    if (a.soft)
      for (int r = 0; r < net.regions; ++r)
        write_png((fs::path(g.out) / (id + "_region" + std::to_string(r + 1) + ".png")).string(),
                  raster_from_plane(masks[k], r));
  }
  std::cout << "segmented " << masks.size() << " images into " << g.out << "\n";
  return kExitOk;
}

// redraw ----------------------------------------------------------------------

struct RedrawArgs {
  std::string checkpoint, input;
  int region = 1;
  int count = 4;
};

int cmd_redraw(const Globals& g, const RedrawArgs& a) {
  if (g.out.empty()) throw ConfigError("redraw needs --out");
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  if (!fs::is_regular_file(a.input)) throw ConfigError("input image not found: " + a.input);
  NetworkConfig net;
  auto models = checked_models(g, a.checkpoint, net);
  if (a.region < 1 || a.region > net.regions)
    throw ConfigError("region " + std::to_string(a.region) + " out of range 1.." + std::to_string(net.regions));
  const Image im = preprocess_image(read_png(a.input), net.image_size);
  const fs::path out(g.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_png(g.out, redraw_panel(*models, im, RegionIndex{a.region}, g.seed, a.count));
  std::cout << "wrote " << g.out << "\n";
  return kExitOk;
}

// eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, predictions, data;
  std::string split = "test";
  std::string level = "dataset";
  int size = 0;
  int regions = 0;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  if (a.checkpoint.empty() == a.predictions.empty()) throw ConfigError("eval needs exactly one of --checkpoint and --predictions");
  if (!fs::is_directory(a.data)) throw ConfigError("data folder not found: " + a.data);
  if (a.level != "dataset" && a.level != "image") throw ConfigError("--level must be dataset or image");
  if (a.split != "train" && a.split != "val" && a.split != "test" && a.split != "all")
    throw ConfigError("--split must be train, val, test or all");
  if (!a.predictions.empty() && !fs::is_directory(a.predictions))
    throw ConfigError("prediction folder not found: " + a.predictions);

  std::unique_ptr<ModelSet<float>> models;
  NetworkConfig net;
  int size = a.size, regions = a.regions;
  if (!a.checkpoint.empty()) {
    models = checked_models(g, a.checkpoint, net);
    if (size && size != net.image_size)
      throw ConfigError("image size mismatch: --size " + std::to_string(size) + ", checkpoint " +
                        std::to_string(net.image_size));
    size = net.image_size;
    regions = net.regions;
  } else {
    if (size <= 0) size = 32;
    if (regions <= 0) regions = 2;
  }

  StoredDataset ds = read_dataset(a.data, size, regions);
  std::vector<LabeledExample> examples;
  if (a.split == "all") examples = ds.examples;
  else examples = ds.subset(a.split == "train" ? ds.split.train : a.split == "val" ? ds.split.val : ds.split.test);
  if (examples.empty()) throw IoError("split " + a.split + " of " + a.data + " is empty");
  std::vector<MaskSet> gts;
  std::vector<std::string> ids;
  for (const auto& e : examples) {
    if (!e.gt) throw IoError("example " + e.id + " has no ground-truth mask");
    gts.push_back(*e.gt);
    ids.push_back(e.id);
  }
  std::vector<MaskSet> preds;
  if (models) {
    std::vector<Image> images;
    for (const auto& e : examples) images.push_back(e.image);
    preds = predict_masks(*models, images);
  } else {
    for (const auto& id : ids) preds.push_back(preprocess_mask(read_png((fs::path(a.predictions) / (id + ".png")).string()), size, regions));
  }
  const EvalResult r = best_permutation_match(preds, gts, a.level == "image" ? MatchLevel::Image : MatchLevel::Dataset);
  const std::string report = g.out.empty() ? "eval.csv" : g.out;
  if (fs::path(report).has_parent_path()) ensure_dir(fs::path(report).parent_path());
  write_eval_report(report, ids, r);
  std::cout << std::fixed << std::setprecision(4) << "Acc " << r.acc << "  IoU " << r.iou << "  (" << examples.size()
            << " images, " << a.level << "-level permutation " << format_permutation(r.permutation) << ")\n";
  std::cout << "report " << report << "\n";
  return kExitOk;
}

}  // namespace

Raster tile_row(const std::vector<Raster>& tiles) {
  require(!tiles.empty(), "tile_row: no tiles");
  int w = -kGap, h = 0;
  for (const Raster& t : tiles) {
    require(t.channels == 3, "tile_row: tiles must be RGB");
    w += t.width + kGap;
    h = std::max(h, t.height);
  }
  Raster out(w, h, 3);
  std::fill(out.data.begin(), out.data.end(), 255);
  int x0 = 0;
  for (const Raster& t : tiles) {
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(x0 + x, y, c) = t.at(x, y, c);
    x0 += t.width + kGap;
  }
  return out;
}

Raster stack_rows(const std::vector<Raster>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  int w = 0, h = -kGap;
  for (const Raster& r : rows) {
    w = std::max(w, r.width);
    h += r.height + kGap;
  }
  Raster out(w, h, 3);
  std::fill(out.data.begin(), out.data.end(), 255);
  int y0 = 0;
  for (const Raster& r : rows) {
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(x, y0 + y, c) = r.at(x, y, c);
    y0 += r.height + kGap;
  }
  return out;
}

Raster redraw_panel(ModelSet<float>& models, const Image& input, RegionIndex i, std::uint64_t seed, int count) {
  i.validate(models.config.regions);
  require(count >= 1, "redraw_panel: count must be >= 1");
  const MaskSet mask = predict_masks(models, {input}).front();
  Rng rng(seed);
  std::vector<std::vector<float>> z;
  for (int k = 0; k < count; ++k) z.push_back(latent_from(rng, models.config.latent_dim));
  const std::vector<Image> redraws = redraw_images(models, std::vector<Image>(count, input), i, z);
  std::vector<Raster> tiles{raster_from_image(input), gray_to_rgb(raster_from_plane(mask, i.zero_based()))};
  for (const Image& r : redraws) tiles.push_back(raster_from_image(r));
  return tile_row(tiles);
}

Raster training_panel(ModelSet<float>& models, const std::vector<Image>& images, std::uint64_t seed) {
  require(!images.empty(), "training_panel: no images");
  const int n = models.config.regions, B = static_cast<int>(images.size());
  const std::vector<MaskSet> masks = predict_masks(models, images);
  Rng rng(seed);
  std::vector<std::vector<Image>> redraws;
  for (int k = 0; k < n; ++k) {
    const std::vector<float> z = latent_from(rng, models.config.latent_dim);
    redraws.push_back(redraw_images(models, images, RegionIndex{k + 1}, std::vector<std::vector<float>>(B, z)));
  }
  std::vector<Raster> rows;
  for (int b = 0; b < B; ++b) {
    std::vector<Raster> tiles{raster_from_image(images[b])};
    for (int k = 0; k < n; ++k) tiles.push_back(gray_to_rgb(raster_from_plane(masks[b], k)));
    for (int k = 0; k < n; ++k) tiles.push_back(raster_from_image(redraws[k][b]));
    rows.push_back(tile_row(tiles));
  }
  return stack_rows(rows);
}

LoadedData load_run_data(const RunConfig& cfg) {
  LoadedData out;
  StoredDataset ds;
  if (!cfg.data.path.empty()) {
    ds = read_dataset(cfg.data.path, cfg.net.image_size, cfg.net.regions);
  } else {
    FolderLoad load = load_image_folder(cfg.data.images, cfg.net.image_size,
                                        cfg.data.masks.empty() ? std::nullopt : std::optional<std::string>(cfg.data.masks),
                                        cfg.net.regions);
    ds.examples = std::move(load.examples);
  }
  if (cfg.data.split != "manifest") {
    std::vector<std::string> ids;
    for (const auto& e : ds.examples) ids.push_back(e.id);
    Rng rng(cfg.data.split_seed);
    ds.split = split_dataset(ids, parse_fractions(cfg.data.split), rng);
  }
  for (const auto& e : ds.subset(ds.split.train)) out.data.train.push_back(e.image);
  out.data.val = ds.subset(ds.split.val);
  out.test = ds.subset(ds.split.test);
  return out;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"redo: unsupervised segmentation by redrawing image regions"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config file (or set REDO_CONFIG)");
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output path");

  MakeDatasetArgs md;
  auto* make = app.add_subcommand("make-dataset", "write a synthetic dataset (images/, masks/, manifest.csv)");
  make->add_option("--kind", md.kind, "blobs or c2mnist")->check(CLI::IsMember({"blobs", "c2mnist"}));
  make->add_option("--count", md.count, "number of examples");
  make->add_option("--size", md.size, "image side (default 32 for blobs, 64 for c2mnist)");
  make->add_option("--split", md.split, "train,val,test fractions, or flowers");
  make->add_option("--mnist-images", md.mnist_images, "IDX image file (default: synthetic glyphs)");
  make->add_option("--mnist-labels", md.mnist_labels, "IDX label file");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train from a run config");
  trn->add_option("--steps", ta.steps, "override train.max_steps");

  SegmentArgs sa;
  auto* seg = app.add_subcommand("segment", "write hard (and soft) masks for a folder of images");
  seg->add_option("--checkpoint", sa.checkpoint)->required();
  seg->add_option("--input", sa.input, "image folder")->required();
  seg->add_flag("--soft", sa.soft, "also write one grayscale plane per region");

  RedrawArgs ra;
  auto* red = app.add_subcommand("redraw", "panel: input, mask, redraws of one region");
  red->add_option("--checkpoint", ra.checkpoint)->required();
  red->add_option("--input", ra.input, "image file")->required();
  red->add_option("--region", ra.region, "1-based region index");
  red->add_option("--count", ra.count, "number of redraws");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Acc and IoU under the best region permutation");
  ev->add_option("--checkpoint", ea.checkpoint);
  ev->add_option("--predictions", ea.predictions, "folder of mask PNGs named like the dataset ids");
  ev->add_option("--data", ea.data, "dataset folder")->required();
  ev->add_option("--split", ea.split, "train, val, test or all");
  ev->add_option("--level", ea.level, "dataset or image");
  ev->add_option("--size", ea.size, "image side when scoring a prediction folder");
  ev->add_option("--regions", ea.regions, "region count when scoring a prediction folder");

  for (auto* sub : {make, trn, seg, red, ev}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*make) return cmd_make_dataset(g, md);
    if (*trn) return cmd_train(g, ta);
    if (*seg) return cmd_segment(g, sa);
    if (*red) return cmd_redraw(g, ra);
    if (*ev) return cmd_eval(g, ea);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace redo
