#include "redo/training.hpp"

#include <malloc.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "redo/blas.hpp"
#include "redo/error.hpp"

namespace fs = std::filesystem;

namespace redo {

void TrainConfig::validate() const {
  require(batch_size >= 2, "batch_size must be at least 2");
  require(max_steps >= 0, "max_steps must be non-negative");
  require(lr_f > 0 && lr_gdd > 0, "learning rates must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "Adam betas must be in [0, 1)");
  require(adam_eps > 0 && weight_decay_f >= 0 && init_gain > 0, "invalid optimizer settings");
  require(restart.max_restarts >= 0 && restart.collapse_patience >= 1 && restart.probe_window >= 0 &&
              restart.collapse_epsilon >= 0,
          "invalid restart policy");
  require(checkpoint_every >= 0 && eval_every >= 0 && eval_batch >= 1, "invalid checkpoint/eval cadence");
}

Adam<float>& TrainState::optimizer(const std::string& store) {
  auto stores = models->stores();
  for (std::size_t k = 0; k < stores.size(); ++k)
    if (stores[k].first == store) return optimizers[k];
  throw ContractError("no optimizer for store " + store);
}

namespace {

AdamOptions options_for(const std::string& store, const TrainConfig& cfg) {
  AdamOptions o;
  o.beta1 = cfg.adam_beta1;
  o.beta2 = cfg.adam_beta2;
  o.eps = cfg.adam_eps;
  if (store == "mask") {
    o.lr = cfg.lr_f;
    o.weight_decay = cfg.weight_decay_f;
  } else {
    o.lr = cfg.lr_gdd;
  }
  return o;
}

void build_optimizers(TrainState& s, const TrainConfig& cfg) {
  s.optimizers.clear();
  for (auto& [name, store] : s.models->stores()) s.optimizers.emplace_back(*store, options_for(name, cfg));
}

void check_finite(long step, std::initializer_list<std::pair<const char*, double>> values) {
  for (const auto& [name, v] : values)
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step << ":";
      for (const auto& [n2, v2] : values) os << ' ' << n2 << '=' << v2;
      throw TrainingError(os.str());
    }
}

Tensor<float> latent_batch(int batch, int d, Rng& rng) {
  Tensor<float> z({batch, d});
  for (int b = 0; b < batch; ++b) {
    const std::vector<float> row = sample_latent(d, rng);
    std::copy(row.begin(), row.end(), z.data() + static_cast<std::size_t>(b) * d);
  }
  return z;
}

}  // namespace

TrainState make_train_state(const NetworkConfig& net, const TrainConfig& cfg, std::uint64_t seed) {
  net.validate();
  cfg.validate();
  TrainState s;
  s.net = net;
  s.models = std::make_unique<ModelSet<float>>(net);
  s.run_seed = seed;
  s.rng.seed(seed);
  s.models->initialize(s.rng, cfg.init_gain);
  s.lambda_z = cfg.loss.resolve(net.regions, net.latent_dim);
  build_optimizers(s, cfg);
  return s;
}

std::vector<float> sample_latent(int d, Rng& rng) {
  require(d >= 1, "latent dimension must be positive");
  std::vector<float> z(static_cast<std::size_t>(d));
  for (float& v : z) v = static_cast<float>(normal(rng));
  return z;
}

RegionIndex sample_region(int n, Rng& rng) {
  require(n >= 2, "sample_region needs n >= 2");
  return RegionIndex{uniform_int(rng, 1, n)};
}

Tensor<float> sample_batch(const std::vector<Image>& data, int batch, Rng& rng, std::vector<int>* indices) {
  require(!data.empty(), "cannot sample from an empty dataset");
  const Image& f = data.front();
  const std::size_t per = f.pixels.size();
  Tensor<float> out({batch, f.channels, f.height, f.width});
  if (indices) indices->clear();
  for (int b = 0; b < batch; ++b) {
    const int k = uniform_int(rng, 0, static_cast<int>(data.size()) - 1);
    if (indices) indices->push_back(k);
    require(data[k].same_shape(f), "dataset images differ in shape");
    std::copy(data[k].pixels.begin(), data[k].pixels.end(), out.data() + b * per);
  }
  return out;
}

GeneratorLog generator_update(TrainState& s, const Tensor<float>& batch) {
  const RegionIndex i = sample_region(s.net.regions, s.rng);
  const Tensor<float> z = latent_batch(batch.dim(0), s.net.latent_dim, s.rng);
  return generator_update(s, batch, i, z);
}

double generator_objective(TrainState& s, const Tensor<float>& batch, RegionIndex region, const Tensor<float>& z) {
  ModelSet<float>& m = *s.models;
  const int B = batch.dim(0), i = region.zero_based();
  region.validate(s.net.regions);
  require(z.shape() == Shape{B, s.net.latent_dim}, "generator_objective: latent batch must be [B, d]");
  Graph<float> g(true);
  for (auto& [name, store] : m.stores()) g.freeze(*store);
  Var x = g.constant(batch);
  Var masks = m.mask_net(g, x);
  Var fake = op::redraw_region(g, x, masks, (*m.generators[i])(g, op::select_channel(g, masks, i), g.constant(z)), i);
  const Tensor<float>& sv = g.value(m.discriminator(g, fake));
  const Tensor<float>& zh = g.value(m.regressor(g, fake, i));
  double adv = 0, info = 0;
  for (int b = 0; b < B; ++b) adv += generator_adversarial_loss(static_cast<double>(sv[b]));
  for (std::size_t k = 0; k < zh.size(); ++k) info += (static_cast<double>(zh[k]) - z[k]) * (static_cast<double>(zh[k]) - z[k]);
  return adv / B + s.lambda_z * info / B;
}

GeneratorLog generator_update(TrainState& s, const Tensor<float>& batch, RegionIndex region, const Tensor<float>& z) {
  ModelSet<float>& m = *s.models;
  const int B = batch.dim(0), n = s.net.regions;
  require(B >= 2, "generator_update needs a batch of at least 2");
  region.validate(n);
  require(z.shape() == Shape{B, s.net.latent_dim}, "generator_update: latent batch must be [B, d]");
  GeneratorLog log;
  log.region = region;
  const int i = region.zero_based();

  for (auto& [name, store] : m.stores()) store->zero_grad();
  Graph<float> g(true);
  g.freeze(m.disc_store);
  Var x = g.constant(batch);
  Var masks = m.mask_net(g, x);
  Var zi = g.constant(z);
  Var appearance = (*m.generators[i])(g, op::select_channel(g, masks, i), zi);
  Var fake = op::redraw_region(g, x, masks, appearance, i);
  Var score = m.discriminator(g, fake);
  Var z_hat = m.regressor(g, op::grad_scale(g, fake, static_cast<float>(s.lambda_z)), i);

  const Tensor<float>& sv = g.value(score);
  const Tensor<float>& zh = g.value(z_hat);
  double adv = 0, info = 0;
  for (int b = 0; b < B; ++b) adv += generator_adversarial_loss(static_cast<double>(sv[b]));
  adv /= B;
  Tensor<float> zseed(zh.shape());
  for (std::size_t k = 0; k < zh.size(); ++k) {
    const double diff = static_cast<double>(zh[k]) - z[k];
    info += diff * diff;
    zseed[k] = static_cast<float>(2.0 * diff / B);
  }
  info /= B;
  log.loss_adv = adv;
  log.loss_z = info;
  log.loss_g = adv + s.lambda_z * info;
  check_finite(s.step, {{"loss_g", log.loss_g}, {"loss_z", log.loss_z}});

  const Tensor<float>& mv = g.value(masks);
  const int hw = mv.dim(2) * mv.dim(3);
  log.mask_mass.assign(static_cast<std::size_t>(n), 0.0);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < n; ++k) {
      const float* p = mv.data() + (static_cast<std::size_t>(b) * n + k) * hw;
      double acc = 0;
      for (int q = 0; q < hw; ++q) acc += p[q];
      log.mask_mass[k] += acc / hw;
    }
  for (double& v : log.mask_mass) v /= B;

  g.backward({{score, Tensor<float>(sv.shape(), -1.f / B)}, {z_hat, std::move(zseed)}});
  s.optimizer("mask").step();
  s.optimizer("gen" + std::to_string(i + 1)).step();
  s.optimizer("regressor").step();
  return log;
}

DiscriminatorLog discriminator_update(TrainState& s, const Tensor<float>& real, const Tensor<float>& input) {
  ModelSet<float>& m = *s.models;
  const int B = input.dim(0);
  require(B >= 2 && real.shape() == input.shape(), "discriminator_update needs two equally shaped batches");
  const int i = sample_region(s.net.regions, s.rng).zero_based();
  const Tensor<float> z = latent_batch(B, s.net.latent_dim, s.rng);

  Tensor<float> both({2 * B, real.dim(1), real.dim(2), real.dim(3)});
  std::copy(real.storage().begin(), real.storage().end(), both.data());
  {
    Graph<float> g(true);
    for (auto& [name, store] : m.stores())
      if (name != "disc") g.freeze(*store);
    Var x = g.constant(input);
    Var masks = m.mask_net(g, x);
    Var appearance = (*m.generators[i])(g, op::select_channel(g, masks, i), g.constant(z));
    const Tensor<float>& fake = g.value(op::redraw_region(g, x, masks, appearance, i));
    std::copy(fake.storage().begin(), fake.storage().end(), both.data() + real.size());
  }

  m.disc_store.zero_grad();
  Graph<float> g(true);
  Var scores = m.discriminator(g, g.constant(std::move(both)));
  const Tensor<float>& sv = g.value(scores);
  std::vector<double> r(static_cast<std::size_t>(B)), f(static_cast<std::size_t>(B));
  Tensor<float> seed(sv.shape());
  DiscriminatorLog log;
  for (int b = 0; b < B; ++b) {
    r[b] = sv[b];
    f[b] = sv[B + b];
    const auto [dr, df] = discriminator_hinge_grad(r[b], f[b]);
    seed[b] = static_cast<float>(dr / B);
    seed[B + b] = static_cast<float>(df / B);
    log.mean_real += r[b] / B;
    log.mean_fake += f[b] / B;
  }
  log.real_scores = r;
  log.fake_scores = f;
  log.loss_d = mean_discriminator_loss<double>(r, f);
  check_finite(s.step, {{"loss_d", log.loss_d}});
  g.backward(scores, seed);
  s.optimizer("disc").step();
  return log;
}

bool CollapseMonitor::observe(const MassRecord& r) {
  if (r.step >= policy_.probe_window) return false;
  if (runs_.size() != r.mass.size()) runs_.assign(r.mass.size(), 0);
  bool hit = false;
  for (std::size_t k = 0; k < r.mass.size(); ++k) {
    runs_[k] = r.mass[k] < policy_.collapse_epsilon ? runs_[k] + 1 : 0;
    if (runs_[k] >= policy_.collapse_patience) hit = true;
  }
  return hit;
}

bool detect_collapse(const std::vector<MassRecord>& records, const RestartPolicy& policy) {
  CollapseMonitor mon(policy);
  for (const MassRecord& r : records)
    if (mon.observe(r)) return true;
  return false;
}

// checkpoint ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'E', 'D', 'O', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void floats(const Tensor<float>& t) {
    for (float v : t.storage()) u32(std::bit_cast<std::uint32_t>(v));
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : buf_(std::move(data)), path_(std::move(path)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(u8()) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t(u8()) << (8 * k);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(Tensor<float>& t) {
    need(4 * t.size());
    for (float& v : t.storage()) v = std::bit_cast<float>(u32());
  }
  void bytes(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const { throw IoError("checkpoint " + path_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) fail("truncated");
  }
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const NetworkConfig& c) {
  for (int v : {c.image_size, c.channels, c.regions, c.latent_dim, c.ch_f, c.ch_g, c.ch_d}) w.i32(v);
}

NetworkConfig read_config(Reader& r) {
  NetworkConfig c;
  for (int* v : {&c.image_size, &c.channels, &c.regions, &c.latent_dim, &c.ch_f, &c.ch_g, &c.ch_d}) *v = r.i32();
  return c;
}

std::string encode(const TrainState& st) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  write_config(w, st.net);
  auto stores = st.models->stores();
  w.u32(static_cast<std::uint32_t>(stores.size()));
  for (auto& [name, store] : stores) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(store->size()));
    for (std::size_t k = 0; k < store->size(); ++k) {
      const Parameter<float>& p = (*store)[k];
      w.str(p.name);
      w.u8(p.trainable ? 1 : 0);
      w.u32(static_cast<std::uint32_t>(p.value.rank()));
      for (int dim : p.value.shape()) w.i32(dim);
      w.floats(p.value);
    }
  }
  w.u8(st.optimizers.empty() ? 0 : 1);
  if (!st.optimizers.empty()) {
    for (std::size_t s = 0; s < st.optimizers.size(); ++s) {
      const Adam<float>& opt = st.optimizers[s];
      w.i64(opt.steps());
      w.u32(static_cast<std::uint32_t>(opt.slot_count()));
      for (std::size_t k = 0; k < opt.slot_count(); ++k) {
        w.floats(opt.first_moment(k));
        w.floats(opt.second_moment(k));
      }
    }
  }
  w.i64(st.step);
  w.i32(st.restarts);
  w.u64(st.run_seed);
  std::ostringstream rs;
  rs << st.rng;
  w.str(rs.str());
  return w.bytes();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Reads header and parameters into a freshly built model set.
std::unique_ptr<ModelSet<float>> decode_models(Reader& r, NetworkConfig& net) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) r.fail("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    r.fail("unsupported format_version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  net = read_config(r);
  try {
    net.validate();
  } catch (const ContractError& e) {
    r.fail(std::string("bad network config: ") + e.what());
  }
  auto models = std::make_unique<ModelSet<float>>(net);
  auto stores = models->stores();
  if (r.u32() != stores.size()) r.fail("store count mismatch");
  for (auto& [name, store] : stores) {
    if (r.str() != name) r.fail("store order mismatch at " + name);
    if (r.u32() != store->size()) r.fail("parameter count mismatch in " + name);
    for (std::size_t k = 0; k < store->size(); ++k) {
      Parameter<float>& p = (*store)[k];
      const std::string pname = r.str();
      if (pname != p.name) r.fail("unexpected parameter " + pname + " (expected " + p.name + ")");
      if ((r.u8() != 0) != p.trainable) r.fail("trainable flag mismatch for " + p.name);
      Shape shape(r.u32());
      for (int& dim : shape) dim = r.i32();
      if (shape != p.value.shape())
        r.fail("shape mismatch for " + p.name + ": file " + to_string(shape) + ", model " + to_string(p.value.shape()));
      r.floats(p.value);
    }
  }
  return models;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  const std::string bytes = encode(state);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  Reader r(slurp(path), path);
  TrainState s;
  s.models = decode_models(r, s.net);
  s.lambda_z = cfg.loss.resolve(s.net.regions, s.net.latent_dim);
  build_optimizers(s, cfg);
  if (r.u8()) {
    for (Adam<float>& opt : s.optimizers) {
      opt.set_steps(r.i64());
      if (r.u32() != opt.slot_count()) r.fail("optimizer slot mismatch");
      for (std::size_t k = 0; k < opt.slot_count(); ++k) {
        r.floats(opt.first_moment(k));
        r.floats(opt.second_moment(k));
      }
    }
  }
  s.step = r.i64();
  s.restarts = r.i32();
  s.run_seed = r.u64();
  std::istringstream rs(r.str());
  rs >> s.rng;
  if (!rs) r.fail("bad random state");
  if (!r.done()) r.fail("trailing bytes");
  for (auto& [name, store] : s.models->stores()) store->zero_grad();
  return s;
}

std::unique_ptr<ModelSet<float>> load_models(const std::string& path, NetworkConfig* net) {
  Reader r(slurp(path), path);
  NetworkConfig c;
  auto models = decode_models(r, c);
  if (net) *net = c;
  return models;
}

// inference -------------------------------------------------------------------

std::vector<MaskSet> predict_masks(ModelSet<float>& models, const std::vector<Image>& images, int chunk) {
  std::vector<MaskSet> out;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    std::vector<Image> part(images.begin() + start, images.begin() + end);
    for (const Image& im : part)
      require(im.width == models.config.image_size && im.height == models.config.image_size &&
                  im.channels == models.config.channels,
              "image is " + std::to_string(im.width) + "x" + std::to_string(im.height) + "x" +
                  std::to_string(im.channels) + " but the model expects " + std::to_string(models.config.image_size) +
                  "x" + std::to_string(models.config.image_size) + "x" + std::to_string(models.config.channels));
    Graph<float> g(false);
    Var m = models.mask_net(g, g.constant(to_batch(part)));
    for (std::size_t k = 0; k < part.size(); ++k) out.push_back(masks_from_batch(g.value(m), static_cast<int>(k)));
  }
  return out;
}

EvalResult evaluate_masks(ModelSet<float>& models, const std::vector<LabeledExample>& examples, MatchLevel level,
                          int chunk) {
  std::vector<Image> images;
  std::vector<MaskSet> gts;
  for (const LabeledExample& ex : examples) {
    if (!ex.gt) throw ContractError("example " + ex.id + " has no ground-truth masks");
    images.push_back(ex.image);
    gts.push_back(*ex.gt);
  }
  return best_permutation_match(predict_masks(models, images, chunk), gts, level);
}

std::vector<Image> redraw_images(ModelSet<float>& models, const std::vector<Image>& images, RegionIndex i,
                                 const std::vector<std::vector<float>>& z) {
  i.validate(models.config.regions);
  require(z.size() == images.size(), "redraw_images: one latent code per image");
  const int d = models.config.latent_dim, B = static_cast<int>(images.size());
  Tensor<float> zt({B, d});
  for (int b = 0; b < B; ++b) {
    require(static_cast<int>(z[b].size()) == d, "latent code has the wrong dimension");
    std::copy(z[b].begin(), z[b].end(), zt.data() + static_cast<std::size_t>(b) * d);
  }
  Graph<float> g(false);
  Var x = g.constant(to_batch(images));
  Var masks = models.mask_net(g, x);
  const int k = i.zero_based();
  Var appearance = (*models.generators[k])(g, op::select_channel(g, masks, k), g.constant(zt));
  Var out = op::redraw_region(g, x, masks, appearance, k);
  std::vector<Image> result;
  for (int b = 0; b < B; ++b) result.push_back(image_from_batch(g.value(out), b));
  return result;
}

// loop ------------------------------------------------------------------------

const char* const kMetricsHeader =
    "step,loss_d,loss_g,loss_z,mask_mass_per_region,val_acc,val_iou,restarts,wall_time_s";

namespace {

struct Running {
  double d = 0, g = 0, z = 0;
  std::vector<double> mass;
  long count = 0;
  void add(const DiscriminatorLog& dl, const GeneratorLog& gl) {
    d += dl.loss_d;
    g += gl.loss_g;
    z += gl.loss_z;
    if (mass.size() != gl.mask_mass.size()) mass.assign(gl.mask_mass.size(), 0.0);
    for (std::size_t k = 0; k < mass.size(); ++k) mass[k] += gl.mask_mass[k];
    ++count;
  }
};

std::string join_mass(const std::vector<double>& m, long count) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (std::size_t k = 0; k < m.size(); ++k) os << (k ? " " : "") << m[k] / std::max(1L, count);
  return os.str();
}

}  // namespace

TrainResult train(const NetworkConfig& net, const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks) {
  net.validate();
  cfg.validate();
  if (data.train.empty()) throw ContractError("training set is empty");
  for (const Image& im : data.train)
    require(im.width == net.image_size && im.height == net.image_size && im.channels == net.channels,
            "training image size does not match the network configuration");
  blas::set_single_threaded();
  // Keep large activations on the heap free lists instead of fresh mmaps each step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  const bool write = !cfg.out_dir.empty();
  std::ofstream metrics, restart_log;
  if (write) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output folder " + cfg.out_dir + ": " + ec.message());
    metrics.open(fs::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics in " + cfg.out_dir);
    metrics << kMetricsHeader << '\n';
  }
  const auto path = [&](const std::string& f) { return (fs::path(cfg.out_dir) / f).string(); };
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t seed = attempt == 0 ? cfg.seed : derive_seed(cfg.seed, static_cast<std::uint64_t>(attempt));
    TrainState st = make_train_state(net, cfg, seed);
    st.restarts = attempt;
    if (hooks.after_init) hooks.after_init(st, attempt);
    CollapseMonitor monitor(cfg.restart);
    Running run;
    bool collapsed = false;
    result.best_step = -1;
    result.best_val_iou = -1;

    while (st.step < cfg.max_steps) {
      const Tensor<float> real = sample_batch(data.train, cfg.batch_size, st.rng);
      const Tensor<float> input = sample_batch(data.train, cfg.batch_size, st.rng);
      const DiscriminatorLog dl = discriminator_update(st, real, input);
      const Tensor<float> gen_batch = sample_batch(data.train, cfg.batch_size, st.rng);
      const GeneratorLog gl = generator_update(st, gen_batch);
      ++st.step;
      run.add(dl, gl);
      if (hooks.on_step) hooks.on_step(st, dl, gl);

      if (cfg.restart.enabled && monitor.observe({st.step - 1, gl.mask_mass})) {
        collapsed = true;
        break;
      }

      const bool eval_now = cfg.eval_every > 0 && st.step % cfg.eval_every == 0;
      if (eval_now) {
        double acc = -1, iou = -1;
        if (!data.val.empty()) {
          const EvalResult er = evaluate_masks(*st.models, data.val, MatchLevel::Dataset, cfg.eval_batch);
          acc = er.acc;
          iou = er.iou;
          result.final_val_iou = iou;
          if (iou >= result.best_val_iou) {
            result.best_val_iou = iou;
            result.best_step = st.step;
            if (write) {
              save_checkpoint(path("best.ckpt"), st);
              std::ofstream marker(path("best.txt"), std::ios::trunc);
              marker << "step " << st.step << "\nval_iou " << std::setprecision(17) << iou << '\n';
            }
          }
        }
        if (write) {
          const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          metrics << st.step << ',' << std::setprecision(8) << run.d / run.count << ',' << run.g / run.count << ','
                  << run.z / run.count << ',' << join_mass(run.mass, run.count) << ',';
          if (acc >= 0) metrics << acc << ',' << iou;
          else metrics << ',';
          metrics << ',' << st.restarts << ',' << std::setprecision(6) << wall << '\n';
          metrics.flush();
        }
        run = Running{};
        if (hooks.on_eval) hooks.on_eval(st, iou);
      }
      if (write && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0)
        save_checkpoint(path("step_" + std::to_string(st.step) + ".ckpt"), st);
    }

    if (collapsed) {
      result.restart_steps.push_back(st.step);
      std::ostringstream msg;
      msg << "collapse detected at step " << st.step << " (attempt " << attempt << ", seed " << seed
          << "); mask mass:";
      for (double v : run.mass) msg << ' ' << v / std::max(1L, run.count);
      std::cerr << msg.str() << '\n';
      if (write) {
        if (!restart_log.is_open()) restart_log.open(path("restarts.log"), std::ios::app);
        restart_log << msg.str() << '\n';
        restart_log.flush();
      }
      if (attempt + 1 > cfg.restart.max_restarts) {
        std::ostringstream os;
        os << "training failed: " << attempt + 1 << " collapses, max_restarts " << cfg.restart.max_restarts
           << "; last one at step " << st.step << " with seed " << seed;
        throw TrainingError(os.str());
      }
      continue;
    }

    result.restarts = attempt;
    result.steps = st.step;
    if (write) {
      result.final_checkpoint = path("final.ckpt");
      save_checkpoint(result.final_checkpoint, st);
      if (result.best_step < 0) {
        save_checkpoint(path("best.ckpt"), st);
        std::ofstream marker(path("best.txt"), std::ios::trunc);
        marker << "step " << st.step << "\nval_iou none\n";
        result.best_step = st.step;
      }
      result.best_checkpoint = path("best.ckpt");
    }
    return result;
  }
}

}  // namespace redo
