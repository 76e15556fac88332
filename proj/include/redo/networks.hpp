#pragma once

// The four learned functions: mask network, region generators, discriminator
// and latent regressor. All are templates over the scalar type so tests can
// run them in double precision.

#include <bit>
#include <memory>
#include <string>
#include <vector>

#include "redo/primitives.hpp"

namespace redo {

struct NetworkConfig {
  int image_size = 128;  // W = H
  int channels = 3;
  int regions = 2;       // n: objects plus background
  int latent_dim = 32;   // d
  int ch_f = 16;         // mask network stem width
  int ch_g = 64;         // generator width at full resolution
  int ch_d = 64;         // discriminator / regressor width after the first bloc

  /// Down/up stages between the image and the 4x4 innermost resolution.
  int depth() const { return std::countr_zero(static_cast<unsigned>(image_size)) - 2; }

  void validate() const {
    require(image_size >= 32 && std::has_single_bit(static_cast<unsigned>(image_size)),
            "image_size must be a power of two >= 32, got " + std::to_string(image_size));
    require(channels >= 1, "channels must be >= 1");
    require(regions >= 2, "regions must be >= 2");
    require(latent_dim >= 1, "latent_dim must be >= 1");
    require(ch_f >= 8 && ch_g >= 8 && ch_d >= 8, "network widths must be >= 8");
  }

  bool operator==(const NetworkConfig&) const = default;
};

/// F: image -> n soft masks. Reflection-padded 7x7 stem, two stride-2 convs,
/// three instance-norm residual blocs, pyramid pooling, two upsample+conv
/// stages halving channels, 7x7 head, then sigmoid (n = 2) or softmax.
/// No spectral normalization.
template <class T>
class MaskNet {
 public:
  MaskNet(ParameterStore<T>& store, const NetworkConfig& cfg)
      : cfg_((cfg.validate(), cfg)),
        stem_(store, "stem", cfg.channels, cfg.ch_f, 7, reflect_opts(3)),
        down1_(store, "down1", cfg.ch_f, 2 * cfg.ch_f, 3, stride2_opts()),
        down2_(store, "down2", 2 * cfg.ch_f, 4 * cfg.ch_f, 3, stride2_opts()),
        ppm_(store, "ppm", 4 * cfg.ch_f),
        up1_(store, "up1", ppm_.output_channels(), ppm_.output_channels() / 2, 3, plain_opts()),
        up2_(store, "up2", ppm_.output_channels() / 2, ppm_.output_channels() / 4, 3, plain_opts()),
        head_(store, "head", ppm_.output_channels() / 4, cfg.regions == 2 ? 1 : cfg.regions, 7, head_opts()) {
    ResBlockConfig rc;
    rc.in_channels = rc.out_channels = 4 * cfg.ch_f;
    rc.norm = ResNorm::Instance;
    for (int i = 0; i < 3; ++i) res_.emplace_back(store, "res" + std::to_string(i), rc);
  }

  /// [B, C, S, S] -> [B, n, S, S]
  Var operator()(Graph<T>& g, Var image) {
    const Shape& s = g.shape(image);
    require(s.size() == 4 && s[1] == cfg_.channels && s[2] == cfg_.image_size && s[3] == cfg_.image_size,
            "mask network expects [B," + std::to_string(cfg_.channels) + "," + std::to_string(cfg_.image_size) + "," +
                std::to_string(cfg_.image_size) + "], got " + to_string(s));
    Var h = block(g, stem_, image);
    h = block(g, down1_, h);
    h = block(g, down2_, h);
    for (auto& r : res_) h = r(g, h);
    h = ppm_(g, h);
    h = block(g, up1_, op::upsample2(g, h));
    h = block(g, up2_, op::upsample2(g, h));
    Var logits = head_(g, h);
    return cfg_.regions == 2 ? op::sigmoid_pair(g, logits) : op::softmax_channels(g, logits);
  }

  const NetworkConfig& config() const { return cfg_; }
  Conv2d<T>& head() { return head_; }

 private:
  using Opts = typename Conv2d<T>::Options;
  static Opts reflect_opts(int pad) {
    Opts o;
    o.pad = pad;
    o.padding = Padding::Reflect;
    o.bias = false;
    return o;
  }
  static Opts stride2_opts() {
    Opts o;
    o.stride = 2;
    o.pad = 1;
    o.bias = false;
    return o;
  }
  static Opts plain_opts() {
    Opts o;
    o.bias = false;
    return o;
  }
  static Opts head_opts() {
    Opts o;
    o.pad = 3;
    o.padding = Padding::Reflect;
    return o;
  }
  static Var block(Graph<T>& g, Conv2d<T>& conv, Var x) { return op::relu(g, op::instance_norm(g, conv(g, x))); }

  NetworkConfig cfg_;
  Conv2d<T> stem_;
  Conv2d<T> down1_;
  Conv2d<T> down2_;
  std::vector<ResBlock<T>> res_;
  PyramidPooling<T> ppm_;
  Conv2d<T> up1_;
  Conv2d<T> up2_;
  Conv2d<T> head_;
};

/// G_k: (soft mask of region k, latent code) -> appearance in [-1, 1].
///
/// z is mapped linearly to a 4x4 seed, then up-residual blocs with conditional
/// batch norm double the resolution up to the image size. A strided-conv
/// pyramid of the mask is concatenated in front of every bloc, and the full
/// resolution mask in front of the final 3x3 conv. Self-attention follows the
/// bloc that produces min(32, S/2). Every weight is spectrally normalized.
template <class T>
class RegionGenerator {
 public:
  RegionGenerator(ParameterStore<T>& store, const NetworkConfig& cfg) : cfg_((cfg.validate(), cfg)) {
    const int depth = cfg.depth();
    mask_ch_ = std::max(4, cfg.ch_g / 4);
    seed_ch_ = cfg.ch_g << (depth - 1);
    seed_ = std::make_unique<Linear<T>>(store, "seed", cfg.latent_dim, seed_ch_ * 16, true, true);
    typename Conv2d<T>::Options mo;
    mo.stride = 2;
    mo.pad = 1;
    mo.spectral = true;
    // mask_down_[j] maps resolution S / 2^j to S / 2^(j+1).
    for (int j = 0; j < depth; ++j)
      mask_down_.emplace_back(store, "mask_down" + std::to_string(j), j == 0 ? 1 : mask_ch_, mask_ch_, 3, mo);
    int in = seed_ch_;
    const int attention_res = std::min(32, cfg.image_size / 2);
    for (int j = 0; j < depth; ++j) {
      ResBlockConfig rc;
      rc.in_channels = in + mask_ch_;
      rc.out_channels = cfg.ch_g << (depth - 1 - j);
      rc.variant = ResVariant::Up;
      rc.norm = ResNorm::ConditionalBatch;
      rc.spectral = true;
      rc.latent_dim = cfg.latent_dim;
      blocks_.emplace_back(store, "up" + std::to_string(j), rc);
      in = rc.out_channels;
      if ((4 << (j + 1)) == attention_res) {
        attention_after_ = j;
        attention_ = std::make_unique<SelfAttention<T>>(store, "attention", in, true);
      }
    }
    typename Conv2d<T>::Options fo;
    fo.spectral = true;
    out_ = std::make_unique<Conv2d<T>>(store, "out", in + 1, cfg.channels, 3, fo);
  }

  /// mask: [B, 1, S, S], z: [B, d] -> [B, C, S, S]
  Var operator()(Graph<T>& g, Var mask, Var z) {
    const Shape& ms = g.shape(mask);
    require(ms.size() == 4 && ms[1] == 1 && ms[2] == cfg_.image_size && ms[3] == cfg_.image_size,
            "generator mask must be [B,1,S,S], got " + to_string(ms));
    require(g.shape(z) == Shape{ms[0], cfg_.latent_dim}, "generator latent must be [B, d]");
    const int batch = ms[0];
    const int depth = cfg_.depth();
    std::vector<Var> pyramid(static_cast<std::size_t>(depth) + 1);  // pyramid[j]: resolution S / 2^j
    pyramid[0] = mask;
    for (int j = 0; j < depth; ++j) pyramid[j + 1] = op::relu(g, mask_down_[j](g, pyramid[j]));

    Var h = op::reshape(g, (*seed_)(g, z), {batch, seed_ch_, 4, 4});
    for (int j = 0; j < depth; ++j) {
      h = blocks_[j](g, op::concat_channels(g, {h, pyramid[depth - j]}), z);
      if (j == attention_after_) h = (*attention_)(g, h);
    }
    h = op::concat_channels(g, {op::relu(g, h), mask});
    return op::tanh(g, (*out_)(g, h));
  }

  const NetworkConfig& config() const { return cfg_; }

 private:
  NetworkConfig cfg_;
  int mask_ch_ = 0;
  int seed_ch_ = 0;
  int attention_after_ = -1;
  std::unique_ptr<Linear<T>> seed_;
  std::vector<Conv2d<T>> mask_down_;
  std::vector<ResBlock<T>> blocks_;
  std::unique_ptr<SelfAttention<T>> attention_;
  std::unique_ptr<Conv2d<T>> out_;
};

/// Down-residual trunk shared by the discriminator and the latent regressor:
/// depth down blocs (width ch, 2ch, 4ch, ...), self-attention after the first,
/// a plain bloc, ReLU and spatial sum pooling. Spectrally normalized.
template <class T>
class DownTrunk {
 public:
  DownTrunk(ParameterStore<T>& store, const NetworkConfig& cfg) : cfg_((cfg.validate(), cfg)) {
    const int depth = cfg.depth();
    int in = cfg.channels;
    for (int j = 0; j < depth; ++j) {
      ResBlockConfig rc;
      rc.in_channels = in;
      rc.out_channels = cfg.ch_d << j;
      rc.variant = ResVariant::Down;
      rc.spectral = true;
      rc.pre_activation = j > 0;
      blocks_.emplace_back(store, "down" + std::to_string(j), rc);
      in = rc.out_channels;
      if (j == 0) attention_ = std::make_unique<SelfAttention<T>>(store, "attention", in, true);
    }
    ResBlockConfig last;
    last.in_channels = last.out_channels = in;
    last.spectral = true;
    blocks_.emplace_back(store, "final", last);
    features_ = in;
  }

  int feature_count() const { return features_; }

  /// [B, C, S, S] -> [B, features]
  Var operator()(Graph<T>& g, Var image) {
    const Shape& s = g.shape(image);
    require(s.size() == 4 && s[1] == cfg_.channels && s[2] == cfg_.image_size && s[3] == cfg_.image_size,
            "down trunk input must match the configured image size; got " + to_string(s));
    Var h = image;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      h = blocks_[j](g, h);
      if (j == 0) h = (*attention_)(g, h);
    }
    return op::sum_spatial(g, op::relu(g, h));
  }

 private:
  NetworkConfig cfg_;
  std::vector<ResBlock<T>> blocks_;
  std::unique_ptr<SelfAttention<T>> attention_;
  int features_ = 0;
};

/// D: image -> unbounded realism score, shape [B, 1].
template <class T>
class Discriminator {
 public:
  Discriminator(ParameterStore<T>& store, const NetworkConfig& cfg)
      : trunk_(store, cfg), head_(store, "head", trunk_.feature_count(), 1, true, true) {}

  Var operator()(Graph<T>& g, Var image) { return head_(g, trunk_(g, image)); }

 private:
  DownTrunk<T> trunk_;
  Linear<T> head_;
};

/// delta: image -> estimate of the latent code of region i, shape [B, d].
/// The trunk is shared by all regions; each region has its own linear head.
template <class T>
class LatentRegressor {
 public:
  LatentRegressor(ParameterStore<T>& store, const NetworkConfig& cfg) : trunk_(store, cfg), regions_(cfg.regions) {
    for (int k = 0; k < cfg.regions; ++k)
      heads_.emplace_back(store, "head" + std::to_string(k), trunk_.feature_count(), cfg.latent_dim, true, true);
  }

  /// `region` is 0-based.
  Var operator()(Graph<T>& g, Var image, int region) {
    require(region >= 0 && region < regions_, "latent regressor region index out of range");
    return heads_[region](g, trunk_(g, image));
  }

  Linear<T>& head(int region) { return heads_.at(region); }

 private:
  DownTrunk<T> trunk_;
  int regions_;
  std::vector<Linear<T>> heads_;
};

/// Every network of one model with its own parameter store.
template <class T>
struct ModelSet {
  explicit ModelSet(const NetworkConfig& cfg)
      : config(cfg), mask_net(mask_store, cfg), discriminator(disc_store, cfg), regressor(regressor_store, cfg) {
    for (int k = 0; k < cfg.regions; ++k) {
      gen_stores.push_back(std::make_unique<ParameterStore<T>>());
      generators.push_back(std::make_unique<RegionGenerator<T>>(*gen_stores.back(), cfg));
    }
  }
  ModelSet(const ModelSet&) = delete;
  ModelSet& operator=(const ModelSet&) = delete;

  /// Named stores in a fixed order: mask, gen1..genN, disc, regressor.
  std::vector<std::pair<std::string, ParameterStore<T>*>> stores() {
    std::vector<std::pair<std::string, ParameterStore<T>*>> out{{"mask", &mask_store}};
    for (std::size_t k = 0; k < gen_stores.size(); ++k) out.emplace_back("gen" + std::to_string(k + 1), gen_stores[k].get());
    out.emplace_back("disc", &disc_store);
    out.emplace_back("regressor", &regressor_store);
    return out;
  }

  void initialize(Rng& rng, double gain) {
    for (auto& [name, store] : stores()) initialize_parameters(*store, rng, gain);
  }

  NetworkConfig config;
  ParameterStore<T> mask_store;
  ParameterStore<T> disc_store;
  ParameterStore<T> regressor_store;
  std::vector<std::unique_ptr<ParameterStore<T>>> gen_stores;
  MaskNet<T> mask_net;
  Discriminator<T> discriminator;
  LatentRegressor<T> regressor;
  std::vector<std::unique_ptr<RegionGenerator<T>>> generators;
};

}  // namespace redo
