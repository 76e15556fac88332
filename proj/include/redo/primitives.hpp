#pragma once

// Building blocks shared by the four networks: convolution and linear layers
// with optional spectral normalization, self-attention, conditional batch
// normalization, pyramid pooling and residual blocs.

#include <cmath>
#include <string>
#include <vector>

#include "redo/ops.hpp"
#include "redo/random.hpp"

namespace redo {

/// Orthogonal matrix of the given shape (viewed as shape[0] x rest) scaled by
/// `gain`: rows are orthonormal when rows <= cols, columns otherwise.
template <class T>
Tensor<T> orthogonal_init(const Shape& shape, double gain, Rng& rng) {
  require(!shape.empty() && numel(shape) > 0, "orthogonal_init on an empty shape");
  require(gain > 0, "orthogonal_init gain must be positive");
  const int rows = shape[0];
  const int cols = static_cast<int>(numel(shape) / rows);
  const int tall = std::max(rows, cols), wide = std::min(rows, cols);
  // Gaussian tall x wide matrix, columns orthonormalized by modified Gram-Schmidt.
  std::vector<double> q(static_cast<std::size_t>(tall) * wide);
  for (double& v : q) v = normal(rng);
  for (int j = 0; j < wide; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) {
        double dot = 0;
        for (int r = 0; r < tall; ++r) dot += q[r * wide + i] * q[r * wide + j];
        for (int r = 0; r < tall; ++r) q[r * wide + j] -= dot * q[r * wide + i];
      }
    double norm = 0;
    for (int r = 0; r < tall; ++r) norm += q[r * wide + j] * q[r * wide + j];
    norm = std::sqrt(norm);
    for (int r = 0; r < tall; ++r) q[r * wide + j] /= norm;
  }
  Tensor<T> out(shape);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = rows >= cols ? q[r * wide + c] : q[c * wide + r];
      out[static_cast<std::size_t>(r) * cols + c] = static_cast<T>(gain * v);
    }
  return out;
}

/// Fills every entry of `store` according to its InitKind, in insertion order.
template <class T>
void initialize_parameters(ParameterStore<T>& store, Rng& rng, double gain) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter<T>& p = store[i];
    switch (p.init) {
      case InitKind::Orthogonal:
        p.value = orthogonal_init<T>(p.value.shape(), gain, rng);
        break;
      case InitKind::Zero:
        p.value.fill(T(0));
        break;
      case InitKind::One:
        p.value.fill(T(1));
        break;
      case InitKind::UnitRandom: {
        double norm = 0;
        std::vector<double> v(p.value.size());
        for (double& x : v) {
          x = normal(rng);
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < v.size(); ++k) p.value[k] = static_cast<T>(v[k] / norm);
        break;
      }
    }
  }
  store.zero_grad();
}

/// Weight plus optional bias and spectral-norm state, shared by Conv2d and Linear.
template <class T>
class WeightedLayer {
 public:
  Parameter<T>& weight() { return *weight_; }
  Parameter<T>* bias() { return bias_; }
  Parameter<T>* spectral_u() { return u_; }

 protected:
  WeightedLayer(ParameterStore<T>& store, const std::string& name, const Shape& shape, bool bias, bool spectral) {
    weight_ = &store.add(name + ".weight", shape);
    if (bias) bias_ = &store.add(name + ".bias", {shape[0]}, true, InitKind::Zero);
    if (spectral) u_ = &store.add(name + ".sn_u", {shape[0]}, false, InitKind::UnitRandom);
  }

  Var effective_weight(Graph<T>& g) {
    Var w = g.parameter(*weight_);
    return u_ ? op::spectral_norm(g, w, u_->value, g.updates_state(u_->owner)) : w;
  }
  Var bias_var(Graph<T>& g) { return bias_ ? g.parameter(*bias_) : Var{}; }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
  Parameter<T>* u_ = nullptr;
};

enum class Padding { Zero, Reflect };

template <class T>
class Conv2d : public WeightedLayer<T> {
 public:
  struct Options {
    int stride = 1;
    int pad = -1;  // -1: k / 2
    Padding padding = Padding::Zero;
    bool bias = true;
    bool spectral = false;
  };

  Conv2d(ParameterStore<T>& store, const std::string& name, int in, int out, int k, Options opt)
      : WeightedLayer<T>(store, name, {out, in, k, k}, opt.bias, opt.spectral),
        stride_(opt.stride),
        pad_(opt.pad < 0 ? k / 2 : opt.pad),
        padding_(opt.padding) {}

  Var operator()(Graph<T>& g, Var x) {
    Var w = this->effective_weight(g);
    if (padding_ == Padding::Reflect && pad_ > 0) return op::conv2d(g, op::pad_reflect(g, x, pad_), w, this->bias_var(g), stride_, 0);
    return op::conv2d(g, x, w, this->bias_var(g), stride_, pad_);
  }

 private:
  int stride_;
  int pad_;
  Padding padding_;
};

template <class T>
class Linear : public WeightedLayer<T> {
 public:
  Linear(ParameterStore<T>& store, const std::string& name, int in, int out, bool bias, bool spectral,
         InitKind bias_init = InitKind::Zero)
      : WeightedLayer<T>(store, name, {out, in}, bias, spectral) {
    if (bias) this->bias()->init = bias_init;
  }

  Var operator()(Graph<T>& g, Var x) { return op::linear(g, x, this->effective_weight(g), this->bias_var(g)); }
};

/// Non-local block: y = x + gamma * proj(attend(x)), gamma starting at zero.
/// Query/key use channels/8, values channels/2 (at least one each).
template <class T>
class SelfAttention {
 public:
  SelfAttention(ParameterStore<T>& store, const std::string& name, int channels, bool spectral)
      : channels_(channels),
        qk_(std::max(1, channels / 8)),
        v_(std::max(1, channels / 2)),
        query_(store, name + ".query", channels, qk_, 1, opts(spectral)),
        key_(store, name + ".key", channels, qk_, 1, opts(spectral)),
        value_(store, name + ".value", channels, v_, 1, opts(spectral)),
        out_(store, name + ".out", v_, channels, 1, opts(spectral)),
        gamma_(&store.add(name + ".gamma", {1}, true, InitKind::Zero)) {}

  Var operator()(Graph<T>& g, Var x) {
    Var attn = attention(g, x);
    const Shape& s = g.shape(x);
    const int batch = s[0], h = s[2], w = s[3], n = h * w;
    Var v = op::reshape(g, value_(g, x), {batch, v_, n});
    Var o = op::reshape(g, op::bmm(g, v, attn, false, true), {batch, v_, h, w});
    return op::add(g, x, op::mul_scalar(g, out_(g, o), g.parameter(*gamma_)));
  }

  /// Row-stochastic [batch, positions, positions] map: row q weights the keys for query q.
  Var attention(Graph<T>& g, Var x) {
    const Shape& s = g.shape(x);
    require(s.size() == 4 && s[1] == channels_, "self-attention channel mismatch");
    const int batch = s[0], n = s[2] * s[3];
    Var q = op::reshape(g, query_(g, x), {batch, qk_, n});
    Var k = op::reshape(g, key_(g, x), {batch, qk_, n});
    return op::softmax_rows(g, op::bmm(g, q, k, true, false));
  }

  Parameter<T>& gamma() { return *gamma_; }

 private:
  static typename Conv2d<T>::Options opts(bool spectral) {
    typename Conv2d<T>::Options o;
    o.pad = 0;
    o.bias = false;
    o.spectral = spectral;
    return o;
  }

  int channels_;
  int qk_;
  int v_;
  Conv2d<T> query_;
  Conv2d<T> key_;
  Conv2d<T> value_;
  Conv2d<T> out_;
  Parameter<T>* gamma_;
};

/// Batch normalization whose per-channel scale and shift are affine maps of a latent code.
/// gamma(z) = W_g z + b_g (b_g starts at 1), beta(z) = W_b z + b_b (b_b starts at 0).
template <class T>
class ConditionalBatchNorm {
 public:
  ConditionalBatchNorm(ParameterStore<T>& store, const std::string& name, int channels, int latent_dim,
                       bool spectral)
      : channels_(channels),
        gamma_(store, name + ".gamma", latent_dim, channels, true, spectral, InitKind::One),
        beta_(store, name + ".beta", latent_dim, channels, true, spectral, InitKind::Zero),
        mean_(&store.add(name + ".running_mean", {channels}, false, InitKind::Zero)),
        var_(&store.add(name + ".running_var", {channels}, false, InitKind::One)) {}

  Var operator()(Graph<T>& g, Var x, Var z) {
    require(g.shape(x).size() == 4 && g.shape(x)[1] == channels_, "conditional batch norm channel mismatch");
    Var normed = op::batch_norm(g, x, mean_->value, var_->value, T(0.1), T(1e-5), g.updates_state(mean_->owner));
    return op::channel_affine(g, normed, gamma_(g, z), beta_(g, z));
  }

  Linear<T>& gamma_map() { return gamma_; }
  Linear<T>& beta_map() { return beta_; }
  Parameter<T>& running_mean() { return *mean_; }
  Parameter<T>& running_var() { return *var_; }

 private:
  int channels_;
  Linear<T> gamma_;
  Linear<T> beta_;
  Parameter<T>* mean_;
  Parameter<T>* var_;
};

/// Appends one channel per pyramid scale: adaptive average pooling into s x s
/// bins, a bias-free 1x1 projection to one channel, nearest upsampling back.
template <class T>
class PyramidPooling {
 public:
  PyramidPooling(ParameterStore<T>& store, const std::string& name, int channels, std::vector<int> scales = {1, 2, 3, 6})
      : channels_(channels), scales_(std::move(scales)) {
    require(!scales_.empty(), "pyramid pooling needs at least one scale");
    typename Conv2d<T>::Options o;
    o.pad = 0;
    o.bias = false;
    for (int s : scales_) proj_.emplace_back(store, name + ".scale" + std::to_string(s), channels, 1, 1, o);
  }

  int output_channels() const { return channels_ + static_cast<int>(scales_.size()); }
  const std::vector<int>& scales() const { return scales_; }

  Var operator()(Graph<T>& g, Var x) {
    const Shape& s = g.shape(x);
    require(s.size() == 4 && s[1] == channels_, "pyramid pooling channel mismatch");
    std::vector<Var> parts{x};
    for (std::size_t i = 0; i < scales_.size(); ++i) {
      Var pooled = op::adaptive_avg_pool(g, x, scales_[i]);
      parts.push_back(op::resize_nearest(g, proj_[i](g, pooled), s[2], s[3]));
    }
    return op::concat_channels(g, parts);
  }

  Conv2d<T>& projection(std::size_t i) { return proj_.at(i); }

 private:
  int channels_;
  std::vector<int> scales_;
  std::vector<Conv2d<T>> proj_;
};

enum class ResVariant { Plain, Down, Up };
enum class ResNorm { None, Instance, ConditionalBatch };

struct ResBlockConfig {
  int in_channels = 0;
  int out_channels = 0;
  ResVariant variant = ResVariant::Plain;
  ResNorm norm = ResNorm::None;
  bool spectral = false;
  bool pre_activation = true;  // leading ReLU on the branch; off for a bloc that reads raw pixels
  int latent_dim = 0;          // required for ConditionalBatch
};

/// y = shortcut(x) + branch(x).
///
/// Instance norm (image-to-image style, plain only):
///   branch = IN(conv3(pad(ReLU(IN(conv3(pad(x)))))))  with reflection padding.
/// Otherwise (pre-activation GAN style):
///   branch = [down](conv3(ReLU([CBN] conv3([up](ReLU([CBN] x))))))
///   shortcut = [down](conv1([up] x)) when channels or resolution change, else x.
/// Down halves resolution by 2x2 average pooling, up doubles it by nearest upsampling.
template <class T>
class ResBlock {
 public:
  ResBlock(ParameterStore<T>& store, const std::string& name, ResBlockConfig cfg) : cfg_(cfg) {
    require(cfg.in_channels > 0 && cfg.out_channels > 0, "residual bloc channels must be positive");
    typename Conv2d<T>::Options o;
    o.spectral = cfg.spectral;
    if (cfg.norm == ResNorm::Instance) {
      require(cfg.variant == ResVariant::Plain && cfg.in_channels == cfg.out_channels,
              "instance-norm residual bloc must keep shape");
      o.padding = Padding::Reflect;
      o.bias = false;
    }
    if (cfg.norm == ResNorm::ConditionalBatch) {
      require(cfg.latent_dim > 0, "conditional residual bloc needs a latent size");
      cbn1_.emplace_back(store, name + ".cbn1", cfg.in_channels, cfg.latent_dim, cfg.spectral);
    }
    conv1_.emplace_back(store, name + ".conv1", cfg.in_channels, cfg.out_channels, 3, o);
    if (cfg.norm == ResNorm::ConditionalBatch)
      cbn2_.emplace_back(store, name + ".cbn2", cfg.out_channels, cfg.latent_dim, cfg.spectral);
    conv2_.emplace_back(store, name + ".conv2", cfg.out_channels, cfg.out_channels, 3, o);
    if (cfg.in_channels != cfg.out_channels || cfg.variant != ResVariant::Plain) {
      typename Conv2d<T>::Options so;
      so.pad = 0;
      so.spectral = cfg.spectral;
      shortcut_.emplace_back(store, name + ".shortcut", cfg.in_channels, cfg.out_channels, 1, so);
    }
  }

  const ResBlockConfig& config() const { return cfg_; }

  Var operator()(Graph<T>& g, Var x, Var z = {}) {
    if (cfg_.norm == ResNorm::Instance) {
      Var h = op::relu(g, op::instance_norm(g, conv1_[0](g, x)));
      h = op::instance_norm(g, conv2_[0](g, h));
      return op::add(g, x, h);
    }
    Var h = x;
    if (cfg_.norm == ResNorm::ConditionalBatch) h = cbn1_[0](g, h, z);
    if (cfg_.pre_activation) h = op::relu(g, h);
    if (cfg_.variant == ResVariant::Up) h = op::upsample2(g, h);
    h = conv1_[0](g, h);
    if (cfg_.norm == ResNorm::ConditionalBatch) h = cbn2_[0](g, h, z);
    h = conv2_[0](g, op::relu(g, h));
    if (cfg_.variant == ResVariant::Down) h = op::avg_pool(g, h, 2);

    Var s = x;
    if (cfg_.variant == ResVariant::Up) s = op::upsample2(g, s);
    if (!shortcut_.empty()) s = shortcut_[0](g, s);
    if (cfg_.variant == ResVariant::Down) s = op::avg_pool(g, s, 2);
    return op::add(g, s, h);
  }

 private:
  ResBlockConfig cfg_;
  std::vector<ConditionalBatchNorm<T>> cbn1_;
  std::vector<ConditionalBatchNorm<T>> cbn2_;
  std::vector<Conv2d<T>> conv1_;
  std::vector<Conv2d<T>> conv2_;
  std::vector<Conv2d<T>> shortcut_;
};

}  // namespace redo
