#pragma once

#include <cmath>
#include <vector>

#include "redo/parameters.hpp"

namespace redo {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam over the trainable entries of one store, bias-corrected:
///   g += wd * w;  m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   w -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamOptions opt) : store_(&store), opt_(opt) {
    require(opt.lr > 0 && opt.beta1 >= 0 && opt.beta1 < 1 && opt.beta2 >= 0 && opt.beta2 < 1 && opt.eps > 0,
            "invalid Adam settings");
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store[i].trainable) {
        index_.push_back(i);
        m_.emplace_back(store[i].value.shape());
        v_.emplace_back(store[i].value.shape());
      }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < index_.size(); ++k) {
      Parameter<T>& p = (*store_)[index_[k]];
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double gi = static_cast<double>(g[i]) + opt_.weight_decay * static_cast<double>(w[i]);
        const double mi = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        const double vi = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] = static_cast<T>(w[i] - opt_.lr * (mi / c1) / (std::sqrt(vi / c2) + opt_.eps));
      }
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::size_t slot_count() const { return index_.size(); }
  std::size_t slot_parameter(std::size_t k) const { return index_[k]; }
  Tensor<T>& first_moment(std::size_t k) { return m_[k]; }
  Tensor<T>& second_moment(std::size_t k) { return v_[k]; }
  const Tensor<T>& first_moment(std::size_t k) const { return m_[k]; }
  const Tensor<T>& second_moment(std::size_t k) const { return v_[k]; }

 private:
  ParameterStore<T>* store_;
  AdamOptions opt_;
  long t_ = 0;
  std::vector<std::size_t> index_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace redo
