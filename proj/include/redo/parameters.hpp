#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "redo/tensor.hpp"

namespace redo {

/// A named tensor owned by a ParameterStore. Buffers (spectral-norm vectors,
/// running statistics) share the layout but carry no gradient.
/// How initialize_parameters() fills an entry.
enum class InitKind { Orthogonal, Zero, One, UnitRandom };

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  InitKind init = InitKind::Orthogonal;
  const void* owner = nullptr;  // the ParameterStore holding this entry
};

/// Insertion-ordered collection of named parameters and buffers.
/// Shapes are fixed at creation; references returned by add() stay valid.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& add(const std::string& name, const Shape& shape, bool trainable = true,
                    InitKind init = InitKind::Orthogonal) {
    require(!index_.contains(name), "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    if (trainable) p->grad = Tensor<T>(shape);
    p->trainable = trainable;
    p->init = init;
    p->owner = this;
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  Parameter<T>& get(const std::string& name) {
    auto* p = find(name);
    require(p != nullptr, "unknown parameter: " + name);
    return *p;
  }

  std::size_t size() const { return items_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

  /// Number of trainable scalars.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p->trainable) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_)
      if (p->trainable) p->grad.fill(T(0));
  }

  /// Copies values of every entry from `other`; names and shapes must match exactly.
  void assign(const ParameterStore& other) {
    require(other.size() == size(), "parameter store layout mismatch");
    for (std::size_t i = 0; i < items_.size(); ++i) {
      require(items_[i]->name == other[i].name && items_[i]->value.shape() == other[i].value.shape(),
              "parameter store layout mismatch at " + items_[i]->name);
      items_[i]->value = other[i].value;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace redo
