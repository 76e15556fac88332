#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "redo/parameters.hpp"
#include "redo/tensor.hpp"

namespace redo {

/// Handle to a value recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Every op appends a node whose backward closure receives the
/// node's gradient and accumulates into its parents. Nodes are evaluated in
/// reverse creation order, which is a valid topological order by construction.
///
/// A graph is single-use: build it with forward ops, call backward() once.
template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  explicit Graph(bool training = true) : training_(training) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Training mode: batch statistics and spectral-norm power iterations update their buffers.
  bool training() const { return training_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false); }

  /// Leaf that collects a gradient (read it back with grad()).
  Var input(Tensor<T> value) { return push(std::move(value), true); }

  /// Leaf backed by external storage; gradients accumulate straight into p.grad
  /// when the parameter is trainable and `collect` is set.
  Var parameter(Parameter<T>& p, bool collect = true) {
    Node node;
    node.external = &p.value;
    node.needs_grad = collect && p.trainable && !is_frozen(p.owner);
    if (node.needs_grad) node.external_grad = &p.grad;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Appends an op result. The node needs a gradient iff any parent does.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, Backward backward) {
    bool any = false;
    for (Var p : parents) any = any || needs_grad(p);
    return record_if(std::move(value), any, std::move(backward));
  }
  Var record(Tensor<T> value, const std::vector<Var>& parents, Backward backward) {
    bool any = false;
    for (Var p : parents) any = any || needs_grad(p);
    return record_if(std::move(value), any, std::move(backward));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.external ? *n.external : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }

  bool needs_grad(Var v) const { return v.valid() && nodes_.at(static_cast<std::size_t>(v.id)).needs_grad; }

  /// Gradient buffer for v, allocated zeroed on first touch. Null when v needs no gradient.
  Tensor<T>* grad_buffer(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.needs_grad) return nullptr;
    if (n.external_grad) return n.external_grad;
    if (n.grad.size() != value(v).size() || n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    n.touched = true;
    return &n.grad;
  }

  /// Gradient accumulated for v during backward (zeros if it never received any).
  const Tensor<T>& grad(Var v) {
    Tensor<T>* g = grad_buffer(v);
    require(g != nullptr, "grad() on a node that does not need gradients");
    return *g;
  }

  /// Seeds d(loss)/d(root) and back-propagates through the whole tape.
  void backward(const std::vector<std::pair<Var, Tensor<T>>>& seeds) {
    for (const auto& [v, seed] : seeds) {
      Tensor<T>* g = grad_buffer(v);
      if (!g) continue;
      require(seed.shape() == value(v).shape(), "seed shape mismatch");
      for (std::size_t i = 0; i < seed.size(); ++i) (*g)[i] += seed[i];
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.touched && n.backward) n.backward(*this, n.grad);
    }
  }
  void backward(Var root, const Tensor<T>& seed) { backward({{root, seed}}); }

  std::size_t node_count() const { return nodes_.size(); }

  /// Parameters of a frozen store enter the graph as constants: gradients still
  /// flow through the ops that use them, but nothing accumulates into the store.
  void freeze(const ParameterStore<T>& store) { frozen_.push_back(&store); }
  bool is_frozen(const void* owner) const {
    return std::find(frozen_.begin(), frozen_.end(), owner) != frozen_.end();
  }
  /// Spectral vectors and running statistics of frozen stores are read, never written.
  bool updates_state(const void* owner) const { return training_ && !is_frozen(owner); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T>* external = nullptr;
    Tensor<T>* external_grad = nullptr;
    Backward backward;
    bool needs_grad = false;
    bool touched = false;
  };

  Var push(Tensor<T> value, bool needs) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var record_if(Tensor<T> value, bool needs, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool training_;
  std::deque<Node> nodes_;
  std::vector<const void*> frozen_;
};

}  // namespace redo
