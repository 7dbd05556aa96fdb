#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records nodes in evaluation order; backward() walks them in exact
// reverse order and pushes adjoints into their inputs. Parameters live in a
// ParameterStore that outlives individual graphs, so one store is reused
// across forward passes while adjoints accumulate in store.grad().

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "occ4d/diff/tensor.hpp"

namespace occ4d::diff {

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init) {
    if (index_.contains(name)) {
      fail(ErrorKind::validation, "ParameterStore: duplicate parameter '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    Tensor g = Tensor::zeros_like(init);
    entries_.push_back({name, std::move(init), std::move(g)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      fail(ErrorKind::validation, "ParameterStore: unknown parameter '" + name + "'");
    }
    return it->second;
  }

  Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& grad(const std::string& name) { return entries_[index_of(name)].grad; }
  const Tensor& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      std::fill(e.grad.values().begin(), e.grad.values().end(), 0.0);
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// A differentiable leaf not tied to any parameter store.
  Var leaf(Tensor value) { return push(std::move(value), true, {}); }

  /// Leaf bound to a store entry; repeated calls return the same node.
  Var parameter(ParameterStore& store, const std::string& name) {
    const std::size_t idx = store.index_of(name);
    auto key = std::make_pair(&store, idx);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) {
      return Var{this, it->second};
    }
    Var v = push(store.entries()[idx].value, true, {});
    nodes_[v.id].store = &store;
    nodes_[v.id].store_index = idx;
    param_nodes_.emplace(key, v.id);
    return v;
  }

  /// Records an operation. fn is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(Var v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adjoint of a node after backward(); zeros if it was never reached.
  Tensor grad(Var v) const {
    check_owner(v);
    const auto& n = nodes_[v.id];
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  /// Adds into the adjoint of v (no-op when v does not require gradients).
  void accumulate(Var v, const Tensor& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) {
      return;
    }
    if (n.grad.empty()) {
      n.grad = Tensor::zeros_like(n.value);
    }
    n.grad += g;
  }

  /// Direct access to an adjoint buffer for in-place accumulation.
  Tensor* grad_buffer(Var v) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) {
      return nullptr;
    }
    if (n.grad.empty()) {
      n.grad = Tensor::zeros_like(n.value);
    }
    return &n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1, runs every recorded rule in reverse order and
  /// adds leaf adjoints into their parameter stores.
  void backward(Var loss) {
    check_owner(loss);
    if (nodes_[loss.id].value.size() != 1) {
      fail(ErrorKind::shape, "backward: loss must be a scalar, got shape " +
                                 shape_str(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) {
      n.grad = Tensor();
    }
    backward_order_.clear();
    accumulate(loss, Tensor(nodes_[loss.id].value.shape(), 1.0));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) {
        backward_order_.push_back(i);
        const Tensor out_grad = n.grad;
        n.backward(*this, out_grad);
      }
    }
    for (auto& n : nodes_) {
      if (n.store != nullptr && !n.grad.empty()) {
        n.store->entries()[n.store_index].grad += n.grad;
      }
    }
  }

  /// Node ids whose rules ran during the last backward(), in visit order.
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    ParameterStore* store = nullptr;
    std::size_t store_index = 0;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(fn), requires_grad, nullptr, 0});
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.graph != this || v.id >= nodes_.size()) {
      fail(ErrorKind::validation, "Var does not belong to this graph");
    }
  }

  std::vector<Node> nodes_;
  std::map<std::pair<const ParameterStore*, std::size_t>, std::size_t> param_nodes_;
  std::vector<std::size_t> backward_order_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

}  // namespace occ4d::diff
