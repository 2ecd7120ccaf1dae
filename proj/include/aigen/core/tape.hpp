#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aigen/core/tensor.hpp"

namespace aigen {

/// A trainable array together with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), T{0}) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <class T>
class Tape;

/// Handle to a node recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T item() const { return value().data.at(0); }
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, which is
/// a topological order, so the backward sweep is a single reverse pass.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient stays on the tape (read it back with grad()).
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Trainable parameter: gradients are added into p.grad by backward().
  Var<T> parameter(Parameter<T>& p) { return bind(p, &p); }

  /// Frozen parameter: read in place, never receives gradient.
  Var<T> parameter(const Parameter<T>& p) { return bind(p, nullptr); }

  /// Records an op output. The node requires grad when any input does; the
  /// backward function is dropped otherwise.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  std::vector<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
    return n.grad;
  }

  const std::vector<T>& grad(Var<T> v) { return grad(v.id); }

  /// Back-propagates from a 1x1 root. Returns the number of nodes visited.
  std::size_t backward(Var<T> root) {
    detail::require(value(root.id).size() == 1, "backward root must be a scalar");
    if (!nodes_[root.id].requires_grad) return 0;
    grad(root.id)[0] = T{1};
    std::size_t visited = 0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      ++visited;
      if (n.backward) n.backward(*this, i);
      if (n.sink) {
        auto& g = n.sink->grad;
        if (g.size() != n.grad.size()) g.assign(n.grad.size(), T{0});
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
    return visited;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Parameter<T>* sink = nullptr;
    std::vector<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> bind(const Parameter<T>& p, Parameter<T>* sink) {
    if (auto it = bound_.find(&p); it != bound_.end()) {
      // a parameter bound frozen then trainable (or the reverse) is a caller bug
      detail::require(nodes_[it->second].sink == sink, "parameter bound with mixed trainability");
      return {this, it->second};
    }
    Node n;
    n.external = &p.value;
    n.sink = sink;
    n.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    bound_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
};

}  // namespace aigen
