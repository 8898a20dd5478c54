#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metainput/errors.hpp"
#include "metainput/tensor.hpp"

namespace metainput {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  inline bool needs_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run tape. Nodes are appended in evaluation order, so inputs
/// always precede their consumers and backward() can walk the tape in exact
/// reverse insertion order. A graph is built for one forward pass and then
/// discarded.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::span<const float>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Borrowed leaf that never receives a gradient. `t` must outlive the graph.
  Var input(const Tensor& t) {
    check_leaf(t, "input");
    Node& n = nodes_.emplace_back();
    n.op = "input";
    n.external = &t;
    return {this, nodes_.size() - 1};
  }

  // Owned constant leaf.
  Var own(Tensor t) {
    check_leaf(t, "constant");
    Node& n = nodes_.emplace_back();
    n.op = "constant";
    n.owned = std::move(t);
    return {this, nodes_.size() - 1};
  }

  // Borrowed leaf whose gradient is written back into `t` by backward() when
  // t.requires_grad() is set.
  Var param(Tensor& t) {
    check_leaf(t, "param");
    Node& n = nodes_.emplace_back();
    n.op = "param";
    n.external = &t;
    if (t.requires_grad()) {
      n.sink = &t;
      n.needs_grad = true;
    }
    return {this, nodes_.size() - 1};
  }

  // Appends an op result. The backward closure is kept only when at least
  // one input needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward) {
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
    Node& n = nodes_.emplace_back();
    n.op = op;
    n.owned = std::move(value);
    for (const Var& v : inputs) {
      n.inputs.push_back(v.id());
      n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient accumulator of a node, allocated as zeros on first use.
  std::span<float> grad_of(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0f);
    return n.grad;
  }

  // Populates d(loss)/d(leaf) in every param leaf that requires grad.
  void backward(Var loss) {
    if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    const Tensor& lv = value(loss.id());
    if (lv.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_str(lv.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id()].needs_grad) return;
    grad_of(loss.id())[0] = 1.0f;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
      if (n.sink) {
        auto& g = n.sink->ensure_grad();
        if (n.grad.empty()) {
          std::fill(g.begin(), g.end(), 0.0f);
        } else {
          std::copy(n.grad.begin(), n.grad.end(), g.begin());
        }
      }
    }
  }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
    std::vector<float> grad;
  };

  static void check_leaf(const Tensor& t, const char* kind) {
    if (!t.all_finite()) {
      throw NumericError(std::string(kind) + ": non-finite value in leaf of shape " +
                         shape_str(t.shape()));
    }
  }

  // deque: node addresses stay stable while the tape grows.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::needs_grad() const { return graph_->needs_grad(id_); }

}  // namespace metainput
