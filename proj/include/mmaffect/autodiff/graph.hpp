#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mmaffect/autodiff/tensor.hpp"

namespace mmaffect::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * Append-only tape of operations. Inputs are recorded before the nodes that
 * consume them, so a reverse sweep over insertion order is a valid
 * topological order for backpropagation.
 *
 * Leaves come in two flavours: constants (owned, never differentiated) and
 * inputs, which reference a caller-owned Tensor. An input whose tensor has
 * requires_grad set receives d(loss)/d(tensor) in its grad() buffer after
 * backward(); repeated calls accumulate.
 */
class Graph {
 public:
  /// Called during backward with the adjoint and the value of the node's output.
  using BackwardFn = std::function<void(Graph&, std::span<const double>, const Tensor&)>;

  Graph() = default;
  /// With grad_enabled false no input is differentiated and no backward closures are kept.
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) {
    Node node;
    node.kind = "constant";
    node.owned = std::move(value);
    return push(std::move(node));
  }

  /// References `tensor`; it must outlive the graph.
  Var input(Tensor& tensor) {
    Node node;
    node.kind = "input";
    node.external = &tensor;
    node.needs_grad = grad_enabled_ && tensor.requires_grad();
    return push(std::move(node));
  }

  Var record(std::string_view kind, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    Node node;
    node.kind = kind;
    node.owned = std::move(value);
    for (const Var& in : inputs) {
      check_owned(in);
      node.inputs.push_back(in.id());
      node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  Var record(std::string_view kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(kind, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const Tensor& value(std::size_t id) const {
    const Node& node = nodes_[id];
    return node.external ? *node.external : *node.owned;
  }
  const Tensor& value(Var v) const { return value(v.id()); }

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  std::string_view kind(Var v) const { return nodes_[v.id()].kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint buffer of `v`; only meaningful inside a BackwardFn.
  std::span<double> adjoint(Var v) {
    auto& buf = adjoints_[v.id()];
    if (buf.empty()) buf.assign(value(v).size(), 0.0);
    return buf;
  }

  void backward(Var loss) {
    check_owned(loss);
    if (value(loss).size() != 1) {
      fail(ErrorCode::NonScalarLoss, "loss has shape " + shape_string(value(loss).shape()));
    }
    adjoints_.assign(nodes_.size(), {});
    adjoints_[loss.id()].assign(1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      auto& adj = adjoints_[i];
      if (adj.empty() || !node.needs_grad) continue;
      if (node.external) {
        auto grad = node.external->mutable_grad();
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += adj[k];
      } else if (node.backward) {
        node.backward(*this, adj, *node.owned);
      }
      std::vector<double>().swap(adj);
    }
    adjoints_.clear();
  }

  /// Var handle for a node id of this graph.
  Var var(std::size_t id) { return Var(this, id); }

 private:
  struct Node {
    std::string_view kind;
    std::optional<Tensor> owned;
    Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(Var v) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
      fail(ErrorCode::InvalidArgument, "variable does not belong to this graph");
    }
  }

  bool grad_enabled_ = true;
  std::deque<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace mmaffect::ad
