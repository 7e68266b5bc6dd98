#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph owns every node created while evaluating one expression (one
// training batch, one loss evaluation). Nodes are appended in evaluation
// order, so the node vector is already topologically sorted and backward()
// is a single reverse sweep. Graphs are cheap to build and are meant to be
// discarded after use.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "epsfair/tensor.hpp"

namespace epsfair {

enum class OpTag {
  kParameter,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddRow,
  kScale,
  kAddConst,
  kExp,
  kLog,
  kRelu,
  kTanh,
  kClampMin,
  kSum,
  kMean,
  kRowSum,
  kRowMean,
  kLogSumExpRows,
  kL2NormalizeRows,
  kGather,
  kGatherRow,
  kGatherEntries,
  kGatherRows,
  kPairwiseSqDists,
  kSqDistRows,
  kConcat,
  kStack,
  kOuterDiff,
  kReshape,
};

inline const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kParameter: return "parameter";
    case OpTag::kConstant: return "constant";
    case OpTag::kMatMul: return "matmul";
    case OpTag::kTranspose: return "transpose";
    case OpTag::kAdd: return "add";
    case OpTag::kSub: return "sub";
    case OpTag::kMul: return "mul";
    case OpTag::kDiv: return "div";
    case OpTag::kAddRow: return "add_row";
    case OpTag::kScale: return "scale";
    case OpTag::kAddConst: return "add_const";
    case OpTag::kExp: return "exp";
    case OpTag::kLog: return "log";
    case OpTag::kRelu: return "relu";
    case OpTag::kTanh: return "tanh";
    case OpTag::kClampMin: return "clamp_min";
    case OpTag::kSum: return "sum";
    case OpTag::kMean: return "mean";
    case OpTag::kRowSum: return "row_sum";
    case OpTag::kRowMean: return "row_mean";
    case OpTag::kLogSumExpRows: return "logsumexp_rows";
    case OpTag::kL2NormalizeRows: return "l2_normalize_rows";
    case OpTag::kGather: return "gather";
    case OpTag::kGatherRow: return "gather_row";
    case OpTag::kGatherEntries: return "gather_entries";
    case OpTag::kGatherRows: return "gather_rows";
    case OpTag::kPairwiseSqDists: return "pairwise_sq_dists";
    case OpTag::kSqDistRows: return "sq_dist_rows";
    case OpTag::kConcat: return "concat";
    case OpTag::kStack: return "stack";
    case OpTag::kOuterDiff: return "outer_diff";
    case OpTag::kReshape: return "reshape";
  }
  return "?";
}

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph
/// lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t index) : graph_(graph), index_(index) {}

  Graph& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

class Graph {
 public:
  /// Called with the node's own index and its finished adjoint; accumulates
  /// into the parents' adjoints.
  using BackwardFn = std::function<void(Graph&, std::size_t self, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var parameter(Tensor value) {
    return record(OpTag::kParameter, {}, std::move(value), nullptr, true);
  }

  Var constant(Tensor value) {
    return record(OpTag::kConstant, {}, std::move(value), nullptr, false);
  }

  Var constant(double v) { return constant(Tensor::scalar(v)); }

  std::size_t size() const { return nodes_.size(); }
  OpTag tag(Var v) const { return nodes_.at(v.index()).tag; }
  const std::vector<std::size_t>& parents(Var v) const { return nodes_.at(v.index()).parents; }
  const Tensor& value(std::size_t index) const { return nodes_.at(index).value; }
  const Tensor& value(Var v) const { return value(v.index()); }
  bool requires_grad(std::size_t index) const { return nodes_.at(index).requires_grad; }

  /// Adjoint of `v` after the last backward(); zeros for nodes the root
  /// does not depend on.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.index());
    if (n.grad.size() == n.value.size() && n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
  }

  /// Number of nodes whose backward closure ran in the last backward().
  std::size_t last_backward_visits() const { return visits_; }

  void backward(Var root) {
    if (!value(root).is_scalar()) {
      throw ShapeError("backward() needs a scalar root, got shape " +
                       shape_str(value(root).shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[root.index()] = 1;
    grad_buffer(root.index()).fill(1.0);
    visits_ = 0;
    for (std::size_t i = root.index() + 1; i-- > 0;) {
      if (!reachable[i]) continue;
      Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      for (std::size_t p : n.parents) reachable[p] = 1;
      if (!n.backward || !n.has_grad) continue;
      ++visits_;
      // Closures only touch parent adjoints, and no node is appended during
      // the sweep, so n.grad stays valid.
      n.backward(*this, i, n.grad);
    }
  }

  // -- used by op implementations ------------------------------------------

  Var record(OpTag tag, std::vector<std::size_t> parents, Tensor value,
             BackwardFn backward, std::optional<bool> force_grad = std::nullopt) {
    if (!value.all_finite()) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op_name(tag));
    }
    bool req = false;
    if (force_grad) {
      req = *force_grad;
    } else {
      for (std::size_t p : parents) req = req || nodes_.at(p).requires_grad;
    }
    Node n;
    n.tag = tag;
    n.parents = std::move(parents);
    n.value = std::move(value);
    n.requires_grad = req;
    if (req) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Zero-initialized adjoint buffer of node `index`, allocated on first use.
  Tensor& grad_buffer(std::size_t index) {
    Node& n = nodes_[index];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

 private:
  struct Node {
    OpTag tag = OpTag::kConstant;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return graph_->value(index_); }

}  // namespace epsfair
