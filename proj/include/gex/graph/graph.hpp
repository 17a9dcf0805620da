#pragma once

// Reverse-mode differentiable computation graph.
//
// A Graph is an append-only DAG of tensor-valued nodes. Construction only
// records operations and infers shapes; values are produced by evaluate()
// for a given set of leaf bindings. differentiate() appends the adjoint
// computation to the same graph as ordinary nodes, so a gradient can be
// differentiated again (the gradient penalty of a Wasserstein critic needs
// exactly that).
//
// Node ids are assigned in creation order and every parent id is smaller
// than its child id, so id order is a topological order.

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gex/tensor.hpp"

namespace gex::graph {

template <class T>
class ParamStore;

struct NodeId {
  uint32_t index = std::numeric_limits<uint32_t>::max();

  bool valid() const { return index != std::numeric_limits<uint32_t>::max(); }
  auto operator<=>(const NodeId&) const = default;
};

enum class Op : uint8_t {
  Input,
  Parameter,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Square,
  Sqrt,
  Recip,
  Exp,
  Tanh,
  Relu,
  LeakyRelu,
  LeakyMask,
  Sum,
  Mean,
  BroadcastScalar,
  SumRows,
  BroadcastRows,
  SumChannels,
  BroadcastChannels,
  MatMul,
  Conv2d,
  ConvTranspose2d,
  Conv2dWeightGrad,
  BatchNorm,
  BatchNormGrad,
  LayerNorm,
  RowInvStd,
  LogSoftmax,
  L2Norm,
  Reshape,
  Concat,
  Slice,
};

std::string_view op_name(Op op);

// Op-specific constants.
struct Payload {
  double scalar = 0.0;  // Scale factor, AddScalar offset, slope, epsilon
  int stride = 1;
  int padding = 0;
  int kernel = 0;
  int64_t offset = 0;  // Slice
  bool trans_a = false;
  bool trans_b = false;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MissingInputError : public GraphError {
 public:
  using GraphError::GraphError;
};
class ShapeError : public GraphError {
 public:
  using GraphError::GraphError;
};
class RankError : public GraphError {
 public:
  using GraphError::GraphError;
};
class NonFiniteError : public GraphError {
 public:
  using GraphError::GraphError;
};

template <class T>
struct Node {
  NodeId id;
  Op op = Op::Input;
  Shape shape;
  std::vector<NodeId> parents;
  Payload payload;
  std::string name;                              // Input / Parameter
  const ParamStore<T>* store = nullptr;          // Parameter
  size_t param_index = 0;                        // Parameter
  std::shared_ptr<const Tensor<T>> constant;     // Constant
};

// Leaf values supplied at evaluation time. Parameters read their store unless
// overridden here.
template <class T>
class Bindings {
 public:
  Bindings& bind(NodeId id, Tensor<T> value) {
    values_[id.index] = std::move(value);
    return *this;
  }
  const Tensor<T>* find(NodeId id) const {
    auto it = values_.find(id.index);
    return it == values_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<uint32_t, Tensor<T>> values_;
};

// Node values from one evaluation. Kept separate from the graph so the same
// graph can be evaluated at several binding points.
template <class T>
class Values {
 public:
  bool has(NodeId id) const { return id.index < ready_.size() && ready_[id.index]; }
  const Tensor<T>& at(NodeId id) const;
  T scalar(NodeId id) const { return at(id).item(); }
  // Per-node side results (batch-norm stores per-channel mean then variance).
  const std::vector<T>& aux(NodeId id) const { return aux_.at(id.index); }

 private:
  template <class>
  friend class Graph;
  void resize(size_t n) {
    if (tensors_.size() < n) {
      tensors_.resize(n);
      ready_.resize(n, 0);
      aux_.resize(n);
    }
  }
  std::vector<Tensor<T>> tensors_;
  std::vector<uint8_t> ready_;
  std::vector<std::vector<T>> aux_;
};

// Maps a differentiated node to the node holding its gradient.
class GradientMap {
 public:
  void set(NodeId of, NodeId grad) { map_[of.index] = grad; }
  NodeId at(NodeId of) const;
  bool contains(NodeId of) const { return map_.count(of.index) != 0; }

 private:
  std::unordered_map<uint32_t, NodeId> map_;
};

template <class T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  size_t size() const { return nodes_.size(); }
  const Node<T>& node(NodeId id) const { return nodes_.at(id.index); }
  const Shape& shape(NodeId id) const { return node(id).shape; }

  // Leaves. Repeated requests for the same store entry return the same node,
  // so gradients of a shared parameter accumulate over all of its uses.
  NodeId input(std::string name, Shape shape);
  NodeId parameter(const ParamStore<T>& store, std::string_view name);
  NodeId constant(Tensor<T> value);
  NodeId fill(Shape shape, T value);

  // Elementwise; binary ops require identical shapes.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  // 1/x, defined as 0 at x == 0.
  NodeId recip(NodeId a);
  NodeId exp(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId leaky_relu(NodeId a, double slope);
  // Derivative of leaky_relu: 1 where x >= 0, slope elsewhere.
  NodeId leaky_mask(NodeId a, double slope);

  // Reductions and their broadcasting adjoints. "Rows" are the leading axis
  // (samples); "channels" are axis 1.
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId broadcast_scalar(NodeId a, Shape shape);
  NodeId sum_rows(NodeId a);
  NodeId broadcast_rows(NodeId a, Shape shape);
  NodeId sum_channels(NodeId a);
  NodeId broadcast_channels(NodeId a, Shape shape);

  // op(a) * op(b) for rank-2 operands.
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);

  // x [N,C,H,W], w [O,C,k,k] -> [N,O,Ho,Wo] with symmetric zero padding.
  NodeId conv2d(NodeId x, NodeId w, int stride, int padding);
  // Adjoint of conv2d in its input: x [N,O,h,w], w [O,C,k,k] -> [N,C,out_h,out_w].
  NodeId conv_transpose2d(NodeId x, NodeId w, int stride, int padding, int64_t out_h,
                          int64_t out_w);
  // Gradient of conv2d in its kernel: x [N,C,H,W], gy [N,O,Ho,Wo] -> [O,C,k,k].
  NodeId conv2d_weight_grad(NodeId x, NodeId gy, int stride, int padding, int kernel);

  // Per-channel standardization over (N,H,W) using batch statistics. Its
  // gradient cannot itself be differentiated.
  NodeId batch_norm(NodeId x, double eps);
  // Per-sample standardization over all non-leading axes.
  NodeId layer_norm(NodeId x, double eps);
  // 1/sqrt(var + eps) per sample, [N,...] -> [N].
  NodeId row_inv_std(NodeId x, double eps);

  // Row-wise log-softmax of a [B,A] matrix.
  NodeId log_softmax(NodeId a);
  // Euclidean norm per row ([N,...] -> [N]); rank-1 input gives a scalar.
  // The gradient at the origin is defined as zero.
  NodeId l2_norm(NodeId a);

  NodeId reshape(NodeId a, Shape shape);
  // Concatenation / slicing along the leading axis.
  NodeId concat(std::span<const NodeId> parts);
  NodeId slice(NodeId a, int64_t offset, int64_t length);

  // Values for `outputs` (and everything they depend on).
  Values<T> evaluate(std::span<const NodeId> outputs, const Bindings<T>& bindings) const;
  // Extends `values` in place; already computed nodes are reused.
  void evaluate(std::span<const NodeId> outputs, const Bindings<T>& bindings,
                Values<T>& values) const;

  // Gradients of a rank-0 node. Unreachable wrt nodes get zero gradients.
  GradientMap differentiate(NodeId scalar, std::span<const NodeId> wrt);

 private:
  NodeId push(Node<T> n);
  NodeId unary(Op op, NodeId a, Payload p = {});
  NodeId binary_same(Op op, NodeId a, NodeId b);
  void require_same(NodeId a, NodeId b, std::string_view what) const;
  void accumulate_adjoints(NodeId id, NodeId g, std::vector<NodeId>& adj,
                           const std::vector<uint8_t>& live);
  void compute(const Node<T>& n, const Bindings<T>& bindings, Values<T>& values) const;

  std::vector<Node<T>> nodes_;
  std::map<std::pair<const ParamStore<T>*, size_t>, NodeId> param_nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace gex::graph
