#include "gex/graph/graph.hpp"

#include <algorithm>
#include <cmath>

#include "gex/graph/param_store.hpp"
#include "gex/kernels/kernels.hpp"

namespace gex::graph {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scalar-mul";
    case Op::AddScalar: return "add-scalar";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Recip: return "recip";
    case Op::Exp: return "exp";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::LeakyRelu: return "leaky-relu";
    case Op::LeakyMask: return "leaky-mask";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::BroadcastScalar: return "broadcast-scalar";
    case Op::SumRows: return "sum-rows";
    case Op::BroadcastRows: return "broadcast-rows";
    case Op::SumChannels: return "sum-channels";
    case Op::BroadcastChannels: return "broadcast-channels";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::ConvTranspose2d: return "conv-transpose2d";
    case Op::Conv2dWeightGrad: return "conv2d-weight-grad";
    case Op::BatchNorm: return "batch-norm";
    case Op::BatchNormGrad: return "batch-norm-grad";
    case Op::LayerNorm: return "layer-norm";
    case Op::RowInvStd: return "row-inv-std";
    case Op::LogSoftmax: return "log-softmax";
    case Op::L2Norm: return "l2-norm";
    case Op::Reshape: return "reshape";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
  }
  return "?";
}

NodeId GradientMap::at(NodeId of) const {
  auto it = map_.find(of.index);
  if (it == map_.end()) {
    throw GraphError("GradientMap: no gradient for node " + std::to_string(of.index));
  }
  return it->second;
}

template <class T>
const Tensor<T>& Values<T>::at(NodeId id) const {
  if (!has(id)) throw GraphError("Values: node " + std::to_string(id.index) + " not evaluated");
  return tensors_[id.index];
}

namespace {

std::string describe(NodeId id, Op op, const Shape& s) {
  return "node " + std::to_string(id.index) + " (" + std::string(op_name(op)) + " " +
         to_string(s) + ")";
}

int64_t row_size(const Shape& s) { return s.empty() || s[0] == 0 ? 0 : numel(s) / s[0]; }

int64_t inner_size(const Shape& s) {
  int64_t n = 1;
  for (size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

int64_t conv_out(int64_t in, int k, int stride, int pad) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

struct ConvGeom {
  int64_t n, c, h, w, o, k, s, p, ho, wo;
};

// Samples per im2col block: keeps the column buffer cache-sized while giving
// the GEMM enough columns.
int64_t conv_chunk(const ConvGeom& g) {
  const int64_t per = std::max<int64_t>(1, g.ho * g.wo);
  return std::clamp<int64_t>(512 / per, 1, std::max<int64_t>(1, g.n));
}

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t cols = g.n * g.ho * g.wo;
  for (int64_t ci = 0; ci < g.c; ++ci) {
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          const T* plane = x + (n * g.c + ci) * g.h * g.w;
          for (int64_t oh = 0; oh < g.ho; ++oh) {
            const int64_t ih = oh * g.s - g.p + ki;
            T* out = row + (n * g.ho + oh) * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(out, out + g.wo, T(0));
              continue;
            }
            const T* src = plane + ih * g.w;
            for (int64_t ow = 0; ow < g.wo; ++ow) {
              const int64_t iw = ow * g.s - g.p + kj;
              out[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const int64_t cols = g.n * g.ho * g.wo;
  std::fill(x, x + g.n * g.c * g.h * g.w, T(0));
  for (int64_t ci = 0; ci < g.c; ++ci) {
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          T* plane = x + (n * g.c + ci) * g.h * g.w;
          for (int64_t oh = 0; oh < g.ho; ++oh) {
            const int64_t ih = oh * g.s - g.p + ki;
            if (ih < 0 || ih >= g.h) continue;
            const T* in = row + (n * g.ho + oh) * g.wo;
            T* dst = plane + ih * g.w;
            for (int64_t ow = 0; ow < g.wo; ++ow) {
              const int64_t iw = ow * g.s - g.p + kj;
              if (iw >= 0 && iw < g.w) dst[iw] += in[ow];
            }
          }
        }
      }
    }
  }
}

// [N, C, S] <-> [C, N*S]
template <class T>
void to_channel_major(const T* x, int64_t n, int64_t c, int64_t s, T* out) {
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      std::copy_n(x + (i * c + j) * s, s, out + (j * n + i) * s);
    }
  }
}

template <class T>
void from_channel_major(const T* x, int64_t n, int64_t c, int64_t s, T* out) {
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      std::copy_n(x + (j * n + i) * s, s, out + (i * c + j) * s);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

template <class T>
NodeId Graph<T>::push(Node<T> n) {
  n.id = NodeId{static_cast<uint32_t>(nodes_.size())};
  for (NodeId p : n.parents) {
    if (!p.valid() || p.index >= nodes_.size()) {
      throw GraphError("Graph: parent id out of range for " + std::string(op_name(n.op)));
    }
  }
  nodes_.push_back(std::move(n));
  return nodes_.back().id;
}

template <class T>
void Graph<T>::require_same(NodeId a, NodeId b, std::string_view what) const {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.shape != nb.shape) {
    throw ShapeError(std::string(what) + ": shape mismatch between " +
                     describe(a, na.op, na.shape) + " and " + describe(b, nb.op, nb.shape));
  }
}

template <class T>
NodeId Graph<T>::unary(Op op, NodeId a, Payload p) {
  Node<T> n;
  n.op = op;
  n.shape = node(a).shape;
  n.parents = {a};
  n.payload = p;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::binary_same(Op op, NodeId a, NodeId b) {
  require_same(a, b, op_name(op));
  Node<T> n;
  n.op = op;
  n.shape = node(a).shape;
  n.parents = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::input(std::string name, Shape shape) {
  Node<T> n;
  n.op = Op::Input;
  n.name = std::move(name);
  n.shape = std::move(shape);
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::parameter(const ParamStore<T>& store, std::string_view name) {
  const size_t index = store.index(name);
  if (auto it = param_nodes_.find({&store, index}); it != param_nodes_.end()) return it->second;
  Node<T> n;
  n.op = Op::Parameter;
  n.param_index = index;
  n.store = &store;
  n.name = std::string(name);
  n.shape = store.entry(index).value.shape;
  const NodeId id = push(std::move(n));
  param_nodes_[{&store, index}] = id;
  return id;
}

template <class T>
NodeId Graph<T>::constant(Tensor<T> value) {
  Node<T> n;
  n.op = Op::Constant;
  n.shape = value.shape;
  n.constant = std::make_shared<const Tensor<T>>(std::move(value));
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::fill(Shape shape, T value) {
  return constant(Tensor<T>(std::move(shape), value));
}

template <class T>
NodeId Graph<T>::add(NodeId a, NodeId b) { return binary_same(Op::Add, a, b); }
template <class T>
NodeId Graph<T>::sub(NodeId a, NodeId b) { return binary_same(Op::Sub, a, b); }
template <class T>
NodeId Graph<T>::mul(NodeId a, NodeId b) { return binary_same(Op::Mul, a, b); }

template <class T>
NodeId Graph<T>::scale(NodeId a, double factor) {
  Payload p;
  p.scalar = factor;
  return unary(Op::Scale, a, p);
}

template <class T>
NodeId Graph<T>::add_scalar(NodeId a, double offset) {
  Payload p;
  p.scalar = offset;
  return unary(Op::AddScalar, a, p);
}

template <class T>
NodeId Graph<T>::square(NodeId a) { return unary(Op::Square, a); }
template <class T>
NodeId Graph<T>::sqrt(NodeId a) { return unary(Op::Sqrt, a); }
template <class T>
NodeId Graph<T>::recip(NodeId a) { return unary(Op::Recip, a); }
template <class T>
NodeId Graph<T>::exp(NodeId a) { return unary(Op::Exp, a); }
template <class T>
NodeId Graph<T>::tanh(NodeId a) { return unary(Op::Tanh, a); }
template <class T>
NodeId Graph<T>::relu(NodeId a) { return unary(Op::Relu, a); }

template <class T>
NodeId Graph<T>::leaky_relu(NodeId a, double slope) {
  Payload p;
  p.scalar = slope;
  return unary(Op::LeakyRelu, a, p);
}

template <class T>
NodeId Graph<T>::leaky_mask(NodeId a, double slope) {
  Payload p;
  p.scalar = slope;
  return unary(Op::LeakyMask, a, p);
}

template <class T>
NodeId Graph<T>::sum(NodeId a) {
  Node<T> n;
  n.op = Op::Sum;
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::mean(NodeId a) {
  if (numel(shape(a)) == 0) throw ShapeError("mean: empty " + to_string(shape(a)));
  Node<T> n;
  n.op = Op::Mean;
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::broadcast_scalar(NodeId a, Shape s) {
  if (!shape(a).empty()) {
    throw ShapeError("broadcast_scalar: expected rank-0 " + describe(a, node(a).op, shape(a)));
  }
  Node<T> n;
  n.op = Op::BroadcastScalar;
  n.shape = std::move(s);
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::sum_rows(NodeId a) {
  if (shape(a).size() < 2) throw RankError("sum_rows: rank < 2 at " + describe(a, node(a).op, shape(a)));
  Node<T> n;
  n.op = Op::SumRows;
  n.shape = {shape(a)[0]};
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::broadcast_rows(NodeId a, Shape s) {
  if (shape(a).size() != 1 || s.size() < 2 || s[0] != shape(a)[0]) {
    throw ShapeError("broadcast_rows: cannot broadcast " + describe(a, node(a).op, shape(a)) +
                     " to " + to_string(s));
  }
  Node<T> n;
  n.op = Op::BroadcastRows;
  n.shape = std::move(s);
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::sum_channels(NodeId a) {
  if (shape(a).size() < 2) {
    throw RankError("sum_channels: rank < 2 at " + describe(a, node(a).op, shape(a)));
  }
  Node<T> n;
  n.op = Op::SumChannels;
  n.shape = {shape(a)[1]};
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::broadcast_channels(NodeId a, Shape s) {
  if (shape(a).size() != 1 || s.size() < 2 || s[1] != shape(a)[0]) {
    throw ShapeError("broadcast_channels: cannot broadcast " +
                     describe(a, node(a).op, shape(a)) + " to " + to_string(s));
  }
  Node<T> n;
  n.op = Op::BroadcastChannels;
  n.shape = std::move(s);
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.size() != 2 || sb.size() != 2) {
    throw RankError("matmul: operands must be rank 2: " + describe(a, node(a).op, sa) + ", " +
                    describe(b, node(b).op, sb));
  }
  const int64_t m = trans_a ? sa[1] : sa[0];
  const int64_t ka = trans_a ? sa[0] : sa[1];
  const int64_t kb = trans_b ? sb[1] : sb[0];
  const int64_t nn = trans_b ? sb[0] : sb[1];
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ between " + describe(a, node(a).op, sa) +
                     " and " + describe(b, node(b).op, sb));
  }
  Node<T> n;
  n.op = Op::MatMul;
  n.shape = {m, nn};
  n.parents = {a, b};
  n.payload.trans_a = trans_a;
  n.payload.trans_b = trans_b;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::conv2d(NodeId x, NodeId w, int stride, int padding) {
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  if (sx.size() != 4 || sw.size() != 4) {
    throw RankError("conv2d: input and kernel must be rank 4: " + describe(x, node(x).op, sx) +
                    ", " + describe(w, node(w).op, sw));
  }
  if (sx[1] != sw[1] || sw[2] != sw[3] || stride < 1 || padding < 0) {
    throw ShapeError("conv2d: incompatible " + describe(x, node(x).op, sx) + " and kernel " +
                     describe(w, node(w).op, sw));
  }
  const int k = static_cast<int>(sw[2]);
  const int64_t ho = conv_out(sx[2], k, stride, padding);
  const int64_t wo = conv_out(sx[3], k, stride, padding);
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: kernel " + describe(w, node(w).op, sw) + " larger than padded " +
                     describe(x, node(x).op, sx));
  }
  Node<T> n;
  n.op = Op::Conv2d;
  n.shape = {sx[0], sw[0], ho, wo};
  n.parents = {x, w};
  n.payload.stride = stride;
  n.payload.padding = padding;
  n.payload.kernel = k;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::conv_transpose2d(NodeId x, NodeId w, int stride, int padding, int64_t out_h,
                                  int64_t out_w) {
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  if (sx.size() != 4 || sw.size() != 4) {
    throw RankError("conv_transpose2d: input and kernel must be rank 4: " +
                    describe(x, node(x).op, sx) + ", " + describe(w, node(w).op, sw));
  }
  const int k = static_cast<int>(sw[2]);
  if (sx[1] != sw[0] || sw[2] != sw[3] || stride < 1 || padding < 0 ||
      conv_out(out_h, k, stride, padding) != sx[2] ||
      conv_out(out_w, k, stride, padding) != sx[3]) {
    throw ShapeError("conv_transpose2d: " + describe(x, node(x).op, sx) + " with kernel " +
                     describe(w, node(w).op, sw) + " cannot produce " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Node<T> n;
  n.op = Op::ConvTranspose2d;
  n.shape = {sx[0], sw[1], out_h, out_w};
  n.parents = {x, w};
  n.payload.stride = stride;
  n.payload.padding = padding;
  n.payload.kernel = k;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::conv2d_weight_grad(NodeId x, NodeId gy, int stride, int padding, int kernel) {
  const Shape& sx = shape(x);
  const Shape& sg = shape(gy);
  if (sx.size() != 4 || sg.size() != 4) {
    throw RankError("conv2d_weight_grad: operands must be rank 4: " +
                    describe(x, node(x).op, sx) + ", " + describe(gy, node(gy).op, sg));
  }
  if (sx[0] != sg[0] || conv_out(sx[2], kernel, stride, padding) != sg[2] ||
      conv_out(sx[3], kernel, stride, padding) != sg[3]) {
    throw ShapeError("conv2d_weight_grad: " + describe(x, node(x).op, sx) +
                     " inconsistent with " + describe(gy, node(gy).op, sg));
  }
  Node<T> n;
  n.op = Op::Conv2dWeightGrad;
  n.shape = {sg[1], sx[1], kernel, kernel};
  n.parents = {x, gy};
  n.payload.stride = stride;
  n.payload.padding = padding;
  n.payload.kernel = kernel;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::batch_norm(NodeId x, double eps) {
  if (shape(x).size() < 2) throw RankError("batch_norm: rank < 2 at " + describe(x, node(x).op, shape(x)));
  Payload p;
  p.scalar = eps;
  return unary(Op::BatchNorm, x, p);
}

template <class T>
NodeId Graph<T>::layer_norm(NodeId x, double eps) {
  if (shape(x).size() < 2) throw RankError("layer_norm: rank < 2 at " + describe(x, node(x).op, shape(x)));
  Payload p;
  p.scalar = eps;
  return unary(Op::LayerNorm, x, p);
}

template <class T>
NodeId Graph<T>::row_inv_std(NodeId x, double eps) {
  if (shape(x).size() < 2) throw RankError("row_inv_std: rank < 2 at " + describe(x, node(x).op, shape(x)));
  Node<T> n;
  n.op = Op::RowInvStd;
  n.shape = {shape(x)[0]};
  n.parents = {x};
  n.payload.scalar = eps;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::log_softmax(NodeId a) {
  if (shape(a).size() != 2) throw RankError("log_softmax: expected rank 2 at " + describe(a, node(a).op, shape(a)));
  return unary(Op::LogSoftmax, a);
}

template <class T>
NodeId Graph<T>::l2_norm(NodeId a) {
  const Shape& s = shape(a);
  if (s.empty()) throw RankError("l2_norm: rank-0 input at " + describe(a, node(a).op, s));
  Node<T> n;
  n.op = Op::L2Norm;
  n.shape = s.size() == 1 ? Shape{} : Shape{s[0]};
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::reshape(NodeId a, Shape s) {
  if (numel(s) != numel(shape(a))) {
    throw ShapeError("reshape: " + describe(a, node(a).op, shape(a)) + " to " + to_string(s));
  }
  Node<T> n;
  n.op = Op::Reshape;
  n.shape = std::move(s);
  n.parents = {a};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape s = shape(parts[0]);
  if (s.empty()) throw RankError("concat: rank-0 input");
  int64_t rows = 0;
  for (NodeId p : parts) {
    const Shape& sp = shape(p);
    if (sp.size() != s.size() || !std::equal(sp.begin() + 1, sp.end(), s.begin() + 1)) {
      throw ShapeError("concat: " + describe(p, node(p).op, sp) + " incompatible with " +
                       describe(parts[0], node(parts[0]).op, s));
    }
    rows += sp[0];
  }
  s[0] = rows;
  Node<T> n;
  n.op = Op::Concat;
  n.shape = std::move(s);
  n.parents.assign(parts.begin(), parts.end());
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::slice(NodeId a, int64_t offset, int64_t length) {
  Shape s = shape(a);
  if (s.empty() || offset < 0 || length < 1 || offset + length > s[0]) {
    throw ShapeError("slice: [" + std::to_string(offset) + ", +" + std::to_string(length) +
                     ") out of range for " + describe(a, node(a).op, s));
  }
  s[0] = length;
  Node<T> n;
  n.op = Op::Slice;
  n.shape = std::move(s);
  n.parents = {a};
  n.payload.offset = offset;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// evaluation

template <class T>
Values<T> Graph<T>::evaluate(std::span<const NodeId> outputs, const Bindings<T>& bindings) const {
  Values<T> values;
  evaluate(outputs, bindings, values);
  return values;
}

template <class T>
void Graph<T>::evaluate(std::span<const NodeId> outputs, const Bindings<T>& bindings,
                        Values<T>& values) const {
  values.resize(nodes_.size());
  std::vector<uint8_t> needed(nodes_.size(), 0);
  std::vector<uint32_t> stack;
  for (NodeId o : outputs) {
    if (!o.valid() || o.index >= nodes_.size()) throw GraphError("evaluate: unknown output node");
    stack.push_back(o.index);
  }
  uint32_t lo = static_cast<uint32_t>(nodes_.size());
  while (!stack.empty()) {
    const uint32_t i = stack.back();
    stack.pop_back();
    if (needed[i] || values.ready_[i]) continue;
    needed[i] = 1;
    lo = std::min(lo, i);
    for (NodeId p : nodes_[i].parents) stack.push_back(p.index);
  }
  for (uint32_t i = lo; i < nodes_.size(); ++i) {
    if (!needed[i]) continue;
    compute(nodes_[i], bindings, values);
    values.ready_[i] = 1;
  }
}

template <class T>
void Graph<T>::compute(const Node<T>& n, const Bindings<T>& bindings, Values<T>& values) const {
  auto in = [&](size_t k) -> const Tensor<T>& { return values.tensors_[n.parents[k].index]; };
  Tensor<T>& out = values.tensors_[n.id.index];
  const T c = static_cast<T>(n.payload.scalar);

  auto elementwise = [&](auto f) {
    const Tensor<T>& a = in(0);
    out = Tensor<T>(n.shape);
    for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  };

  switch (n.op) {
    case Op::Input: {
      const Tensor<T>* v = bindings.find(n.id);
      if (v == nullptr) {
        throw MissingInputError("evaluate: input '" + n.name + "' (node " +
                                std::to_string(n.id.index) + ") is not bound");
      }
      if (v->shape != n.shape || v->size() != numel(n.shape)) {
        throw ShapeError("evaluate: binding for input '" + n.name + "' has shape " +
                         to_string(v->shape) + ", " + describe(n.id, n.op, n.shape) +
                         " expects " + to_string(n.shape));
      }
      out = *v;
      return;
    }
    case Op::Parameter: {
      const Tensor<T>* v = bindings.find(n.id);
      if (v == nullptr) v = &n.store->entry(n.param_index).value;
      if (v->shape != n.shape) {
        throw ShapeError("evaluate: parameter '" + n.name + "' has shape " +
                         to_string(v->shape) + ", graph expects " + to_string(n.shape));
      }
      out = *v;
      return;
    }
    case Op::Constant:
      out = *n.constant;
      return;
    case Op::Add:
      out = Tensor<T>(n.shape);
      kernels::add(in(0).ptr(), in(1).ptr(), out.ptr(), out.size());
      return;
    case Op::Sub:
      out = in(0);
      kernels::axpy(T(-1), in(1).ptr(), out.ptr(), out.size());
      return;
    case Op::Mul:
      out = Tensor<T>(n.shape);
      kernels::mul(in(0).ptr(), in(1).ptr(), out.ptr(), out.size());
      return;
    case Op::Scale:
      elementwise([c](T x) { return c * x; });
      return;
    case Op::AddScalar:
      elementwise([c](T x) { return x + c; });
      return;
    case Op::Square:
      elementwise([](T x) { return x * x; });
      return;
    case Op::Sqrt:
      elementwise([](T x) { return std::sqrt(x); });
      return;
    case Op::Recip:
      elementwise([](T x) { return x == T(0) ? T(0) : T(1) / x; });
      return;
    case Op::Exp:
      elementwise([](T x) { return std::exp(x); });
      return;
    case Op::Tanh:
      elementwise([](T x) { return std::tanh(x); });
      return;
    case Op::Relu:
      out = Tensor<T>(n.shape);
      kernels::leaky_relu(in(0).ptr(), T(0), out.ptr(), out.size());
      return;
    case Op::LeakyRelu:
      out = Tensor<T>(n.shape);
      kernels::leaky_relu(in(0).ptr(), c, out.ptr(), out.size());
      return;
    case Op::LeakyMask:
      elementwise([c](T x) { return x >= T(0) ? T(1) : c; });
      return;
    case Op::Sum:
    case Op::Mean: {
      const Tensor<T>& a = in(0);
      double s = 0.0;
      for (T x : a.data) s += x;
      if (n.op == Op::Mean) s /= static_cast<double>(a.size());
      out = Tensor<T>::scalar(static_cast<T>(s));
      return;
    }
    case Op::BroadcastScalar:
      out = Tensor<T>(n.shape, in(0).item());
      return;
    case Op::SumRows: {
      const Tensor<T>& a = in(0);
      const int64_t rows = a.shape[0];
      const int64_t m = row_size(a.shape);
      out = Tensor<T>(n.shape);
      for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < m; ++j) s += a[r * m + j];
        out[r] = static_cast<T>(s);
      }
      return;
    }
    case Op::BroadcastRows: {
      const Tensor<T>& a = in(0);
      const int64_t m = row_size(n.shape);
      out = Tensor<T>(n.shape);
      for (int64_t r = 0; r < n.shape[0]; ++r) std::fill_n(out.ptr() + r * m, m, a[r]);
      return;
    }
    case Op::SumChannels: {
      const Tensor<T>& a = in(0);
      const int64_t batch = a.shape[0];
      const int64_t ch = a.shape[1];
      const int64_t inner = inner_size(a.shape);
      std::vector<double> acc(ch, 0.0);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t k = 0; k < ch; ++k) {
          const T* p = a.ptr() + (b * ch + k) * inner;
          double s = 0.0;
          for (int64_t j = 0; j < inner; ++j) s += p[j];
          acc[k] += s;
        }
      }
      out = Tensor<T>(n.shape);
      for (int64_t k = 0; k < ch; ++k) out[k] = static_cast<T>(acc[k]);
      return;
    }
    case Op::BroadcastChannels: {
      const Tensor<T>& a = in(0);
      const int64_t batch = n.shape[0];
      const int64_t ch = n.shape[1];
      const int64_t inner = inner_size(n.shape);
      out = Tensor<T>(n.shape);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t k = 0; k < ch; ++k) std::fill_n(out.ptr() + (b * ch + k) * inner, inner, a[k]);
      }
      return;
    }
    case Op::MatMul: {
      const Tensor<T>& a = in(0);
      const Tensor<T>& b = in(1);
      const bool ta = n.payload.trans_a;
      const bool tb = n.payload.trans_b;
      const int64_t k = ta ? a.shape[0] : a.shape[1];
      out = Tensor<T>(n.shape);
      kernels::gemm(ta, tb, n.shape[0], n.shape[1], k, a.ptr(), a.shape[1], b.ptr(), b.shape[1],
                    T(0), out.ptr(), n.shape[1]);
      return;
    }
    case Op::Conv2d: {
      const Tensor<T>& x = in(0);
      const Tensor<T>& w = in(1);
      const ConvGeom g{x.shape[0], x.shape[1], x.shape[2], x.shape[3], w.shape[0],
                       n.payload.kernel, n.payload.stride, n.payload.padding, n.shape[2],
                       n.shape[3]};
      const int64_t ck = g.c * g.k * g.k;
      const int64_t chunk = conv_chunk(g);
      std::vector<T> col(static_cast<size_t>(ck * chunk * g.ho * g.wo));
      std::vector<T> tmp(static_cast<size_t>(g.o * chunk * g.ho * g.wo));
      out = Tensor<T>(n.shape);
      for (int64_t n0 = 0; n0 < g.n; n0 += chunk) {
        ConvGeom sub = g;
        sub.n = std::min(chunk, g.n - n0);
        const int64_t cols = sub.n * g.ho * g.wo;
        im2col(x.ptr() + n0 * g.c * g.h * g.w, sub, col.data());
        kernels::gemm(false, false, g.o, cols, ck, w.ptr(), ck, col.data(), cols, T(0),
                      tmp.data(), cols);
        from_channel_major(tmp.data(), sub.n, g.o, g.ho * g.wo,
                           out.ptr() + n0 * g.o * g.ho * g.wo);
      }
      return;
    }
    case Op::ConvTranspose2d: {
      const Tensor<T>& x = in(0);  // [N, O, h, w]
      const Tensor<T>& w = in(1);  // [O, C, k, k]
      const ConvGeom g{x.shape[0], w.shape[1], n.shape[2], n.shape[3], w.shape[0],
                       n.payload.kernel, n.payload.stride, n.payload.padding, x.shape[2],
                       x.shape[3]};
      const int64_t ck = g.c * g.k * g.k;
      const int64_t chunk = conv_chunk(g);
      std::vector<T> xt(static_cast<size_t>(g.o * chunk * g.ho * g.wo));
      std::vector<T> col(static_cast<size_t>(ck * chunk * g.ho * g.wo));
      out = Tensor<T>(n.shape);
      for (int64_t n0 = 0; n0 < g.n; n0 += chunk) {
        ConvGeom sub = g;
        sub.n = std::min(chunk, g.n - n0);
        const int64_t cols = sub.n * g.ho * g.wo;
        to_channel_major(x.ptr() + n0 * g.o * g.ho * g.wo, sub.n, g.o, g.ho * g.wo, xt.data());
        kernels::gemm(true, false, ck, cols, g.o, w.ptr(), ck, xt.data(), cols, T(0),
                      col.data(), cols);
        col2im(col.data(), sub, out.ptr() + n0 * g.c * g.h * g.w);
      }
      return;
    }
    case Op::Conv2dWeightGrad: {
      const Tensor<T>& x = in(0);   // [N, C, H, W]
      const Tensor<T>& gy = in(1);  // [N, O, Ho, Wo]
      const ConvGeom g{x.shape[0], x.shape[1], x.shape[2], x.shape[3], gy.shape[1],
                       n.payload.kernel, n.payload.stride, n.payload.padding, gy.shape[2],
                       gy.shape[3]};
      const int64_t ck = g.c * g.k * g.k;
      const int64_t chunk = conv_chunk(g);
      std::vector<T> col(static_cast<size_t>(ck * chunk * g.ho * g.wo));
      std::vector<T> gt(static_cast<size_t>(g.o * chunk * g.ho * g.wo));
      out = Tensor<T>(n.shape);
      for (int64_t n0 = 0; n0 < g.n; n0 += chunk) {
        ConvGeom sub = g;
        sub.n = std::min(chunk, g.n - n0);
        const int64_t cols = sub.n * g.ho * g.wo;
        im2col(x.ptr() + n0 * g.c * g.h * g.w, sub, col.data());
        to_channel_major(gy.ptr() + n0 * g.o * g.ho * g.wo, sub.n, g.o, g.ho * g.wo, gt.data());
        kernels::gemm(false, true, g.o, ck, cols, gt.data(), cols, col.data(), cols,
                      n0 == 0 ? T(0) : T(1), out.ptr(), ck);
      }
      return;
    }
    case Op::BatchNorm: {
      const Tensor<T>& x = in(0);
      const int64_t batch = x.shape[0];
      const int64_t ch = x.shape[1];
      const int64_t inner = inner_size(x.shape);
      const double count = static_cast<double>(batch * inner);
      std::vector<T> stats(static_cast<size_t>(2 * ch));
      out = Tensor<T>(n.shape);
      for (int64_t k = 0; k < ch; ++k) {
        double s = 0.0;
        for (int64_t b = 0; b < batch; ++b) {
          const T* p = x.ptr() + (b * ch + k) * inner;
          for (int64_t j = 0; j < inner; ++j) s += p[j];
        }
        const double mu = s / count;
        double v = 0.0;
        for (int64_t b = 0; b < batch; ++b) {
          const T* p = x.ptr() + (b * ch + k) * inner;
          for (int64_t j = 0; j < inner; ++j) v += (p[j] - mu) * (p[j] - mu);
        }
        v /= count;
        const double r = 1.0 / std::sqrt(v + n.payload.scalar);
        for (int64_t b = 0; b < batch; ++b) {
          const T* p = x.ptr() + (b * ch + k) * inner;
          T* q = out.ptr() + (b * ch + k) * inner;
          for (int64_t j = 0; j < inner; ++j) q[j] = static_cast<T>((p[j] - mu) * r);
        }
        stats[k] = static_cast<T>(mu);
        stats[ch + k] = static_cast<T>(v);
      }
      values.aux_[n.id.index] = std::move(stats);
      return;
    }
    case Op::BatchNormGrad: {
      // parents: x, y = batch_norm(x), upstream g
      const Tensor<T>& y = in(1);
      const Tensor<T>& g = in(2);
      const std::vector<T>& stats = values.aux_[n.parents[1].index];
      const int64_t batch = y.shape[0];
      const int64_t ch = y.shape[1];
      const int64_t inner = inner_size(y.shape);
      const double count = static_cast<double>(batch * inner);
      out = Tensor<T>(n.shape);
      for (int64_t k = 0; k < ch; ++k) {
        const double r = 1.0 / std::sqrt(static_cast<double>(stats[ch + k]) + n.payload.scalar);
        double sg = 0.0;
        double sgy = 0.0;
        for (int64_t b = 0; b < batch; ++b) {
          const int64_t off = (b * ch + k) * inner;
          for (int64_t j = 0; j < inner; ++j) {
            sg += g[off + j];
            sgy += static_cast<double>(g[off + j]) * y[off + j];
          }
        }
        sg /= count;
        sgy /= count;
        for (int64_t b = 0; b < batch; ++b) {
          const int64_t off = (b * ch + k) * inner;
          for (int64_t j = 0; j < inner; ++j) {
            out[off + j] = static_cast<T>(r * (g[off + j] - sg - y[off + j] * sgy));
          }
        }
      }
      return;
    }
    case Op::LayerNorm:
    case Op::RowInvStd: {
      const Tensor<T>& x = in(0);
      const int64_t rows = x.shape[0];
      const int64_t m = row_size(x.shape);
      out = Tensor<T>(n.shape);
      for (int64_t r = 0; r < rows; ++r) {
        const T* p = x.ptr() + r * m;
        double s = 0.0;
        for (int64_t j = 0; j < m; ++j) s += p[j];
        const double mu = s / static_cast<double>(m);
        double v = 0.0;
        for (int64_t j = 0; j < m; ++j) v += (p[j] - mu) * (p[j] - mu);
        v /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(v + n.payload.scalar);
        if (n.op == Op::RowInvStd) {
          out[r] = static_cast<T>(inv);
        } else {
          T* q = out.ptr() + r * m;
          for (int64_t j = 0; j < m; ++j) q[j] = static_cast<T>((p[j] - mu) * inv);
        }
      }
      return;
    }
    case Op::LogSoftmax: {
      const Tensor<T>& a = in(0);
      const int64_t rows = a.shape[0];
      const int64_t cols = a.shape[1];
      out = Tensor<T>(n.shape);
      for (int64_t r = 0; r < rows; ++r) {
        const T* p = a.ptr() + r * cols;
        const T mx = *std::max_element(p, p + cols);
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) s += std::exp(static_cast<double>(p[j] - mx));
        const double lse = static_cast<double>(mx) + std::log(s);
        for (int64_t j = 0; j < cols; ++j) out[r * cols + j] = static_cast<T>(p[j] - lse);
      }
      return;
    }
    case Op::L2Norm: {
      const Tensor<T>& a = in(0);
      out = Tensor<T>(n.shape);
      const int64_t rows = a.rank() == 1 ? 1 : a.shape[0];
      const int64_t m = a.size() / std::max<int64_t>(rows, 1);
      for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < m; ++j) s += static_cast<double>(a[r * m + j]) * a[r * m + j];
        out[r] = static_cast<T>(std::sqrt(s));
      }
      return;
    }
    case Op::Reshape:
      out = Tensor<T>(n.shape, in(0).data);
      return;
    case Op::Concat: {
      out = Tensor<T>(n.shape);
      int64_t off = 0;
      for (size_t k = 0; k < n.parents.size(); ++k) {
        const Tensor<T>& p = in(k);
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
        off += p.size();
      }
      return;
    }
    case Op::Slice: {
      const Tensor<T>& a = in(0);
      const int64_t m = row_size(a.shape);
      const auto first = a.data.begin() + n.payload.offset * m;
      out = Tensor<T>(n.shape, std::vector<T>(first, first + n.shape[0] * m));
      return;
    }
  }
  throw GraphError("evaluate: unhandled op");
}

// ---------------------------------------------------------------------------
// differentiation

template <class T>
GradientMap Graph<T>::differentiate(NodeId scalar, std::span<const NodeId> wrt) {
  if (!scalar.valid() || scalar.index >= nodes_.size()) {
    throw GraphError("differentiate: unknown node");
  }
  if (!shape(scalar).empty()) {
    throw RankError("differentiate: " + describe(scalar, node(scalar).op, shape(scalar)) +
                    " is not rank 0");
  }
  const size_t count = scalar.index + 1;
  std::vector<uint8_t> live(count, 0);
  for (NodeId w : wrt) {
    if (w.index < count) live[w.index] = 1;
  }
  for (size_t i = 0; i < count; ++i) {
    if (live[i]) continue;
    for (NodeId p : nodes_[i].parents) {
      if (live[p.index]) {
        live[i] = 1;
        break;
      }
    }
  }

  std::vector<NodeId> adj(count);
  if (live[scalar.index]) adj[scalar.index] = fill({}, T(1));
  for (size_t i = count; i-- > 0;) {
    if (!live[i] || !adj[i].valid()) continue;
    accumulate_adjoints(NodeId{static_cast<uint32_t>(i)}, adj[i], adj, live);
  }

  GradientMap grads;
  for (NodeId w : wrt) {
    if (w.index < count && adj[w.index].valid()) {
      grads.set(w, adj[w.index]);
    } else {
      grads.set(w, fill(shape(w), T(0)));
    }
  }
  return grads;
}

template <class T>
void Graph<T>::accumulate_adjoints(NodeId id, NodeId g, std::vector<NodeId>& adj,
                                   const std::vector<uint8_t>& live) {
  // Copy: pushing nodes below may reallocate nodes_.
  const Node<T> n = nodes_[id.index];
  auto want = [&](size_t k) { return live[n.parents[k].index] != 0; };
  auto give = [&](size_t k, NodeId contribution) {
    NodeId& slot = adj[n.parents[k].index];
    slot = slot.valid() ? add(slot, contribution) : contribution;
  };
  const double c = n.payload.scalar;

  switch (n.op) {
    case Op::Input:
    case Op::Parameter:
    case Op::Constant:
    case Op::LeakyMask:
      return;
    case Op::Add:
      if (want(0)) give(0, g);
      if (want(1)) give(1, g);
      return;
    case Op::Sub:
      if (want(0)) give(0, g);
      if (want(1)) give(1, scale(g, -1.0));
      return;
    case Op::Mul:
      if (want(0)) give(0, mul(g, n.parents[1]));
      if (want(1)) give(1, mul(g, n.parents[0]));
      return;
    case Op::Scale:
      give(0, scale(g, c));
      return;
    case Op::AddScalar:
      give(0, g);
      return;
    case Op::Square:
      give(0, mul(g, scale(n.parents[0], 2.0)));
      return;
    case Op::Sqrt:
      give(0, mul(g, scale(recip(id), 0.5)));
      return;
    case Op::Recip:
      give(0, mul(g, scale(square(id), -1.0)));
      return;
    case Op::Exp:
      give(0, mul(g, id));
      return;
    case Op::Tanh:
      give(0, mul(g, add_scalar(scale(square(id), -1.0), 1.0)));
      return;
    case Op::Relu:
      give(0, mul(g, leaky_mask(n.parents[0], 0.0)));
      return;
    case Op::LeakyRelu:
      give(0, mul(g, leaky_mask(n.parents[0], c)));
      return;
    case Op::Sum:
      give(0, broadcast_scalar(g, shape(n.parents[0])));
      return;
    case Op::Mean: {
      const Shape s = shape(n.parents[0]);
      give(0, broadcast_scalar(scale(g, 1.0 / static_cast<double>(numel(s))), s));
      return;
    }
    case Op::BroadcastScalar:
      give(0, sum(g));
      return;
    case Op::SumRows:
      give(0, broadcast_rows(g, shape(n.parents[0])));
      return;
    case Op::BroadcastRows:
      give(0, sum_rows(g));
      return;
    case Op::SumChannels:
      give(0, broadcast_channels(g, shape(n.parents[0])));
      return;
    case Op::BroadcastChannels:
      give(0, sum_channels(g));
      return;
    case Op::MatMul: {
      const NodeId a = n.parents[0];
      const NodeId b = n.parents[1];
      const bool ta = n.payload.trans_a;
      const bool tb = n.payload.trans_b;
      if (want(0)) {
        if (!ta) {
          give(0, matmul(g, b, false, !tb));
        } else {
          give(0, matmul(b, g, tb, true));
        }
      }
      if (want(1)) {
        if (!tb) {
          give(1, matmul(a, g, !ta, false));
        } else {
          give(1, matmul(g, a, true, ta));
        }
      }
      return;
    }
    case Op::Conv2d: {
      const NodeId x = n.parents[0];
      const NodeId w = n.parents[1];
      const Shape sx = shape(x);
      if (want(0)) {
        give(0, conv_transpose2d(g, w, n.payload.stride, n.payload.padding, sx[2], sx[3]));
      }
      if (want(1)) {
        give(1, conv2d_weight_grad(x, g, n.payload.stride, n.payload.padding, n.payload.kernel));
      }
      return;
    }
    case Op::ConvTranspose2d: {
      const NodeId x = n.parents[0];
      const NodeId w = n.parents[1];
      if (want(0)) give(0, conv2d(g, w, n.payload.stride, n.payload.padding));
      if (want(1)) {
        give(1, conv2d_weight_grad(g, x, n.payload.stride, n.payload.padding, n.payload.kernel));
      }
      return;
    }
    case Op::Conv2dWeightGrad: {
      const NodeId x = n.parents[0];
      const NodeId gy = n.parents[1];
      const Shape sx = shape(x);
      if (want(0)) {
        give(0, conv_transpose2d(gy, g, n.payload.stride, n.payload.padding, sx[2], sx[3]));
      }
      if (want(1)) give(1, conv2d(x, g, n.payload.stride, n.payload.padding));
      return;
    }
    case Op::BatchNorm: {
      Node<T> bg;
      bg.op = Op::BatchNormGrad;
      bg.shape = n.shape;
      bg.parents = {n.parents[0], id, g};
      bg.payload.scalar = c;
      give(0, push(std::move(bg)));
      return;
    }
    case Op::BatchNormGrad:
      throw GraphError(
          "differentiate: batch-norm lies on a differentiated-through gradient path; "
          "batch statistics couple samples, use layer-norm or no normalization here");
    case Op::LayerNorm: {
      const NodeId x = n.parents[0];
      const Shape& s = n.shape;
      const double inv_m = 1.0 / static_cast<double>(row_size(s));
      const NodeId r = broadcast_rows(row_inv_std(x, c), s);
      const NodeId g_mean = broadcast_rows(scale(sum_rows(g), inv_m), s);
      const NodeId gy_mean = broadcast_rows(scale(sum_rows(mul(g, id)), inv_m), s);
      give(0, mul(r, sub(sub(g, g_mean), mul(id, gy_mean))));
      return;
    }
    case Op::RowInvStd: {
      const NodeId x = n.parents[0];
      const Shape s = shape(x);
      const double inv_m = 1.0 / static_cast<double>(row_size(s));
      const NodeId coef = broadcast_rows(mul(g, square(id)), s);
      give(0, scale(mul(coef, layer_norm(x, c)), -inv_m));
      return;
    }
    case Op::LogSoftmax: {
      const Shape& s = n.shape;
      give(0, sub(g, mul(exp(id), broadcast_rows(sum_rows(g), s))));
      return;
    }
    case Op::L2Norm: {
      const NodeId a = n.parents[0];
      const Shape s = shape(a);
      const NodeId k = mul(g, recip(id));
      give(0, mul(a, s.size() == 1 ? broadcast_scalar(k, s) : broadcast_rows(k, s)));
      return;
    }
    case Op::Reshape:
      give(0, reshape(g, shape(n.parents[0])));
      return;
    case Op::Concat: {
      int64_t off = 0;
      for (size_t k = 0; k < n.parents.size(); ++k) {
        const int64_t len = shape(n.parents[k])[0];
        if (want(k)) give(k, slice(g, off, len));
        off += len;
      }
      return;
    }
    case Op::Slice: {
      const Shape s = shape(n.parents[0]);
      const int64_t before = n.payload.offset;
      const int64_t after = s[0] - before - n.shape[0];
      std::vector<NodeId> parts;
      Shape pad = s;
      if (before > 0) {
        pad[0] = before;
        parts.push_back(fill(pad, T(0)));
      }
      parts.push_back(g);
      if (after > 0) {
        pad[0] = after;
        parts.push_back(fill(pad, T(0)));
      }
      give(0, parts.size() == 1 ? g : concat(parts));
      return;
    }
  }
  throw GraphError("differentiate: unhandled op");
}

template class Values<float>;
template class Values<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace gex::graph
