#include "gex/nets/nets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gex::nets {

using graph::NodeId;
using graph::ShapeError;
using gex::to_string;

std::string to_string(Norm n) {
  switch (n) {
    case Norm::none: return "none";
    case Norm::batch: return "batch";
    case Norm::layer: return "layer";
  }
  return "?";
}

Norm parse_norm(const std::string& s) {
  if (s == "none") return Norm::none;
  if (s == "batch") return Norm::batch;
  if (s == "layer") return Norm::layer;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected batch|layer|none)");
}

std::vector<int> NetworkSpec::kernels() const {
  std::vector<int> k;
  for (const auto& l : layers) k.push_back(l.kernel);
  return k;
}

namespace {

std::string layer_prefix(const NetworkSpec& spec, size_t i) {
  return spec.name + "." + std::to_string(i);
}

}  // namespace

void infer_shapes(NetworkSpec& spec) {
  spec.outputs.clear();
  Shape cur = spec.input;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = spec.name + " layer " + std::to_string(i) + ": ";
    if (l.filters < 1) throw ShapeError(where + "filter count must be positive");
    if (l.kind == LayerKind::dense) {
      cur = {l.filters};
    } else {
      if (cur.size() != 3) throw ShapeError(where + "convolution needs a [C,H,W] input, got " + to_string(cur));
      if (l.kernel < 1 || l.stride < 1 || l.padding < 0) throw ShapeError(where + "bad kernel/stride/padding");
      int64_t h = 0;
      int64_t w = 0;
      if (l.kind == LayerKind::conv) {
        const int64_t ph = cur[1] + 2 * l.padding - l.kernel;
        const int64_t pw = cur[2] + 2 * l.padding - l.kernel;
        if (ph < 0 || pw < 0) {
          throw ShapeError(where + "input " + to_string(cur) + " is smaller than the " +
                           std::to_string(l.kernel) + "x" + std::to_string(l.kernel) + " kernel");
        }
        h = ph / l.stride + 1;
        w = pw / l.stride + 1;
      } else {
        h = (cur[1] - 1) * l.stride - 2 * l.padding + l.kernel;
        w = (cur[2] - 1) * l.stride - 2 * l.padding + l.kernel;
        if (h < 1 || w < 1) throw ShapeError(where + "transposed convolution yields an empty output");
      }
      cur = {l.filters, h, w};
    }
    spec.outputs.push_back(cur);
  }
  if (spec.layers.empty()) throw ShapeError(spec.name + ": no layers");
  if (spec.layers.back().norm != Norm::none) throw ShapeError(spec.name + ": final layer is normalized");
  spec.feature_dim = spec.feature_tap >= 0 ? numel(spec.outputs.at(spec.feature_tap)) : 0;
}

ProfileSpec paper_profile() {
  ProfileSpec p;
  p.name = "paper";
  p.canvas = 64;
  p.z_dim = 128;
  p.gan_width = 64;
  p.ac_filters = {32, 64, 64};
  p.ac_kernels = {8, 4, 3};
  p.ac_strides = {4, 2, 1};
  p.ac_dense = 512;
  return p;
}

ProfileSpec small_profile() {
  ProfileSpec p;
  p.name = "small";
  p.canvas = 32;
  p.z_dim = 128;
  p.gan_width = 16;
  p.ac_filters = {16, 32, 32};
  p.ac_kernels = {4, 3, 3};
  p.ac_strides = {2, 2, 1};
  p.ac_dense = 256;
  return p;
}

ProfileSpec profile_by_name(const std::string& name) {
  if (name == "paper") return paper_profile();
  if (name == "small") return small_profile();
  throw std::invalid_argument("unknown profile '" + name + "' (expected small|paper)");
}

ActorCriticSpec actor_critic_spec(const Shape& obs_shape, int64_t n_actions,
                                  const ProfileSpec& profile) {
  if (n_actions < 2) throw std::invalid_argument("actor-critic needs at least 2 actions");
  if (obs_shape.size() != 3 || obs_shape[0] < 1 || obs_shape[1] != obs_shape[2]) {
    throw ShapeError("actor-critic expects a square [C,H,W] observation, got " + to_string(obs_shape));
  }
  ActorCriticSpec ac;
  ac.n_actions = n_actions;
  ac.trunk.name = "ac";
  ac.trunk.input = obs_shape;
  for (size_t i = 0; i < profile.ac_filters.size(); ++i) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.filters = profile.ac_filters[i];
    l.kernel = profile.ac_kernels[i];
    l.stride = profile.ac_strides[i];
    l.activation = Activation::leaky_relu;
    l.slope = 0.01;
    ac.trunk.layers.push_back(l);
  }
  LayerSpec dense;
  dense.kind = LayerKind::dense;
  dense.filters = profile.ac_dense;
  dense.activation = Activation::leaky_relu;
  dense.slope = 0.01;
  ac.trunk.layers.push_back(dense);
  infer_shapes(ac.trunk);
  return ac;
}

NetworkSpec generator_spec(int64_t z_dim, int64_t canvas, int64_t width) {
  if (z_dim < 8) throw std::invalid_argument("generator: z_dim must be >= 8");
  if (canvas != 32 && canvas != 64) {
    throw std::invalid_argument("generator: canvas " + std::to_string(canvas) +
                                " is not reachable by the stride plan (32 or 64)");
  }
  NetworkSpec s;
  s.name = "gen";
  s.input = {z_dim, 1, 1};
  for (int i = 0; i < 5; ++i) {
    LayerSpec l;
    l.kind = LayerKind::conv_transpose;
    l.kernel = 4;
    if (i == 0) {
      l.stride = 1;
      l.padding = canvas == 64 ? 0 : 1;  // 1 -> 4 or 1 -> 2
    } else {
      l.stride = 2;
      l.padding = 1;  // doubles
    }
    const bool last = i == 4;
    l.filters = last ? 1 : width;
    l.activation = last ? Activation::tanh : Activation::relu;
    l.norm = last ? Norm::none : Norm::batch;
    s.layers.push_back(l);
  }
  infer_shapes(s);
  return s;
}

namespace {

// Four halving convolutions shared by critic and encoder.
void halving_stack(NetworkSpec& s, int64_t width, Norm norm) {
  const int kernels[4] = {4, 5, 5, 3};
  for (int k : kernels) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.filters = width;
    l.kernel = k;
    l.stride = 2;
    l.padding = (k - 1) / 2;
    l.activation = Activation::leaky_relu;
    l.slope = 0.2;
    l.norm = norm;
    s.layers.push_back(l);
  }
}

void check_canvas(const char* who, int64_t canvas) {
  if (canvas != 32 && canvas != 64) {
    throw std::invalid_argument(std::string(who) + ": canvas " + std::to_string(canvas) +
                                " is not supported (32 or 64)");
  }
}

}  // namespace

NetworkSpec critic_spec(int64_t canvas, int64_t width, Norm norm) {
  check_canvas("critic", canvas);
  NetworkSpec s;
  s.name = "critic";
  s.input = {1, canvas, canvas};
  halving_stack(s, width, norm);
  LayerSpec mix;  // 1x1, keeps resolution
  mix.filters = width;
  mix.kernel = 1;
  mix.activation = Activation::leaky_relu;
  mix.slope = 0.2;
  mix.norm = norm;
  s.layers.push_back(mix);
  LayerSpec out;
  out.filters = 1;
  out.kernel = 5;
  out.stride = 2;
  out.padding = canvas == 64 ? 1 : 2;  // 4 -> 1 or 2 -> 1
  s.layers.push_back(out);
  s.feature_tap = 4;
  infer_shapes(s);
  return s;
}

NetworkSpec encoder_spec(int64_t canvas, int64_t z_dim, int64_t width) {
  check_canvas("encoder", canvas);
  NetworkSpec s;
  s.name = "enc";
  s.input = {1, canvas, canvas};
  halving_stack(s, width, Norm::batch);
  LayerSpec out;
  out.filters = z_dim;
  out.kernel = 5;
  out.stride = 2;
  out.padding = canvas == 64 ? 1 : 2;
  s.layers.push_back(out);
  infer_shapes(s);
  return s;
}

namespace {

template <class T>
Tensor<T> uniform(const Shape& s, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return t;
}

template <class T>
void init_layers(const NetworkSpec& spec, graph::ParamStore<T>& store, std::mt19937_64& rng) {
  Shape in = spec.input;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string p = layer_prefix(spec, i);
    Shape w;
    int64_t fan_in = 0;
    switch (l.kind) {
      case LayerKind::conv:
        w = {l.filters, in[0], l.kernel, l.kernel};
        fan_in = in[0] * l.kernel * l.kernel;
        break;
      case LayerKind::conv_transpose:
        // Same layout as the forward convolution it transposes: [in, out, k, k].
        // Each output pixel sees about in*k*k/stride^2 inputs.
        w = {in[0], l.filters, l.kernel, l.kernel};
        fan_in = std::max<int64_t>(1, in[0] * l.kernel * l.kernel / (l.stride * l.stride));
        break;
      case LayerKind::dense:
        w = {numel(in), l.filters};
        fan_in = numel(in);
        break;
    }
    store.add(p + ".w", uniform<T>(w, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
    store.add(p + ".b", Tensor<T>({l.filters}));
    if (l.norm != Norm::none) {
      store.add(p + ".gain", Tensor<T>({l.filters}, T(1)));
      store.add(p + ".shift", Tensor<T>({l.filters}));
    }
    if (l.norm == Norm::batch) {
      store.add(p + ".mean", Tensor<T>({l.filters}), false);
      store.add(p + ".var", Tensor<T>({l.filters}, T(1)), false);
    }
    in = spec.outputs[i];
  }
}

}  // namespace

template <class T>
void init_params(const NetworkSpec& spec, graph::ParamStore<T>& store, uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_layers(spec, store, rng);
}

template <class T>
void init_params(const ActorCriticSpec& spec, graph::ParamStore<T>& store, uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_layers(spec.trunk, store, rng);
  const int64_t d = numel(spec.trunk.output());
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  // A small policy head starts the agent close to the uniform policy.
  store.add("ac.pi.w", uniform<T>({d, spec.n_actions}, 0.01 * bound, rng));
  store.add("ac.pi.b", Tensor<T>({spec.n_actions}));
  store.add("ac.v.w", uniform<T>({d, 1}, bound, rng));
  store.add("ac.v.b", Tensor<T>({1}));
}

namespace {

constexpr double kNormEps = 1e-5;

template <class T>
NodeId channel_affine(graph::Graph<T>& g, NodeId y, NodeId scale, NodeId shift) {
  const Shape s = g.shape(y);
  return g.add(g.mul(y, g.broadcast_channels(scale, s)), g.broadcast_channels(shift, s));
}

}  // namespace

template <class T>
Applied apply(graph::Graph<T>& g, const NetworkSpec& spec, const graph::ParamStore<T>& store,
              NodeId x, Mode mode) {
  Shape expect = spec.input;
  const Shape xs = g.shape(x);
  if (xs.size() != spec.input.size() + 1 || !std::equal(expect.begin(), expect.end(), xs.begin() + 1)) {
    throw ShapeError(spec.name + ": input " + to_string(xs) + " does not match [N," +
                     to_string(spec.input).substr(1));
  }
  const int64_t n = xs[0];
  Applied out;
  NodeId h = x;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string p = layer_prefix(spec, i);
    const NodeId w = g.parameter(store, p + ".w");
    const Shape& os = spec.outputs[i];
    switch (l.kind) {
      case LayerKind::conv:
        h = g.conv2d(h, w, l.stride, l.padding);
        break;
      case LayerKind::conv_transpose:
        h = g.conv_transpose2d(h, w, l.stride, l.padding, os[1], os[2]);
        break;
      case LayerKind::dense:
        if (g.shape(h).size() != 2) h = g.reshape(h, {n, numel(g.shape(h)) / n});
        h = g.matmul(h, w);
        break;
    }
    h = g.add(h, g.broadcast_channels(g.parameter(store, p + ".b"), g.shape(h)));
    if (l.norm == Norm::batch) {
      if (mode == Mode::train) {
        h = g.batch_norm(h, kNormEps);
        out.batch_norms.emplace_back(h, p);
      } else {
        const Shape s = g.shape(h);
        const NodeId mean = g.parameter(store, p + ".mean");
        const NodeId inv = g.recip(g.sqrt(g.add_scalar(g.parameter(store, p + ".var"), kNormEps)));
        h = g.mul(g.sub(h, g.broadcast_channels(mean, s)), g.broadcast_channels(inv, s));
      }
    } else if (l.norm == Norm::layer) {
      h = g.layer_norm(h, kNormEps);
    }
    if (l.norm != Norm::none) {
      h = channel_affine(g, h, g.parameter(store, p + ".gain"), g.parameter(store, p + ".shift"));
    }
    switch (l.activation) {
      case Activation::none: break;
      case Activation::relu: h = g.relu(h); break;
      case Activation::leaky_relu: h = g.leaky_relu(h, l.slope); break;
      case Activation::tanh: h = g.tanh(h); break;
    }
    if (static_cast<int>(i) == spec.feature_tap) out.tap = g.reshape(h, {n, spec.feature_dim});
  }
  out.output = h;
  return out;
}

template <class T>
AppliedActorCritic apply(graph::Graph<T>& g, const ActorCriticSpec& spec,
                         const graph::ParamStore<T>& store, NodeId x) {
  const NodeId h = apply(g, spec.trunk, store, x, Mode::eval).output;
  const Shape hs = g.shape(h);
  AppliedActorCritic out;
  out.logits = g.matmul(h, g.parameter(store, "ac.pi.w"));
  out.logits = g.add(out.logits, g.broadcast_channels(g.parameter(store, "ac.pi.b"), g.shape(out.logits)));
  NodeId v = g.matmul(h, g.parameter(store, "ac.v.w"));
  v = g.add(v, g.broadcast_channels(g.parameter(store, "ac.v.b"), g.shape(v)));
  out.value = g.reshape(v, {hs[0]});
  return out;
}

template <class T>
void update_running_stats(const Applied& applied, const graph::Values<T>& values,
                          graph::ParamStore<T>& store, double momentum) {
  for (const auto& [node, prefix] : applied.batch_norms) {
    const std::vector<T>& stats = values.aux(node);
    Tensor<T>& mean = store.value(prefix + ".mean");
    Tensor<T>& var = store.value(prefix + ".var");
    const int64_t c = mean.size();
    for (int64_t i = 0; i < c; ++i) {
      mean[i] = static_cast<T>((1 - momentum) * mean[i] + momentum * stats[i]);
      var[i] = static_cast<T>((1 - momentum) * var[i] + momentum * stats[c + i]);
    }
  }
}

template <class T>
std::vector<std::string> trainable_names(const graph::ParamStore<T>& store,
                                         const std::string& prefix) {
  std::vector<std::string> names;
  for (const auto& e : store.entries()) {
    if (e.trainable && e.name.compare(0, prefix.size() + 1, prefix + ".") == 0) names.push_back(e.name);
  }
  return names;
}

#define GEX_NETS_INSTANTIATE(T)                                                               \
  template void init_params<T>(const NetworkSpec&, graph::ParamStore<T>&, uint64_t);        \
  template void init_params<T>(const ActorCriticSpec&, graph::ParamStore<T>&, uint64_t);    \
  template Applied apply<T>(graph::Graph<T>&, const NetworkSpec&, const graph::ParamStore<T>&, \
                            NodeId, Mode);                                                   \
  template AppliedActorCritic apply<T>(graph::Graph<T>&, const ActorCriticSpec&,             \
                                       const graph::ParamStore<T>&, NodeId);                \
  template void update_running_stats<T>(const Applied&, const graph::Values<T>&,             \
                                         graph::ParamStore<T>&, double);                     \
  template std::vector<std::string> trainable_names<T>(const graph::ParamStore<T>&,          \
                                                       const std::string&);

GEX_NETS_INSTANTIATE(float)
GEX_NETS_INSTANTIATE(double)

}  // namespace gex::nets
