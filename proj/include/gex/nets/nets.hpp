#pragma once

// Layer-list network descriptions, seeded parameter initialization and the
// translation of a description into graph nodes.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gex/graph/graph.hpp"
#include "gex/graph/param_store.hpp"

namespace gex::nets {

enum class LayerKind { conv, conv_transpose, dense };
enum class Activation { none, relu, leaky_relu, tanh };
enum class Norm { none, batch, layer };

std::string to_string(Norm n);
Norm parse_norm(const std::string& s);  // "batch" | "layer" | "none"

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int64_t filters = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  Activation activation = Activation::none;
  double slope = 0.0;  // leaky-relu only
  Norm norm = Norm::none;
};

struct NetworkSpec {
  std::string name;  // parameter-name prefix
  Shape input;       // per-sample shape, e.g. {1, 32, 32} or {z, 1, 1}
  std::vector<LayerSpec> layers;
  std::vector<Shape> outputs;  // per-sample output shape of each layer
  int feature_tap = -1;        // layer whose flattened activation is exposed
  int64_t feature_dim = 0;

  const Shape& output() const { return outputs.back(); }
  std::vector<int> kernels() const;
};

// Fills `outputs` and validates the layer chain. Throws graph::ShapeError when
// a layer does not fit its input.
void infer_shapes(NetworkSpec& spec);

// Actor-critic: a trunk plus policy and value heads on the trunk's output.
struct ActorCriticSpec {
  NetworkSpec trunk;
  int64_t n_actions = 0;
};

struct ProfileSpec {
  std::string name;
  int64_t canvas = 32;
  int64_t z_dim = 128;
  int64_t gan_width = 64;  // filters of every hidden G/D/E layer
  // Actor-critic trunk.
  std::vector<int> ac_filters;
  std::vector<int> ac_kernels;
  std::vector<int> ac_strides;
  int64_t ac_dense = 512;
};

ProfileSpec paper_profile();
ProfileSpec small_profile();
ProfileSpec profile_by_name(const std::string& name);  // throws std::invalid_argument

ActorCriticSpec actor_critic_spec(const Shape& obs_shape, int64_t n_actions,
                                  const ProfileSpec& profile);
NetworkSpec generator_spec(int64_t z_dim, int64_t canvas, int64_t width = 64);
NetworkSpec critic_spec(int64_t canvas, int64_t width = 64, Norm norm = Norm::layer);
NetworkSpec encoder_spec(int64_t canvas, int64_t z_dim, int64_t width = 64);

// Parameter naming: "<net>.<layer>.w", ".b", and for normalized layers
// ".gain", ".shift"; batch-norm adds non-trainable ".mean" / ".var".
// Weights are uniform in +-1/sqrt(fan_in); gains 1, everything else 0.
template <class T>
void init_params(const NetworkSpec& spec, graph::ParamStore<T>& store, uint64_t seed);
template <class T>
void init_params(const ActorCriticSpec& spec, graph::ParamStore<T>& store, uint64_t seed);

enum class Mode { train, eval };

// Graph nodes produced by one application of a network.
struct Applied {
  graph::NodeId output;
  graph::NodeId tap;  // flattened [N, feature_dim]; invalid if the spec has none
  // Batch-norm nodes applied with batch statistics, with their layer prefix.
  std::vector<std::pair<graph::NodeId, std::string>> batch_norms;
};

// x is [N, ...spec.input]. In eval mode batch-norm uses the stored running
// statistics; in train mode it uses batch statistics.
template <class T>
Applied apply(graph::Graph<T>& g, const NetworkSpec& spec, const graph::ParamStore<T>& store,
              graph::NodeId x, Mode mode);

struct AppliedActorCritic {
  graph::NodeId logits;  // [N, A]
  graph::NodeId value;   // [N]
};

template <class T>
AppliedActorCritic apply(graph::Graph<T>& g, const ActorCriticSpec& spec,
                         const graph::ParamStore<T>& store, graph::NodeId x);

// Blends the batch statistics recorded in `values` into the running ones:
// running = (1 - momentum) * running + momentum * batch.
template <class T>
void update_running_stats(const Applied& applied, const graph::Values<T>& values,
                          graph::ParamStore<T>& store, double momentum);

// Trainable parameter names of one network (everything under its prefix).
template <class T>
std::vector<std::string> trainable_names(const graph::ParamStore<T>& store,
                                         const std::string& prefix);

}  // namespace gex::nets
