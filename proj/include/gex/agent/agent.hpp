#pragma once

// Synchronous advantage actor-critic over a VecEnv, with the novelty reward
// of a GirmState added to the environment reward.

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gex/envs/envs.hpp"
#include "gex/girm/girm.hpp"
#include "gex/graph/graph.hpp"
#include "gex/graph/param_store.hpp"
#include "gex/nets/nets.hpp"

namespace gex::agent {

struct A2CConfig {
  double gamma = 0.99;
  int64_t rollout = 5;  // T
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int64_t workers = 8;  // K
  bool warmup = true;   // uniform actions and no updates until GIRM is trained
  double lr = 2.5e-4;

  void validate() const;  // throws std::invalid_argument
};

class A2CError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss graph of one update batch. Inputs: obs [B, ...], onehot [B, A],
// advantage [B] (treated as a constant), ret [B].
struct A2CLossNodes {
  graph::NodeId obs, onehot, advantage, ret;
  graph::NodeId logits, value;
  graph::NodeId policy, value_loss, entropy, total;
};

//   total = -mean(adv * log pi(a|s)) + c_v mean((ret - v)^2) - c_e mean(H)
template <class T>
A2CLossNodes build_a2c_loss(graph::Graph<T>& g, const nets::ActorCriticSpec& spec,
                            const graph::ParamStore<T>& store, int64_t batch,
                            const A2CConfig& config);

// Actor-critic parameters and cached graphs.
class Policy {
 public:
  Policy(nets::ActorCriticSpec spec, uint64_t seed);
  ~Policy();
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;

  const nets::ActorCriticSpec& spec() const { return spec_; }
  graph::ParamStore<float>& params() { return params_; }
  const graph::ParamStore<float>& params() const { return params_; }
  int64_t n_actions() const { return spec_.n_actions; }
  int64_t obs_size() const { return numel(spec_.trunk.input); }

  struct Forward {
    std::vector<double> logits;  // [n, A]
    std::vector<double> values;  // [n]
  };
  Forward forward(std::span<const float> obs, int64_t n);

  struct Graphs;
  Graphs& graphs();

 private:
  nets::ActorCriticSpec spec_;
  graph::ParamStore<float> params_;
  std::unique_ptr<Graphs> graphs_;
};

struct ActResult {
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> entropy;  // of the policy distribution
};

// Samples one action per observation from softmax(logits). With `uniform`
// set, actions are drawn uniformly instead and log-probs are ln(1/A).
// Throws A2CError on non-finite logits.
ActResult act(Policy& policy, std::span<const float> obs, int64_t n, std::mt19937_64& rng,
              bool uniform = false);
// Same, from precomputed logits/values.
ActResult act_from(const Policy::Forward& f, int64_t n, int64_t n_actions, std::mt19937_64& rng,
                   bool uniform);

double softmax_entropy(std::span<const double> logits);

struct Transition {
  int action = 0;
  double r_ext = 0;
  double r_int = 0;
  double r = 0;  // r_ext + r_int
  double value = 0;
  double log_prob = 0;
  bool done = false;
  int64_t worker = 0;
  int64_t frame = 0;     // global frame index of this step
  double raw_int = 0;    // residual before standardization (0 while gated)
  envs::StepInfo info;   // as reached
};

struct Rollout {
  int64_t steps = 0;    // T
  int64_t workers = 0;  // K
  std::vector<Transition> transitions;  // step-major: t * K + k
  std::vector<float> obs;               // observation each action was taken on
  std::vector<double> bootstrap;        // V(s_T) per worker
  std::vector<uint8_t> has_bootstrap;   // last step non-terminal
  bool girm_trained_at_start = false;
  int64_t trainings = 0;                // GIRM phases run during collection
  std::vector<girm::PhaseReport> reports;

  const Transition& at(int64_t t, int64_t k) const {
    return transitions[static_cast<size_t>(t * workers + k)];
  }
};

// Everything a rollout reads or mutates besides the environments.
struct RolloutContext {
  girm::GirmState* girm = nullptr;  // null: extrinsic reward only
  girm::StateMemory* memory = nullptr;
  girm::RewardNormalizer* normalizer = nullptr;
  std::mt19937_64* rng = nullptr;
  int64_t* frame = nullptr;  // advanced by K per step
};

// T lockstep steps. Intrinsic rewards are computed on the frames the step
// reached, fed to the normalizer in worker order, and the same frames are
// then offered to the memory; a full memory trains GIRM on the spot.
Rollout collect_rollout(envs::VecEnv& venv, Policy& policy, RolloutContext ctx,
                        const A2CConfig& config);

struct Returns {
  std::vector<double> returns;     // step-major like the rollout
  std::vector<double> advantages;
};

Returns compute_returns(const Rollout& rollout, double gamma);

struct Losses {
  double policy = 0, value = 0, entropy = 0, total = 0;
  double grad_norm = 0;  // before clipping
};

// One clipped Adam step. Throws A2CError on a non-finite loss or gradient.
Losses a2c_update(Policy& policy, const Rollout& rollout, const Returns& returns,
                  const A2CConfig& config);

}  // namespace gex::agent
