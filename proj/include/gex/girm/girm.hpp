#pragma once

// Novelty reward from a GAN trained on visited observations: the generator and
// critic are fit to the memory with WGAN-GP, an encoder is then fit to invert
// the generator, and the reconstruction residual of a frame is its raw reward.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gex/graph/graph.hpp"
#include "gex/graph/param_store.hpp"
#include "gex/nets/nets.hpp"

namespace gex::girm {

// Fixed-capacity observation buffer; frames are stored contiguously.
class StateMemory {
 public:
  StateMemory(int64_t capacity, Shape frame_shape);

  // Appends a frame; returns true exactly when the memory becomes full.
  // Throws std::logic_error when already full, std::invalid_argument on a
  // size mismatch.
  bool store(std::span<const float> frame);
  void clear() { fill_ = 0; }

  int64_t capacity() const { return capacity_; }
  int64_t size() const { return fill_; }
  bool full() const { return fill_ == capacity_; }
  const Shape& frame_shape() const { return frame_shape_; }
  int64_t frame_size() const { return frame_size_; }
  std::span<const float> frame(int64_t i) const;

 private:
  int64_t capacity_;
  Shape frame_shape_;
  int64_t frame_size_;
  int64_t fill_ = 0;
  std::vector<float> data_;
};

// Streaming standardization with exponentially weighted mean and variance.
// The variance update uses the already-updated mean.
class RewardNormalizer {
 public:
  explicit RewardNormalizer(double alpha = 0.01, double eps_var = 1e-8);

  double normalize(double r);  // throws std::invalid_argument if r is not finite

  double ema() const { return ema_; }
  double emv() const { return emv_; }
  int64_t steps() const { return steps_; }
  double alpha() const { return alpha_; }
  void restore(double ema, double emv, int64_t steps);

 private:
  double alpha_;
  double eps_var_;
  double ema_ = 0.0;
  double emv_ = 0.0;
  int64_t steps_ = 0;
};

// Per-sample residual between frames and reconstructions, both [N, ...],
// returning an [N] node.
using ResidualFn = std::function<graph::NodeId(graph::Graph<float>&, graph::NodeId frames,
                                               graph::NodeId reconstructions)>;

// Mean squared difference per sample.
graph::NodeId mse_residual(graph::Graph<float>& g, graph::NodeId s, graph::NodeId r);
ResidualFn residual_by_name(const std::string& name);  // "mse"

// Encoder objective averaged over the batch:
//   (1/n)|s - rec|^2 + (lambda/n_d)|f(s) - f(rec)|^2
// with n pixels per frame and n_d features per tap row. Returns a scalar node.
graph::NodeId encoder_objective(graph::Graph<float>& g, graph::NodeId s, graph::NodeId rec,
                                graph::NodeId f_s, graph::NodeId f_rec, double lambda);

struct GirmConfig {
  int64_t canvas = 32;
  int64_t z_dim = 128;
  int64_t width = 64;
  nets::Norm critic_norm = nets::Norm::layer;
  double lambda = 1.0;      // feature-matching weight in the encoder loss
  double lambda_gp = 10.0;  // gradient-penalty weight
  int n_critic = 5;
  int batch = 64;
  int first_gan_epochs = 20;
  int first_encoder_epochs = 10;
  int fine_gan_epochs = 2;
  int fine_encoder_epochs = 2;
  int64_t memory = 8192;
  std::string residual = "mse";
  double lr = 1e-4;
  double bn_momentum = 0.1;

  void validate() const;  // throws std::invalid_argument
};

class GirmTrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhaseReport {
  std::vector<double> critic_loss;     // per GAN epoch
  std::vector<double> generator_loss;  // per GAN epoch
  std::vector<double> encoder_loss;    // per encoder epoch
};

// Generator, critic and encoder with their parameters and cached graphs.
// Graphs hold pointers into `params`, so the state is pinned in memory.
class GirmState {
 public:
  GirmState(GirmConfig config, uint64_t seed);
  ~GirmState();
  GirmState(const GirmState&) = delete;
  GirmState& operator=(const GirmState&) = delete;

  const GirmConfig& config() const { return config_; }
  const nets::NetworkSpec& generator() const { return gen_; }
  const nets::NetworkSpec& critic() const { return critic_; }
  const nets::NetworkSpec& encoder() const { return enc_; }
  graph::ParamStore<float>& params() { return params_; }
  const graph::ParamStore<float>& params() const { return params_; }
  Shape frame_shape() const { return {1, config_.canvas, config_.canvas}; }

  bool trained() const { return phases_ > 0; }
  int64_t phases() const { return phases_; }
  void set_phases(int64_t p) { phases_ = p; }
  std::mt19937_64& rng() { return rng_; }
  const PhaseReport& last_report() const { return last_; }

  // One critic update on a real batch [B, 1, C, C]; returns the critic loss.
  double critic_step(std::span<const float> real);
  // One generator update; returns the generator loss.
  double generator_step();
  // One encoder update on a batch; returns the encoder loss.
  double encoder_step(std::span<const float> batch);
  // Per-frame raw residual for a batch of frames [N, 1, C, C] (eval mode).
  std::vector<double> residuals(std::span<const float> frames, int64_t n);
  // Generator output for z [N, z_dim] in eval mode.
  std::vector<float> generate(std::span<const float> z, int64_t n);

  void finish_phase(PhaseReport report);

 private:
  struct Graphs;
  Graphs& graphs();

  GirmConfig config_;
  nets::NetworkSpec gen_;
  nets::NetworkSpec critic_;
  nets::NetworkSpec enc_;
  graph::ParamStore<float> params_;
  ResidualFn residual_;
  std::mt19937_64 rng_;
  int64_t phases_ = 0;
  PhaseReport last_;
  std::unique_ptr<Graphs> graphs_;
};

// Fails if the memory is not full or epochs < 1.
PhaseReport train_gan(GirmState& girm, const StateMemory& mem, int epochs);
PhaseReport train_encoder(GirmState& girm, const StateMemory& mem, int epochs);

// Raw residual of one frame. Throws std::logic_error while untrained.
double raw_intrinsic(GirmState& girm, std::span<const float> frame);

// Standardized rewards for a batch of frames, fed to the normalizer in index
// order. All zeros (and the normalizer untouched) while untrained. `raw`
// receives the unstandardized residuals when non-null.
std::vector<double> intrinsic_rewards(GirmState& girm, RewardNormalizer& norm,
                                      std::span<const float> frames, int64_t n,
                                      std::vector<double>* raw = nullptr);
double intrinsic_reward(GirmState& girm, RewardNormalizer& norm, std::span<const float> frame);

// Runs a training phase when the memory is full: GAN then encoder, with the
// first-phase epoch counts on phase 0 and fine-tune counts afterwards. Clears
// the memory. Returns whether training happened.
bool maybe_train(GirmState& girm, StateMemory& mem, RewardNormalizer& norm);

}  // namespace gex::girm
