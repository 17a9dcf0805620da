#include "gex/girm/girm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gex::girm {

using graph::Bindings;
using graph::Graph;
using graph::NodeId;
using graph::Values;

// ---------------------------------------------------------------------------
// StateMemory

StateMemory::StateMemory(int64_t capacity, Shape frame_shape)
    : capacity_(capacity), frame_shape_(std::move(frame_shape)), frame_size_(numel(frame_shape_)) {
  if (capacity_ < 1) throw std::invalid_argument("memory capacity must be positive");
  data_.resize(static_cast<size_t>(capacity_ * frame_size_));
}

bool StateMemory::store(std::span<const float> frame) {
  if (static_cast<int64_t>(frame.size()) != frame_size_) {
    throw std::invalid_argument("memory: frame has " + std::to_string(frame.size()) +
                                " values, expected " + std::to_string(frame_size_) + " " +
                                to_string(frame_shape_));
  }
  if (full()) throw std::logic_error("memory: store on a full memory; train and clear first");
  std::copy(frame.begin(), frame.end(), data_.begin() + fill_ * frame_size_);
  ++fill_;
  return full();
}

std::span<const float> StateMemory::frame(int64_t i) const {
  if (i < 0 || i >= fill_) throw std::out_of_range("memory: frame index out of range");
  return {data_.data() + i * frame_size_, static_cast<size_t>(frame_size_)};
}

// ---------------------------------------------------------------------------
// RewardNormalizer

RewardNormalizer::RewardNormalizer(double alpha, double eps_var) : alpha_(alpha), eps_var_(eps_var) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("normalizer: alpha must be in (0, 1]");
  if (!(eps_var >= 0.0)) throw std::invalid_argument("normalizer: eps_var must be >= 0");
}

double RewardNormalizer::normalize(double r) {
  if (!std::isfinite(r)) throw std::invalid_argument("normalizer: non-finite reward");
  if (steps_ == 0) {
    ema_ = r;
    emv_ = 0.0;
  } else {
    ema_ = alpha_ * r + (1.0 - alpha_) * ema_;
    const double d = r - ema_;
    emv_ = alpha_ * d * d + (1.0 - alpha_) * emv_;
  }
  ++steps_;
  const double num = r - ema_;
  if (num == 0.0) return 0.0;
  return num / std::sqrt(emv_ + eps_var_);
}

void RewardNormalizer::restore(double ema, double emv, int64_t steps) {
  if (emv < 0 || steps < 0) throw std::invalid_argument("normalizer: invalid restored state");
  ema_ = ema;
  emv_ = emv;
  steps_ = steps;
}

// ---------------------------------------------------------------------------
// residuals and objectives

NodeId mse_residual(Graph<float>& g, NodeId s, NodeId r) {
  const Shape shape = g.shape(s);
  const double n = static_cast<double>(numel(shape) / shape.at(0));
  return g.scale(g.sum_rows(g.square(g.sub(s, r))), 1.0 / n);
}

ResidualFn residual_by_name(const std::string& name) {
  if (name == "mse") return mse_residual;
  throw std::invalid_argument("unknown residual '" + name + "' (expected mse)");
}

NodeId encoder_objective(Graph<float>& g, NodeId s, NodeId rec, NodeId f_s, NodeId f_rec,
                         double lambda) {
  // mean over batch and pixels == batch mean of (1/n)|.|^2
  NodeId loss = g.mean(g.square(g.sub(s, rec)));
  if (lambda != 0.0) loss = g.add(loss, g.scale(g.mean(g.square(g.sub(f_s, f_rec))), lambda));
  return loss;
}

void GirmConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("girm: ") + name + " must be positive");
  };
  positive(z_dim, "z_dim");
  positive(width, "width");
  positive(n_critic, "n_critic");
  positive(batch, "batch");
  positive(first_gan_epochs, "first_gan_epochs");
  positive(first_encoder_epochs, "first_encoder_epochs");
  positive(fine_gan_epochs, "fine_gan_epochs");
  positive(fine_encoder_epochs, "fine_encoder_epochs");
  positive(memory, "memory");
  if (lambda < 0 || lambda_gp < 0) throw std::invalid_argument("girm: lambda and lambda_gp must be >= 0");
  if (memory < batch) throw std::invalid_argument("girm: memory must hold at least one batch");
  if (!(lr > 0)) throw std::invalid_argument("girm: lr must be positive");
  residual_by_name(residual);
}

// ---------------------------------------------------------------------------
// GirmState

namespace {

struct Trainer {
  Graph<float> g;
  NodeId input;
  NodeId loss;
  std::vector<NodeId> reported;  // extra scalars for diagnostics
  std::vector<std::pair<std::string, NodeId>> grads;
  std::vector<nets::Applied> applied;  // batch-norm bookkeeping

  void differentiate(const graph::ParamStore<float>& store, const std::string& prefix) {
    std::vector<NodeId> wrt;
    const auto names = nets::trainable_names(store, prefix);
    for (const auto& n : names) wrt.push_back(g.parameter(store, n));
    const graph::GradientMap gm = g.differentiate(loss, wrt);
    for (size_t i = 0; i < names.size(); ++i) grads.emplace_back(names[i], gm.at(wrt[i]));
  }
};

struct Scorer {
  Graph<float> g;
  NodeId input;
  NodeId residual;
};

struct Sampler {
  Graph<float> g;
  NodeId input;
  NodeId output;
};

}  // namespace

struct GirmState::Graphs {
  // Critic update: inputs real, fake, mix.
  Trainer critic;
  NodeId fake;
  NodeId mix;
  // Generator update; its generator output doubles as the fake sampler.
  Trainer gen;
  NodeId gen_out;
  // Encoder update.
  Trainer enc;
  std::map<int64_t, Scorer> scorers;
  std::map<int64_t, Sampler> samplers;
};

GirmState::GirmState(GirmConfig config, uint64_t seed) : config_(std::move(config)), rng_(seed) {
  config_.validate();
  gen_ = nets::generator_spec(config_.z_dim, config_.canvas, config_.width);
  critic_ = nets::critic_spec(config_.canvas, config_.width, config_.critic_norm);
  enc_ = nets::encoder_spec(config_.canvas, config_.z_dim, config_.width);
  nets::init_params(gen_, params_, rng_());
  nets::init_params(critic_, params_, rng_());
  nets::init_params(enc_, params_, rng_());
  residual_ = residual_by_name(config_.residual);
}

GirmState::~GirmState() = default;

GirmState::Graphs& GirmState::graphs() {
  if (graphs_) return *graphs_;
  auto gr = std::make_unique<Graphs>();
  const int64_t b = config_.batch;
  const int64_t c = config_.canvas;
  const Shape frames{b, 1, c, c};

  {
    Trainer& t = gr->critic;
    Graph<float>& g = t.g;
    t.input = g.input("real", frames);
    gr->fake = g.input("fake", frames);
    auto real = nets::apply(g, critic_, params_, t.input, nets::Mode::train);
    auto fake = nets::apply(g, critic_, params_, gr->fake, nets::Mode::train);
    const NodeId d_real = g.mean(real.output);
    const NodeId d_fake = g.mean(fake.output);
    t.loss = g.sub(d_fake, d_real);
    t.reported = {d_real, d_fake};
    t.applied.push_back(real);
    if (config_.lambda_gp > 0) {
      gr->mix = g.input("mix", frames);
      const NodeId d_mix = g.sum(nets::apply(g, critic_, params_, gr->mix, nets::Mode::train).output);
      const std::array wrt{gr->mix};
      const NodeId grad = g.differentiate(d_mix, wrt).at(gr->mix);
      const NodeId penalty = g.mean(g.square(g.add_scalar(g.l2_norm(grad), -1.0)));
      t.reported.push_back(penalty);
      t.loss = g.add(t.loss, g.scale(penalty, config_.lambda_gp));
    }
    t.differentiate(params_, critic_.name);
  }
  {
    Trainer& t = gr->gen;
    Graph<float>& g = t.g;
    t.input = g.input("z", {b, config_.z_dim, 1, 1});
    auto gen = nets::apply(g, gen_, params_, t.input, nets::Mode::train);
    gr->gen_out = gen.output;
    t.applied.push_back(gen);
    const NodeId d = nets::apply(g, critic_, params_, gen.output, nets::Mode::eval).output;
    t.loss = g.scale(g.mean(d), -1.0);
    t.differentiate(params_, gen_.name);
  }
  {
    Trainer& t = gr->enc;
    Graph<float>& g = t.g;
    t.input = g.input("s", frames);
    auto enc = nets::apply(g, enc_, params_, t.input, nets::Mode::train);
    t.applied.push_back(enc);
    const NodeId rec = nets::apply(g, gen_, params_, enc.output, nets::Mode::eval).output;
    const NodeId f_s = nets::apply(g, critic_, params_, t.input, nets::Mode::eval).tap;
    const NodeId f_rec = nets::apply(g, critic_, params_, rec, nets::Mode::eval).tap;
    t.loss = encoder_objective(g, t.input, rec, f_s, f_rec, config_.lambda);
    t.differentiate(params_, enc_.name);
  }
  graphs_ = std::move(gr);
  return *graphs_;
}

namespace {

Tensor<float> as_tensor(std::span<const float> v, Shape s) {
  if (static_cast<int64_t>(v.size()) != numel(s)) {
    throw std::invalid_argument("girm: batch has " + std::to_string(v.size()) + " values, expected " +
                                to_string(s));
  }
  return Tensor<float>(std::move(s), std::vector<float>(v.begin(), v.end()));
}

std::string describe_losses(const Values<float>& v, const Trainer& t) {
  std::ostringstream os;
  os << "loss=" << v.scalar(t.loss);
  for (size_t i = 0; i < t.reported.size(); ++i) os << " term" << i << "=" << v.scalar(t.reported[i]);
  return os.str();
}

// Evaluates loss and gradients, checks finiteness and applies one Adam step.
double run_step(Trainer& t, const Bindings<float>& b, graph::ParamStore<float>& store,
                const graph::AdamConfig& adam, double bn_momentum) {
  std::vector<NodeId> out{t.loss};
  out.insert(out.end(), t.reported.begin(), t.reported.end());
  for (const auto& [name, node] : t.grads) out.push_back(node);
  const Values<float> v = t.g.evaluate(out, b);
  const double loss = v.scalar(t.loss);
  if (!std::isfinite(loss)) throw GirmTrainingError("non-finite loss: " + describe_losses(v, t));
  std::map<std::string, Tensor<float>> grads;
  for (const auto& [name, node] : t.grads) grads.emplace(name, v.at(node));
  try {
    graph::adam_update(store, grads, adam);
  } catch (const graph::NonFiniteError& e) {
    throw GirmTrainingError(std::string(e.what()) + " (" + describe_losses(v, t) + ")");
  }
  for (const auto& a : t.applied) nets::update_running_stats(a, v, store, bn_momentum);
  return loss;
}

}  // namespace

double GirmState::critic_step(std::span<const float> real) {
  Graphs& gr = graphs();
  const int64_t b = config_.batch;
  const Shape frames{b, 1, config_.canvas, config_.canvas};
  Tensor<float> x = as_tensor(real, frames);

  // Fakes from the generator in training mode; no generator update here.
  Tensor<float> z({b, config_.z_dim, 1, 1});
  std::normal_distribution<float> normal;
  for (auto& v : z.data) v = normal(rng_);
  Bindings<float> gb;
  gb.bind(gr.gen.input, std::move(z));
  const std::array gout{gr.gen_out};
  const Values<float> gv = gr.gen.g.evaluate(gout, gb);
  for (const auto& a : gr.gen.applied) nets::update_running_stats(a, gv, params_, config_.bn_momentum);
  const Tensor<float>& fake = gv.at(gr.gen_out);

  Bindings<float> b2;
  if (config_.lambda_gp > 0) {
    Tensor<float> mix(frames);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    const int64_t per = mix.size() / b;
    for (int64_t i = 0; i < b; ++i) {
      const float u = uni(rng_);
      for (int64_t j = 0; j < per; ++j) {
        const int64_t k = i * per + j;
        mix[k] = u * x[k] + (1.f - u) * fake[k];
      }
    }
    b2.bind(gr.mix, std::move(mix));
  }
  b2.bind(gr.critic.input, std::move(x));
  b2.bind(gr.fake, fake);
  return run_step(gr.critic, b2, params_, graph::AdamConfig{config_.lr}, config_.bn_momentum);
}

double GirmState::generator_step() {
  Graphs& gr = graphs();
  Tensor<float> z({config_.batch, config_.z_dim, 1, 1});
  std::normal_distribution<float> normal;
  for (auto& v : z.data) v = normal(rng_);
  Bindings<float> b;
  b.bind(gr.gen.input, std::move(z));
  return run_step(gr.gen, b, params_, graph::AdamConfig{config_.lr}, config_.bn_momentum);
}

double GirmState::encoder_step(std::span<const float> batch) {
  Graphs& gr = graphs();
  Bindings<float> b;
  b.bind(gr.enc.input, as_tensor(batch, {config_.batch, 1, config_.canvas, config_.canvas}));
  return run_step(gr.enc, b, params_, graph::AdamConfig{config_.lr}, config_.bn_momentum);
}

std::vector<double> GirmState::residuals(std::span<const float> frames, int64_t n) {
  Graphs& gr = graphs();
  auto it = gr.scorers.find(n);
  if (it == gr.scorers.end()) {
    Scorer s;
    s.input = s.g.input("s", {n, 1, config_.canvas, config_.canvas});
    const NodeId z = nets::apply(s.g, enc_, params_, s.input, nets::Mode::eval).output;
    const NodeId rec = nets::apply(s.g, gen_, params_, z, nets::Mode::eval).output;
    s.residual = residual_(s.g, s.input, rec);
    it = gr.scorers.emplace(n, std::move(s)).first;
  }
  Scorer& s = it->second;
  Bindings<float> b;
  b.bind(s.input, as_tensor(frames, {n, 1, config_.canvas, config_.canvas}));
  const std::array out{s.residual};
  const Tensor<float> r = s.g.evaluate(out, b).at(s.residual);
  return std::vector<double>(r.data.begin(), r.data.end());
}

std::vector<float> GirmState::generate(std::span<const float> z, int64_t n) {
  Graphs& gr = graphs();
  auto it = gr.samplers.find(n);
  if (it == gr.samplers.end()) {
    Sampler s;
    s.input = s.g.input("z", {n, config_.z_dim, 1, 1});
    s.output = nets::apply(s.g, gen_, params_, s.input, nets::Mode::eval).output;
    it = gr.samplers.emplace(n, std::move(s)).first;
  }
  Sampler& s = it->second;
  Bindings<float> b;
  b.bind(s.input, as_tensor(z, {n, config_.z_dim, 1, 1}));
  const std::array out{s.output};
  return s.g.evaluate(out, b).at(s.output).data;
}

void GirmState::finish_phase(PhaseReport report) {
  last_ = std::move(report);
  ++phases_;
}

// ---------------------------------------------------------------------------
// training loops

namespace {

void check_ready(const GirmState& girm, const StateMemory& mem, int epochs, const char* who) {
  if (epochs < 1) throw std::invalid_argument(std::string(who) + ": epochs must be >= 1");
  if (!mem.full()) throw std::logic_error(std::string(who) + ": memory is not full");
  if (mem.frame_shape() != girm.frame_shape()) {
    throw std::invalid_argument(std::string(who) + ": memory frames " + to_string(mem.frame_shape()) +
                                " do not match the canvas " + to_string(girm.frame_shape()));
  }
  if (mem.size() < girm.config().batch) {
    throw std::invalid_argument(std::string(who) + ": memory smaller than one batch");
  }
}

// Shuffled minibatches of whole batches; the remainder of an epoch is dropped.
template <class F>
void for_each_batch(const StateMemory& mem, int64_t batch, std::mt19937_64& rng, F&& f) {
  std::vector<int64_t> order(static_cast<size_t>(mem.size()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<float> buf(static_cast<size_t>(batch * mem.frame_size()));
  const int64_t batches = mem.size() / batch;
  for (int64_t k = 0; k < batches; ++k) {
    for (int64_t i = 0; i < batch; ++i) {
      const auto fr = mem.frame(order[k * batch + i]);
      std::copy(fr.begin(), fr.end(), buf.begin() + i * mem.frame_size());
    }
    f(k, std::span<const float>(buf));
  }
}

[[noreturn]] void rethrow_with_position(const std::exception& e, const char* what, int epoch, int64_t batch) {
  throw GirmTrainingError(std::string(what) + " aborted at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch) + ": " + e.what());
}

}  // namespace

PhaseReport train_gan(GirmState& girm, const StateMemory& mem, int epochs) {
  check_ready(girm, mem, epochs, "train_gan");
  PhaseReport report;
  const int n_critic = girm.config().n_critic;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double critic_sum = 0.0;
    double gen_sum = 0.0;
    int64_t critic_steps = 0;
    int64_t gen_steps = 0;
    for_each_batch(mem, girm.config().batch, girm.rng(), [&](int64_t k, std::span<const float> real) {
      try {
        critic_sum += girm.critic_step(real);
        ++critic_steps;
        if ((k + 1) % n_critic == 0) {
          gen_sum += girm.generator_step();
          ++gen_steps;
        }
      } catch (const GirmTrainingError& e) {
        rethrow_with_position(e, "GAN training", epoch, k);
      }
    });
    report.critic_loss.push_back(critic_sum / static_cast<double>(std::max<int64_t>(critic_steps, 1)));
    report.generator_loss.push_back(gen_steps ? gen_sum / static_cast<double>(gen_steps) : NAN);
  }
  return report;
}

PhaseReport train_encoder(GirmState& girm, const StateMemory& mem, int epochs) {
  check_ready(girm, mem, epochs, "train_encoder");
  PhaseReport report;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double sum = 0.0;
    int64_t steps = 0;
    for_each_batch(mem, girm.config().batch, girm.rng(), [&](int64_t k, std::span<const float> batch) {
      try {
        sum += girm.encoder_step(batch);
        ++steps;
      } catch (const GirmTrainingError& e) {
        rethrow_with_position(e, "encoder training", epoch, k);
      }
    });
    report.encoder_loss.push_back(sum / static_cast<double>(std::max<int64_t>(steps, 1)));
  }
  return report;
}

double raw_intrinsic(GirmState& girm, std::span<const float> frame) {
  if (!girm.trained()) throw std::logic_error("raw_intrinsic: GIRM has not been trained");
  return girm.residuals(frame, 1).at(0);
}

std::vector<double> intrinsic_rewards(GirmState& girm, RewardNormalizer& norm,
                                      std::span<const float> frames, int64_t n,
                                      std::vector<double>* raw) {
  if (!girm.trained()) {
    if (raw) raw->assign(static_cast<size_t>(n), 0.0);
    return std::vector<double>(static_cast<size_t>(n), 0.0);
  }
  std::vector<double> r = girm.residuals(frames, n);
  if (raw) *raw = r;
  std::vector<double> out;
  out.reserve(r.size());
  for (double v : r) out.push_back(norm.normalize(v));
  return out;
}

double intrinsic_reward(GirmState& girm, RewardNormalizer& norm, std::span<const float> frame) {
  return intrinsic_rewards(girm, norm, frame, 1).at(0);
}

bool maybe_train(GirmState& girm, StateMemory& mem, RewardNormalizer& /*norm*/) {
  if (!mem.full()) return false;
  const GirmConfig& c = girm.config();
  const bool first = girm.phases() == 0;
  PhaseReport report = train_gan(girm, mem, first ? c.first_gan_epochs : c.fine_gan_epochs);
  report.encoder_loss =
      train_encoder(girm, mem, first ? c.first_encoder_epochs : c.fine_encoder_epochs).encoder_loss;
  mem.clear();
  girm.finish_phase(std::move(report));
  return true;
}

}  // namespace gex::girm
