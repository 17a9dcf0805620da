#include "gex/agent/agent.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace gex::agent {

using graph::Bindings;
using graph::Graph;
using graph::NodeId;
using graph::Values;

void A2CConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0, 1)");
  if (rollout < 1) throw std::invalid_argument("rollout length must be >= 1");
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  if (!(entropy_coef >= 0) || !(value_coef >= 0)) {
    throw std::invalid_argument("loss coefficients must be >= 0");
  }
  if (!(max_grad_norm > 0)) throw std::invalid_argument("gradient clip must be positive");
  if (!(lr > 0)) throw std::invalid_argument("a2c lr must be positive");
}

template <class T>
A2CLossNodes build_a2c_loss(Graph<T>& g, const nets::ActorCriticSpec& spec,
                            const graph::ParamStore<T>& store, int64_t batch,
                            const A2CConfig& config) {
  A2CLossNodes n;
  Shape obs{batch};
  obs.insert(obs.end(), spec.trunk.input.begin(), spec.trunk.input.end());
  n.obs = g.input("obs", obs);
  n.onehot = g.input("onehot", {batch, spec.n_actions});
  n.advantage = g.input("advantage", {batch});
  n.ret = g.input("return", {batch});
  const auto ac = nets::apply(g, spec, store, n.obs);
  n.logits = ac.logits;
  n.value = ac.value;

  const NodeId logp = g.log_softmax(ac.logits);
  const NodeId logp_a = g.sum_rows(g.mul(logp, n.onehot));
  n.policy = g.scale(g.mean(g.mul(n.advantage, logp_a)), -1.0);
  n.value_loss = g.mean(g.square(g.sub(n.ret, ac.value)));
  // H = -sum p log p
  n.entropy = g.scale(g.mean(g.sum_rows(g.mul(g.exp(logp), logp))), -1.0);
  n.total = g.add(g.add(n.policy, g.scale(n.value_loss, config.value_coef)),
                  g.scale(n.entropy, -config.entropy_coef));
  return n;
}

template A2CLossNodes build_a2c_loss<float>(Graph<float>&, const nets::ActorCriticSpec&,
                                            const graph::ParamStore<float>&, int64_t,
                                            const A2CConfig&);
template A2CLossNodes build_a2c_loss<double>(Graph<double>&, const nets::ActorCriticSpec&,
                                             const graph::ParamStore<double>&, int64_t,
                                             const A2CConfig&);

// ---------------------------------------------------------------------------
// Policy

namespace {

struct ForwardGraph {
  Graph<float> g;
  NodeId obs;
  nets::AppliedActorCritic out;
};

struct UpdateGraph {
  Graph<float> g;
  A2CLossNodes nodes;
  A2CConfig config;
  std::vector<std::pair<std::string, NodeId>> grads;
};

}  // namespace

struct Policy::Graphs {
  std::map<int64_t, ForwardGraph> forward;
  std::map<int64_t, UpdateGraph> update;
};

Policy::Policy(nets::ActorCriticSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  nets::init_params(spec_, params_, seed);
}

Policy::~Policy() = default;

Policy::Graphs& Policy::graphs() {
  if (!graphs_) graphs_ = std::make_unique<Graphs>();
  return *graphs_;
}

Policy::Forward Policy::forward(std::span<const float> obs, int64_t n) {
  if (static_cast<int64_t>(obs.size()) != n * obs_size()) {
    throw std::invalid_argument("policy: " + std::to_string(obs.size()) + " values for " +
                                std::to_string(n) + " observations of " +
                                to_string(spec_.trunk.input));
  }
  auto& fg = graphs().forward;
  auto it = fg.find(n);
  if (it == fg.end()) {
    it = fg.try_emplace(n).first;
    ForwardGraph& f = it->second;
    Shape s{n};
    s.insert(s.end(), spec_.trunk.input.begin(), spec_.trunk.input.end());
    f.obs = f.g.input("obs", s);
    f.out = nets::apply(f.g, spec_, params_, f.obs);
  }
  ForwardGraph& f = it->second;
  Shape s{n};
  s.insert(s.end(), spec_.trunk.input.begin(), spec_.trunk.input.end());
  Bindings<float> b;
  b.bind(f.obs, Tensor<float>(s, std::vector<float>(obs.begin(), obs.end())));
  const std::array out{f.out.logits, f.out.value};
  const Values<float> v = f.g.evaluate(out, b);
  Forward r;
  r.logits.assign(v.at(f.out.logits).data.begin(), v.at(f.out.logits).data.end());
  r.values.assign(v.at(f.out.value).data.begin(), v.at(f.out.value).data.end());
  return r;
}

// ---------------------------------------------------------------------------
// acting

double softmax_entropy(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  const double logz = mx + std::log(z);
  double h = 0;
  for (double l : logits) {
    const double lp = l - logz;
    const double p = std::exp(lp);
    if (p > 0) h -= p * lp;
  }
  return h;
}

ActResult act_from(const Policy::Forward& f, int64_t n, int64_t n_actions, std::mt19937_64& rng,
                   bool uniform) {
  ActResult r;
  r.actions.resize(static_cast<size_t>(n));
  r.log_probs.resize(static_cast<size_t>(n));
  r.entropy.resize(static_cast<size_t>(n));
  r.values = f.values;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> uni(0, static_cast<int>(n_actions) - 1);
  for (int64_t i = 0; i < n; ++i) {
    const std::span<const double> l(f.logits.data() + i * n_actions, static_cast<size_t>(n_actions));
    if (!std::all_of(l.begin(), l.end(), [](double x) { return std::isfinite(x); }) ||
        !std::isfinite(f.values[static_cast<size_t>(i)])) {
      throw A2CError("non-finite policy output for observation " + std::to_string(i));
    }
    r.entropy[static_cast<size_t>(i)] = softmax_entropy(l);
    if (uniform) {
      r.actions[static_cast<size_t>(i)] = uni(rng);
      r.log_probs[static_cast<size_t>(i)] = -std::log(static_cast<double>(n_actions));
      continue;
    }
    const double mx = *std::max_element(l.begin(), l.end());
    double z = 0;
    for (double x : l) z += std::exp(x - mx);
    // inverse-CDF sample
    const double target = u01(rng) * z;
    double acc = 0;
    int64_t a = n_actions - 1;
    for (int64_t j = 0; j < n_actions; ++j) {
      acc += std::exp(l[static_cast<size_t>(j)] - mx);
      if (target < acc) {
        a = j;
        break;
      }
    }
    r.actions[static_cast<size_t>(i)] = static_cast<int>(a);
    r.log_probs[static_cast<size_t>(i)] = l[static_cast<size_t>(a)] - mx - std::log(z);
  }
  return r;
}

ActResult act(Policy& policy, std::span<const float> obs, int64_t n, std::mt19937_64& rng,
              bool uniform) {
  return act_from(policy.forward(obs, n), n, policy.n_actions(), rng, uniform);
}

// ---------------------------------------------------------------------------
// rollouts

Rollout collect_rollout(envs::VecEnv& venv, Policy& policy, RolloutContext ctx,
                        const A2CConfig& config) {
  if (!ctx.rng || !ctx.frame) throw std::invalid_argument("rollout: rng and frame counter required");
  if (ctx.girm && (!ctx.memory || !ctx.normalizer)) {
    throw std::invalid_argument("rollout: GIRM needs a memory and a normalizer");
  }
  const int64_t K = venv.workers();
  const int64_t T = config.rollout;
  const int64_t obs_size = numel(venv.obs_shape());
  if (obs_size != policy.obs_size()) {
    throw std::invalid_argument("rollout: env observation " + to_string(venv.obs_shape()) +
                                " does not match policy input " + to_string(policy.spec().trunk.input));
  }
  const int64_t frame_size = venv.canvas() * venv.canvas();

  Rollout ro;
  ro.steps = T;
  ro.workers = K;
  ro.transitions.resize(static_cast<size_t>(T * K));
  ro.obs.resize(static_cast<size_t>(T * K * obs_size));
  ro.girm_trained_at_start = !ctx.girm || ctx.girm->trained();

  for (int64_t t = 0; t < T; ++t) {
    const std::vector<float>& obs = venv.observation();
    std::copy(obs.begin(), obs.end(), ro.obs.begin() + t * K * obs_size);
    const bool uniform = config.warmup && ctx.girm && !ctx.girm->trained();
    const ActResult a = act(policy, obs, K, *ctx.rng, uniform);
    const envs::VecStep s = venv.vec_step(a.actions);

    std::vector<double> r_int(static_cast<size_t>(K), 0.0), raw(static_cast<size_t>(K), 0.0);
    if (ctx.girm) {
      r_int = girm::intrinsic_rewards(*ctx.girm, *ctx.normalizer, s.frames, K, &raw);
    }
    for (int64_t k = 0; k < K; ++k) {
      Transition& tr = ro.transitions[static_cast<size_t>(t * K + k)];
      tr.action = a.actions[static_cast<size_t>(k)];
      tr.r_ext = s.reward[static_cast<size_t>(k)];
      tr.r_int = r_int[static_cast<size_t>(k)];
      tr.r = tr.r_ext + tr.r_int;
      tr.value = a.values[static_cast<size_t>(k)];
      tr.log_prob = a.log_probs[static_cast<size_t>(k)];
      tr.done = s.done[static_cast<size_t>(k)];
      tr.worker = k;
      tr.frame = *ctx.frame + k;
      tr.raw_int = raw[static_cast<size_t>(k)];
      tr.info = s.info[static_cast<size_t>(k)];
    }
    *ctx.frame += K;

    if (ctx.girm) {
      for (int64_t k = 0; k < K; ++k) {
        const std::span<const float> f(s.frames.data() + k * frame_size, static_cast<size_t>(frame_size));
        if (ctx.memory->store(f)) {
          // the policy does not change while GIRM trains
          girm::maybe_train(*ctx.girm, *ctx.memory, *ctx.normalizer);
          ro.reports.push_back(ctx.girm->last_report());
          ++ro.trainings;
        }
      }
    }
  }

  const Policy::Forward tail = policy.forward(venv.observation(), K);
  ro.bootstrap = tail.values;
  ro.has_bootstrap.resize(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) ro.has_bootstrap[static_cast<size_t>(k)] = !ro.at(T - 1, k).done;
  return ro;
}

Returns compute_returns(const Rollout& rollout, double gamma) {
  const int64_t T = rollout.steps, K = rollout.workers;
  Returns r;
  r.returns.resize(static_cast<size_t>(T * K));
  r.advantages.resize(static_cast<size_t>(T * K));
  for (int64_t k = 0; k < K; ++k) {
    double next = rollout.has_bootstrap[static_cast<size_t>(k)] ? rollout.bootstrap[static_cast<size_t>(k)] : 0.0;
    for (int64_t t = T - 1; t >= 0; --t) {
      const Transition& tr = rollout.at(t, k);
      const double ret = tr.done ? tr.r : tr.r + gamma * next;
      r.returns[static_cast<size_t>(t * K + k)] = ret;
      r.advantages[static_cast<size_t>(t * K + k)] = ret - tr.value;
      next = ret;
    }
  }
  return r;
}

Losses a2c_update(Policy& policy, const Rollout& rollout, const Returns& returns,
                  const A2CConfig& config) {
  const int64_t B = rollout.steps * rollout.workers;
  const int64_t A = policy.n_actions();
  auto& ug = policy.graphs().update;
  auto it = ug.find(B);
  if (it == ug.end() || it->second.config.value_coef != config.value_coef ||
      it->second.config.entropy_coef != config.entropy_coef) {
    if (it != ug.end()) ug.erase(it);
    it = ug.try_emplace(B).first;
    UpdateGraph& u = it->second;
    u.config = config;
    u.nodes = build_a2c_loss(u.g, policy.spec(), policy.params(), B, config);
    std::vector<NodeId> wrt;
    const auto names = nets::trainable_names(policy.params(), policy.spec().trunk.name);
    for (const auto& n : names) wrt.push_back(u.g.parameter(policy.params(), n));
    const graph::GradientMap gm = u.g.differentiate(u.nodes.total, wrt);
    for (size_t i = 0; i < names.size(); ++i) u.grads.emplace_back(names[i], gm.at(wrt[i]));
  }
  UpdateGraph& u = it->second;

  Shape obs{B};
  obs.insert(obs.end(), policy.spec().trunk.input.begin(), policy.spec().trunk.input.end());
  Tensor<float> onehot({B, A}), adv({B}), ret({B});
  for (int64_t i = 0; i < B; ++i) {
    onehot[i * A + rollout.transitions[static_cast<size_t>(i)].action] = 1.f;
    adv[i] = static_cast<float>(returns.advantages[static_cast<size_t>(i)]);
    ret[i] = static_cast<float>(returns.returns[static_cast<size_t>(i)]);
  }
  Bindings<float> b;
  b.bind(u.nodes.obs, Tensor<float>(obs, rollout.obs));
  b.bind(u.nodes.onehot, std::move(onehot));
  b.bind(u.nodes.advantage, std::move(adv));
  b.bind(u.nodes.ret, std::move(ret));

  std::vector<NodeId> out{u.nodes.total, u.nodes.policy, u.nodes.value_loss, u.nodes.entropy};
  for (const auto& [name, node] : u.grads) out.push_back(node);
  const Values<float> v = u.g.evaluate(out, b);

  Losses l;
  l.total = v.scalar(u.nodes.total);
  l.policy = v.scalar(u.nodes.policy);
  l.value = v.scalar(u.nodes.value_loss);
  l.entropy = v.scalar(u.nodes.entropy);
  auto describe = [&] {
    std::ostringstream os;
    os << "total=" << l.total << " policy=" << l.policy << " value=" << l.value
       << " entropy=" << l.entropy;
    return os.str();
  };
  if (!std::isfinite(l.total)) throw A2CError("non-finite a2c loss: " + describe());

  std::map<std::string, Tensor<float>> grads;
  double sq = 0;
  for (const auto& [name, node] : u.grads) {
    const Tensor<float>& gt = v.at(node);
    for (float x : gt.data) sq += static_cast<double>(x) * x;
    grads.emplace(name, gt);
  }
  l.grad_norm = std::sqrt(sq);
  if (!std::isfinite(l.grad_norm)) throw A2CError("non-finite a2c gradient: " + describe());
  if (l.grad_norm > config.max_grad_norm) {
    const auto s = static_cast<float>(config.max_grad_norm / l.grad_norm);
    for (auto& [name, gt] : grads) {
      for (float& x : gt.data) x *= s;
    }
  }
  graph::adam_update(policy.params(), grads, graph::AdamConfig{config.lr});
  return l;
}

}  // namespace gex::agent
