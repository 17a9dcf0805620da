#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gex/agent/agent.hpp"
#include "gex/graph/gradcheck.hpp"

using namespace gex;
using namespace gex::agent;
using graph::Bindings;
using graph::Graph;

namespace {

nets::ProfileSpec tiny_profile() {
  nets::ProfileSpec p = nets::small_profile();
  p.ac_filters = {2, 3};
  p.ac_kernels = {4, 3};
  p.ac_strides = {2, 1};
  p.ac_dense = 6;
  return p;
}

girm::GirmConfig tiny_girm() {
  girm::GirmConfig c;
  c.z_dim = 8;
  c.width = 4;
  c.batch = 4;
  c.memory = 20;
  c.n_critic = 2;
  c.first_gan_epochs = 1;
  c.first_encoder_epochs = 1;
  c.fine_gan_epochs = 1;
  c.fine_encoder_epochs = 1;
  return c;
}

Rollout manual_rollout(int64_t T, int64_t K, const std::vector<double>& r,
                       const std::vector<uint8_t>& done, const std::vector<double>& values,
                       std::vector<double> bootstrap) {
  Rollout ro;
  ro.steps = T;
  ro.workers = K;
  ro.transitions.resize(static_cast<size_t>(T * K));
  for (size_t i = 0; i < ro.transitions.size(); ++i) {
    ro.transitions[i].r = r[i];
    ro.transitions[i].done = done[i];
    ro.transitions[i].value = values[i];
  }
  ro.bootstrap = std::move(bootstrap);
  for (int64_t k = 0; k < K; ++k) ro.has_bootstrap.push_back(!ro.at(T - 1, k).done);
  return ro;
}

}  // namespace

TEST_CASE("entropy: uniform logits give ln 5, a dominant logit gives ~0") {
  const std::vector<double> flat(5, 0.3);
  CHECK(softmax_entropy(flat) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Policy::Forward f;
  f.logits = {0, 0, 80, 0, 0};
  f.values = {0};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto r = act_from(f, 1, 5, rng, false);
    CHECK(r.actions[0] == 2);
    CHECK(r.entropy[0] < 1e-30);
  }
}

TEST_CASE("act is deterministic for a fixed seed and matches the softmax") {
  Policy::Forward f;
  f.logits = {0.1, -0.5, 0.7, 0.0, 0.2};
  f.values = {0.5};
  std::mt19937_64 a(7), b(7);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 20000; ++i) {
    const auto ra = act_from(f, 1, 5, a, false);
    const auto rb = act_from(f, 1, 5, b, false);
    CHECK(ra.actions == rb.actions);
    ++counts[static_cast<size_t>(ra.actions[0])];
  }
  double z = 0;
  for (double l : f.logits) z += std::exp(l);
  for (int k = 0; k < 5; ++k) {
    const double p = std::exp(f.logits[static_cast<size_t>(k)]) / z;
    CHECK(counts[static_cast<size_t>(k)] / 20000.0 == doctest::Approx(p).epsilon(0.05));
  }
}

TEST_CASE("uniform acting records ln(1/A) and keeps the values") {
  Policy::Forward f;
  f.logits = {5, 0, 0, 0, 0, 5, 0, 0, 0, 0};
  f.values = {1.5, -2.0};
  std::mt19937_64 rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto r = act_from(f, 2, 5, rng, true);
    CHECK(r.log_probs[0] == doctest::Approx(std::log(0.2)));
    CHECK(r.values == f.values);
    ++counts[static_cast<size_t>(r.actions[1])];
  }
  for (int c : counts) CHECK(c > 800);
}

TEST_CASE("non-finite logits are rejected") {
  Policy::Forward f;
  f.logits = {0, std::numeric_limits<double>::quiet_NaN(), 0, 0, 0};
  f.values = {0};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(act_from(f, 1, 5, rng, false), A2CError);
}

TEST_CASE("n-step returns: hand examples") {
  // gamma 0.5, rewards 1,1,1 ending in a terminal step
  auto ro = manual_rollout(3, 1, {1, 1, 1}, {0, 0, 1}, {0, 0, 0}, {99});
  auto r = compute_returns(ro, 0.5);
  CHECK(r.returns == std::vector<double>{1.75, 1.5, 1.0});

  // gamma 0 is myopic
  ro = manual_rollout(3, 1, {0.25, -2, 3}, {0, 0, 0}, {0, 0, 0}, {10});
  r = compute_returns(ro, 0.0);
  CHECK(r.returns == std::vector<double>{0.25, -2, 3});

  // bootstrapped tail
  ro = manual_rollout(2, 1, {1, 2}, {0, 0}, {0, 0}, {4});
  r = compute_returns(ro, 0.5);
  CHECK(r.returns == std::vector<double>{1 + 0.5 * (2 + 0.5 * 4), 2 + 0.5 * 4});

  // values equal to returns -> zero advantages
  ro = manual_rollout(3, 1, {1, 1, 1}, {0, 0, 1}, {1.75, 1.5, 1.0}, {0});
  r = compute_returns(ro, 0.5);
  for (double a : r.advantages) CHECK(a == 0.0);
}

TEST_CASE("return recursion holds within each worker's segment") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::bernoulli_distribution d(0.2);
  const int64_t T = 7, K = 3;
  std::vector<double> r, v;
  std::vector<uint8_t> done;
  for (int64_t i = 0; i < T * K; ++i) {
    r.push_back(n(rng));
    v.push_back(n(rng));
    done.push_back(d(rng));
  }
  const auto ro = manual_rollout(T, K, r, done, v, {n(rng), n(rng), n(rng)});
  const double g = 0.9;
  const auto ret = compute_returns(ro, g);
  for (int64_t k = 0; k < K; ++k) {
    for (int64_t t = 0; t < T; ++t) {
      const auto i = static_cast<size_t>(t * K + k);
      double expect;
      if (ro.transitions[i].done) {
        expect = r[i];
      } else if (t + 1 < T) {
        expect = r[i] + g * ret.returns[i + static_cast<size_t>(K)];
      } else {
        expect = r[i] + g * ro.bootstrap[static_cast<size_t>(k)];
      }
      CHECK(ret.returns[i] == expect);
      CHECK(ret.advantages[i] == ret.returns[i] - v[i]);
    }
  }
}

TEST_CASE("A2C loss gradient matches central differences (K=2, T=2, double)") {
  const auto spec = nets::actor_critic_spec({1, 16, 16}, 5, tiny_profile());
  graph::ParamStore<double> store;
  nets::init_params(spec, store, 11);
  // scale the policy head up so the policy term is not negligible
  for (auto& x : store.value("ac.pi.w").data) x *= 50;

  A2CConfig cfg;
  Graph<double> g;
  const auto n = build_a2c_loss(g, spec, store, 4, cfg);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Bindings<double> b;
  Tensor<double> obs({4, 1, 16, 16});
  for (auto& x : obs.data) x = u(rng);
  Tensor<double> onehot({4, 5});
  for (int i = 0; i < 4; ++i) onehot[i * 5 + (i * 3) % 5] = 1;
  b.bind(n.obs, obs);
  b.bind(n.onehot, onehot);
  b.bind(n.advantage, Tensor<double>({4}, {0.5, -1.0, 2.0, 0.25}));
  b.bind(n.ret, Tensor<double>({4}, {1.0, -0.5, 0.3, 2.0}));

  for (const auto& name : nets::trainable_names(store, "ac")) {
    const auto p = g.parameter(store, name);
    const double err = graph::finite_difference_check(g, n.total, p, b, 1e-5);
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("zero advantages leave only value and entropy terms") {
  const auto spec = nets::actor_critic_spec({1, 16, 16}, 5, tiny_profile());
  Policy policy(spec, 3);
  Rollout ro = manual_rollout(2, 2, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0});
  ro.obs.assign(4 * 16 * 16, 0.1f);
  Returns r;
  r.returns = {1, 1, 1, 1};
  r.advantages = {0, 0, 0, 0};
  A2CConfig cfg;
  const auto l = a2c_update(policy, ro, r, cfg);
  CHECK(l.policy == 0.0);
  CHECK(l.value > 0.0);
  CHECK(l.total == doctest::Approx(0.5 * l.value - 0.01 * l.entropy));

  // with the entropy coefficient at 0 the entropy term contributes nothing
  cfg.entropy_coef = 0;
  const auto l2 = a2c_update(policy, ro, r, cfg);
  CHECK(l2.total == doctest::Approx(0.5 * l2.value));
}

TEST_CASE("a2c update clips the global gradient norm and moves parameters") {
  const auto spec = nets::actor_critic_spec({1, 16, 16}, 5, tiny_profile());
  Policy policy(spec, 5);
  const auto before = policy.params();
  Rollout ro = manual_rollout(2, 2, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0});
  ro.obs.assign(4 * 16 * 16, 0.3f);
  Returns r;
  r.returns = {100, 100, 100, 100};
  r.advantages = {5, 5, 5, 5};
  const auto l = a2c_update(policy, ro, r, A2CConfig{});
  CHECK(l.grad_norm > 0.5);
  CHECK_FALSE(policy.params() == before);
}

TEST_CASE("rollout shape, reward identity and gating before the first GIRM phase") {
  envs::EnvConfig ec;
  ec.length = 40;
  envs::VecEnv venv(ec, 8);
  venv.vec_reset(1);
  const auto spec = nets::actor_critic_spec(venv.obs_shape(), 5, nets::small_profile());
  Policy policy(spec, 1);
  girm::GirmState girm(tiny_girm(), 3);
  girm::StateMemory mem(100, girm.frame_shape());
  girm::RewardNormalizer norm;
  std::mt19937_64 rng(9);
  int64_t frame = 0;
  A2CConfig cfg;
  const auto ro = collect_rollout(venv, policy, {&girm, &mem, &norm, &rng, &frame}, cfg);
  CHECK(ro.transitions.size() == 40u);
  CHECK(frame == 40);
  CHECK(mem.size() == 40);
  CHECK_FALSE(ro.girm_trained_at_start);
  for (const auto& t : ro.transitions) {
    CHECK(t.r_int == 0.0);
    CHECK(t.r - t.r_ext - t.r_int == 0.0);
    CHECK(t.log_prob == doctest::Approx(std::log(0.2)));
  }
  CHECK(ro.at(2, 5).frame == 2 * 8 + 5);
}

TEST_CASE("memory filling mid-rollout trains once and the rollout completes") {
  envs::EnvConfig ec;
  ec.kind = "rooms";
  envs::VecEnv venv(ec, 8);
  venv.vec_reset(2);
  const auto spec = nets::actor_critic_spec(venv.obs_shape(), 5, nets::small_profile());
  Policy policy(spec, 1);
  girm::GirmState girm(tiny_girm(), 3);
  girm::StateMemory mem(32, girm.frame_shape());  // full on the last worker of step 3
  girm::RewardNormalizer norm;
  std::mt19937_64 rng(9);
  int64_t frame = 0;
  A2CConfig cfg;
  auto ro = collect_rollout(venv, policy, {&girm, &mem, &norm, &rng, &frame}, cfg);
  CHECK(ro.trainings == 1);
  CHECK(ro.transitions.size() == 40u);
  CHECK(girm.phases() == 1);
  CHECK(mem.size() == 8);  // 40 stored, 32 consumed by training
  // rewards are gated for every step computed before the phase completed
  for (int64_t t = 0; t < 4; ++t) {
    for (int64_t k = 0; k < 8; ++k) CHECK(ro.at(t, k).r_int == 0.0);
  }
  // after training the intrinsic stream is live
  bool any = false;
  for (int64_t k = 0; k < 8; ++k) any = any || ro.at(4, k).raw_int != 0.0;
  CHECK(any);

  ro = collect_rollout(venv, policy, {&girm, &mem, &norm, &rng, &frame}, cfg);
  CHECK(ro.girm_trained_at_start);
  CHECK(ro.trainings == 1);
  CHECK(girm.phases() == 2);
}

TEST_CASE("extrinsic-only rollouts never touch GIRM state") {
  envs::EnvConfig ec;
  ec.length = 40;
  envs::VecEnv venv(ec, 4);
  venv.vec_reset(1);
  const auto spec = nets::actor_critic_spec(venv.obs_shape(), 5, nets::small_profile());
  Policy policy(spec, 1);
  std::mt19937_64 rng(9);
  int64_t frame = 0;
  A2CConfig cfg;
  cfg.rollout = 3;
  const auto ro = collect_rollout(venv, policy, {nullptr, nullptr, nullptr, &rng, &frame}, cfg);
  CHECK(ro.girm_trained_at_start);
  for (const auto& t : ro.transitions) {
    CHECK(t.r_int == 0.0);
    CHECK(t.raw_int == 0.0);
  }
}

TEST_CASE("a2c config validation") {
  A2CConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = A2CConfig{};
  c.rollout = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = A2CConfig{};
  c.entropy_coef = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
