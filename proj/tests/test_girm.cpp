#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gex/girm/girm.hpp"
#include "toy_frames.hpp"

using namespace gex;
using namespace gex::girm;
using graph::Bindings;
using graph::Graph;
using graph::NodeId;

namespace {

GirmConfig tiny_config() {
  GirmConfig c;
  c.canvas = 32;
  c.z_dim = 8;
  c.width = 4;
  c.batch = 4;
  c.memory = 8;
  c.n_critic = 2;
  c.first_gan_epochs = 3;
  c.first_encoder_epochs = 2;
  c.fine_gan_epochs = 1;
  c.fine_encoder_epochs = 1;
  return c;
}

std::vector<float> flat(float v, int64_t n = 32 * 32) { return std::vector<float>(n, v); }

}  // namespace

TEST_CASE("memory reports fullness on the last slot and rejects overflow") {
  StateMemory m(3, {1, 32, 32});
  const auto f = flat(0.f);
  CHECK_FALSE(m.store(f));
  CHECK_FALSE(m.store(f));
  CHECK(m.store(f));
  CHECK(m.full());
  CHECK_THROWS_AS(m.store(f), std::logic_error);
  m.clear();
  CHECK(m.size() == 0);
  CHECK_THROWS_AS(m.store(flat(0.f, 10)), std::invalid_argument);
}

TEST_CASE("normalizer: hand-evaluated updates") {
  RewardNormalizer n(0.01);
  CHECK(n.normalize(1.0) == 0.0);
  CHECK(n.ema() == 1.0);
  CHECK(n.emv() == 0.0);
  n.normalize(2.0);
  // ema = 0.01*2 + 0.99*1; emv = 0.01*(2-1.01)^2
  CHECK(n.ema() == doctest::Approx(1.01).epsilon(1e-15));
  CHECK(n.emv() == doctest::Approx(0.01 * 0.99 * 0.99).epsilon(1e-15));
  CHECK(n.steps() == 2);

  RewardNormalizer first;
  CHECK(first.normalize(5.0) == 0.0);
  CHECK(first.ema() == 5.0);

  RewardNormalizer constant;
  for (int i = 0; i < 1000; ++i) CHECK(constant.normalize(3.25) == 0.0);

  CHECK_THROWS_AS(constant.normalize(NAN), std::invalid_argument);
}

TEST_CASE("normalizer: scaling the stream leaves outputs unchanged when eps is zero") {
  RewardNormalizer a(0.01, 0.0);
  RewardNormalizer b(0.01, 0.0);
  std::mt19937 rng(3);
  std::normal_distribution<double> d(1.0, 2.0);
  for (int t = 0; t < 500; ++t) {
    const double r = d(rng);
    const double x = a.normalize(r);
    const double y = b.normalize(7.5 * r);
    CHECK(b.emv() >= 0.0);
    if (t >= 1) CHECK(x == doctest::Approx(y).epsilon(1e-9));
  }
}

TEST_CASE("mse residual: perfect inversion and a uniform offset") {
  Graph<float> g;
  const NodeId s = g.input("s", {2, 1, 4, 4});
  const NodeId r = g.input("r", {2, 1, 4, 4});
  const NodeId res = mse_residual(g, s, r);
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  Tensor<float> sv({2, 1, 4, 4});
  for (auto& v : sv.data) v = u(rng);
  Tensor<float> shifted = sv;
  for (auto& v : shifted.data) v += 0.25f;
  const std::array out{res};
  {
    Bindings<float> b;
    b.bind(s, sv);
    b.bind(r, sv);
    for (float v : Tensor<float>(g.evaluate(out, b).at(res)).data) CHECK(v == 0.f);
  }
  {
    Bindings<float> b;
    b.bind(s, sv);
    b.bind(r, shifted);
    const auto vals = g.evaluate(out, b);
    for (float v : vals.at(res).data) CHECK(v == doctest::Approx(0.0625f).epsilon(1e-5));
  }
}

TEST_CASE("encoder objective: lambda = 0 is the pixel term and a constant offset gives c^2") {
  Graph<float> g;
  const NodeId s = g.input("s", {3, 1, 4, 4});
  const NodeId rec = g.input("rec", {3, 1, 4, 4});
  const NodeId fs = g.input("fs", {3, 6});
  const NodeId fr = g.input("fr", {3, 6});
  const NodeId l0 = encoder_objective(g, s, rec, fs, fr, 0.0);
  const NodeId l1 = encoder_objective(g, s, rec, fs, fr, 1.0);
  Bindings<float> b;
  b.bind(s, Tensor<float>({3, 1, 4, 4}, 0.1f));
  b.bind(rec, Tensor<float>({3, 1, 4, 4}, 0.4f));
  b.bind(fs, Tensor<float>({3, 6}, 1.f));
  b.bind(fr, Tensor<float>({3, 6}, 3.f));
  const std::array out{l0, l1};
  const auto v = g.evaluate(out, b);
  CHECK(v.scalar(l0) == doctest::Approx(0.09f).epsilon(1e-5));
  CHECK(v.scalar(l1) == doctest::Approx(0.09f + 4.f).epsilon(1e-5));
  Bindings<float> same;
  same.bind(s, Tensor<float>({3, 1, 4, 4}, 0.3f));
  same.bind(rec, Tensor<float>({3, 1, 4, 4}, 0.3f));
  same.bind(fs, Tensor<float>({3, 6}, 2.f));
  same.bind(fr, Tensor<float>({3, 6}, 2.f));
  CHECK(g.evaluate(out, same).scalar(l1) == 0.f);
}

TEST_CASE("intrinsic reward is gated until the first training phase") {
  GirmState girm(tiny_config(), 1);
  RewardNormalizer norm;
  CHECK_FALSE(girm.trained());
  const auto f = flat(0.3f);
  CHECK(intrinsic_reward(girm, norm, f) == 0.0);
  CHECK(norm.steps() == 0);
  CHECK_THROWS_AS(raw_intrinsic(girm, f), std::logic_error);
}

TEST_CASE("maybe_train: schedule, clearing and epoch counts") {
  GirmConfig c = tiny_config();
  GirmState girm(c, 2);
  StateMemory mem(c.memory, girm.frame_shape());
  RewardNormalizer norm;
  std::mt19937 rng(5);
  std::vector<float> frame(32 * 32);
  auto fill = [&] {
    bool full = false;
    while (!full) {
      for (auto& v : frame) v = rng() % 2 ? 0.5f : -0.5f;
      full = mem.store(frame);
    }
  };
  CHECK_FALSE(maybe_train(girm, mem, norm));
  fill();
  CHECK(maybe_train(girm, mem, norm));
  CHECK(mem.size() == 0);
  CHECK(girm.trained());
  CHECK(girm.phases() == 1);
  CHECK(girm.last_report().critic_loss.size() == static_cast<size_t>(c.first_gan_epochs));
  CHECK(girm.last_report().encoder_loss.size() == static_cast<size_t>(c.first_encoder_epochs));
  fill();
  CHECK(maybe_train(girm, mem, norm));
  CHECK(girm.phases() == 2);
  CHECK(girm.last_report().critic_loss.size() == static_cast<size_t>(c.fine_gan_epochs));
  CHECK(girm.last_report().encoder_loss.size() == static_cast<size_t>(c.fine_encoder_epochs));
  CHECK(norm.steps() == 0);

  // Frozen model: raw reward is a pure function of the frame.
  const double a = raw_intrinsic(girm, frame);
  const double b = raw_intrinsic(girm, frame);
  CHECK(a == b);
  CHECK(std::isfinite(a));
  // A frame whose raw reward equals the current mean standardizes to ~0.
  RewardNormalizer n2;
  n2.normalize(a);
  n2.normalize(a + 1.0);
  const double ema = n2.ema();
  (void)ema;
  CHECK(intrinsic_reward(girm, n2, frame) < 0.0);
}

TEST_CASE("default epoch schedule is 20/10 then 2/2") {
  GirmConfig c;
  CHECK(c.first_gan_epochs == 20);
  CHECK(c.first_encoder_epochs == 10);
  CHECK(c.fine_gan_epochs == 2);
  CHECK(c.fine_encoder_epochs == 2);
  CHECK(c.lambda_gp == 10.0);
  CHECK(c.n_critic == 5);
  CHECK(c.batch == 64);
  CHECK(c.lr == 1e-4);
}

TEST_CASE("training rejects bad preconditions") {
  GirmConfig c = tiny_config();
  GirmState girm(c, 3);
  StateMemory mem(c.memory, girm.frame_shape());
  CHECK_THROWS_AS(train_gan(girm, mem, 1), std::logic_error);
  while (!mem.store(flat(0.f))) {
  }
  CHECK_THROWS_AS(train_gan(girm, mem, 0), std::invalid_argument);
  CHECK_THROWS_AS(train_encoder(girm, mem, 0), std::invalid_argument);
  GirmConfig bad = c;
  bad.n_critic = 0;
  CHECK_THROWS_AS(GirmState(bad, 1), std::invalid_argument);
}

TEST_CASE("batch-norm critic cannot carry a gradient penalty") {
  GirmConfig c = tiny_config();
  c.critic_norm = nets::Norm::batch;
  GirmState girm(c, 4);
  CHECK_THROWS_AS(girm.critic_step(flat(0.f, 4 * 32 * 32)), graph::GraphError);
  GirmConfig no_gp = c;
  no_gp.lambda_gp = 0.0;
  GirmState ok(no_gp, 4);
  CHECK(std::isfinite(ok.critic_step(flat(0.f, 4 * 32 * 32))));
}

TEST_CASE("linear critic: the penalty is (|w| - 1)^2 at every interpolate") {
  // D(x) = sum(w * x): the input gradient is w wherever it is taken.
  Graph<double> g;
  const NodeId w = g.input("w", {1, 1, 4, 4});
  const NodeId x = g.input("x", {1, 1, 4, 4});
  const NodeId d = g.sum(g.mul(w, x));
  const std::array wrt{x};
  const NodeId grad = g.differentiate(d, wrt).at(x);
  const NodeId pen = g.square(g.add_scalar(g.l2_norm(g.reshape(grad, {16})), -1.0));
  std::mt19937 rng(8);
  std::normal_distribution<double> nd;
  Tensor<double> wv({1, 1, 4, 4});
  double nw = 0;
  for (auto& v : wv.data) {
    v = nd(rng);
    nw += v * v;
  }
  nw = std::sqrt(nw);
  for (int i = 0; i < 5; ++i) {
    Tensor<double> xv({1, 1, 4, 4});
    for (auto& v : xv.data) v = nd(rng);
    Bindings<double> b;
    b.bind(w, wv);
    b.bind(x, xv);
    const std::array out{pen};
    CHECK(g.evaluate(out, b).scalar(pen) == doctest::Approx((nw - 1) * (nw - 1)).epsilon(1e-12));
  }
}

TEST_CASE("critic loss falls against a frozen generator without penalty") {
  // Real frames are bright, the untrained generator's output is near zero:
  // a linearly separable pair the critic should learn to split.
  int passes = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    GirmConfig c = tiny_config();
    c.lambda_gp = 0.0;
    c.batch = 8;
    c.memory = 8;
    c.lr = 1e-3;
    GirmState girm(c, seed);
    const auto real = flat(0.9f, 8 * 32 * 32);
    double early = 0, late = 0;
    for (int i = 0; i < 40; ++i) {
      const double l = girm.critic_step(real);
      if (i < 5) early += l;
      if (i >= 35) late += l;
    }
    if (late < early) ++passes;
  }
  CHECK(passes >= 4);
}

TEST_CASE("novelty separation on a light corner-dot corpus") {
  // Reduced-size version of the acceptance experiment: one seed, smaller
  // memory and fewer epochs.
  GirmConfig c;
  c.width = 8;
  c.memory = 512;
  c.batch = 32;
  c.first_gan_epochs = 10;
  c.first_encoder_epochs = 10;
  GirmState girm(c, 11);
  StateMemory mem(c.memory, girm.frame_shape());
  std::mt19937_64 rng(11);
  while (!mem.store(toy::corner_dot(rng, 32))) {
  }
  RewardNormalizer norm;
  REQUIRE(maybe_train(girm, mem, norm));
  double corner = 0, center = 0;
  for (int i = 0; i < 64; ++i) {
    corner += raw_intrinsic(girm, toy::corner_dot(rng, 32));
    center += raw_intrinsic(girm, toy::center_dot(rng, 32));
  }
  MESSAGE("corner " << corner / 64 << " center " << center / 64);
  CHECK(center > corner);
}
