// Acceptance suite: one PASS/FAIL line per criterion.
//
//   gex_acceptance [--runs DIR] [--only 1,3,8]
//
// Criteria 6 and 7 evaluate the cached end-to-end run directories under
// --runs (produced by scripts/run_e2e.sh); every other criterion is computed
// here from scratch. Exit status is non-zero if any selected criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gex/agent/agent.hpp"
#include "gex/girm/girm.hpp"
#include "gex/graph/gradcheck.hpp"
#include "gex/graph/graph.hpp"
#include "gex/harness/harness.hpp"
#include "toy_frames.hpp"

using namespace gex;
using graph::Bindings;
using graph::NodeId;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// pinned tolerances

constexpr double kGradRelTol = 1e-5;        // 1: analytic vs central differences
constexpr double kGradTimeLimit = 60.0;     // 1: seconds
constexpr double kPenaltyRelTol = 1e-6;     // 2: hand-derived penalty gradient
constexpr double kExactRelTol = 1e-12;      // 3: "exact to rounding"
constexpr double kNormMeanBound = 0.3;      // 4
constexpr double kNormStdLo = 0.5, kNormStdHi = 2.0;
constexpr double kNormTimeLimit = 5.0;
constexpr double kNoveltyRatio = 2.0;       // 5
constexpr int kNoveltySeedsNeeded = 4;      // of 5
constexpr double kNoveltyTimeLimit = 300.0; // per seed
constexpr int64_t kNoveltyCorpus = 4096;
constexpr int kNoveltyHeldOut = 200;
constexpr int64_t kE2EFrames = 500000;      // 6, 7
constexpr int64_t kScrollerLength = 200;
constexpr double kE2ETimeLimit = 1800.0;    // per run
constexpr double kKeyScore = 100.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmtd(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

using G = graph::Graph<double>;
using V = std::vector<NodeId>;

Tensor<double> away_from_zero(const Shape& s, std::mt19937& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(s);
  for (auto& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Worst relative error of d/dx sum(R * f(x...)) over every input.
double op_error(const std::vector<Shape>& shapes, const std::function<NodeId(G&, V&)>& f,
                bool positive = false) {
  std::mt19937 rng(11);
  G g;
  V ins;
  Bindings<double> b;
  for (size_t i = 0; i < shapes.size(); ++i) {
    ins.push_back(g.input("x" + std::to_string(i), shapes[i]));
    auto t = away_from_zero(shapes[i], rng);
    if (positive) {
      for (auto& v : t.data) v = std::abs(v) + 0.3;
    }
    b.bind(ins.back(), t);
  }
  const NodeId y = f(g, ins);
  const NodeId r = g.constant(away_from_zero(g.shape(y), rng));
  const NodeId s = g.shape(y).empty() ? g.mul(y, r) : g.sum(g.mul(y, r));
  double worst = 0;
  for (NodeId x : ins) worst = std::max(worst, graph::finite_difference_check(g, s, x, b, 1e-6));
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> errs;
  auto add = [&](const std::string& name, double e) { errs.emplace_back(name, e); };

  add("add", op_error({{3, 4}, {3, 4}}, [](G& g, V& x) { return g.add(x[0], x[1]); }));
  add("sub", op_error({{3, 4}, {3, 4}}, [](G& g, V& x) { return g.sub(x[0], x[1]); }));
  add("mul", op_error({{3, 4}, {3, 4}}, [](G& g, V& x) { return g.mul(x[0], x[1]); }));
  add("scale", op_error({{5}}, [](G& g, V& x) { return g.scale(x[0], -1.5); }));
  add("add_scalar", op_error({{5}}, [](G& g, V& x) { return g.add_scalar(x[0], 0.3); }));
  add("square", op_error({{5}}, [](G& g, V& x) { return g.square(x[0]); }));
  add("sqrt", op_error({{5}}, [](G& g, V& x) { return g.sqrt(x[0]); }, true));
  add("recip", op_error({{5}}, [](G& g, V& x) { return g.recip(x[0]); }));
  add("exp", op_error({{5}}, [](G& g, V& x) { return g.exp(x[0]); }));
  add("tanh", op_error({{5}}, [](G& g, V& x) { return g.tanh(x[0]); }));
  add("relu", op_error({{5}}, [](G& g, V& x) { return g.relu(x[0]); }));
  add("leaky_relu", op_error({{5}}, [](G& g, V& x) { return g.leaky_relu(x[0], 0.01); }));
  add("sum", op_error({{2, 3}}, [](G& g, V& x) { return g.sum(x[0]); }));
  add("mean", op_error({{2, 3}}, [](G& g, V& x) { return g.mean(x[0]); }));
  add("broadcast_scalar", op_error({{}}, [](G& g, V& x) { return g.broadcast_scalar(x[0], {2, 2}); }));
  add("sum_rows", op_error({{2, 3, 2}}, [](G& g, V& x) { return g.sum_rows(x[0]); }));
  add("broadcast_rows", op_error({{3}}, [](G& g, V& x) { return g.broadcast_rows(x[0], {3, 2}); }));
  add("sum_channels", op_error({{2, 3, 2, 2}}, [](G& g, V& x) { return g.sum_channels(x[0]); }));
  add("broadcast_channels",
      op_error({{3}}, [](G& g, V& x) { return g.broadcast_channels(x[0], {2, 3, 2, 2}); }));
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      const Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      add("matmul", op_error({sa, sb}, [=](G& g, V& x) { return g.matmul(x[0], x[1], ta, tb); }));
    }
  }
  add("conv2d", op_error({{2, 2, 7, 7}, {3, 2, 3, 3}}, [](G& g, V& x) { return g.conv2d(x[0], x[1], 2, 1); }));
  add("conv_transpose2d", op_error({{2, 3, 3, 3}, {3, 2, 4, 4}}, [](G& g, V& x) {
        return g.conv_transpose2d(x[0], x[1], 2, 1, 6, 6);
      }));
  add("conv2d_weight_grad", op_error({{2, 2, 7, 7}, {2, 3, 4, 4}}, [](G& g, V& x) {
        return g.conv2d_weight_grad(x[0], x[1], 2, 1, 3);
      }));
  add("batch_norm", op_error({{4, 2, 3, 3}}, [](G& g, V& x) { return g.batch_norm(x[0], 1e-5); }));
  add("layer_norm", op_error({{3, 2, 2, 2}}, [](G& g, V& x) { return g.layer_norm(x[0], 1e-5); }));
  add("row_inv_std", op_error({{3, 5}}, [](G& g, V& x) { return g.row_inv_std(x[0], 1e-5); }));
  add("log_softmax", op_error({{3, 5}}, [](G& g, V& x) { return g.log_softmax(x[0]); }));
  add("l2_norm", op_error({{3, 5}}, [](G& g, V& x) { return g.l2_norm(x[0]); }));
  add("reshape", op_error({{2, 6}}, [](G& g, V& x) { return g.reshape(x[0], {3, 4}); }));
  add("concat", op_error({{2, 3}, {1, 3}}, [](G& g, V& x) {
        const std::array parts{x[0], x[1]};
        return g.concat(parts);
      }));
  add("slice", op_error({{5, 2}}, [](G& g, V& x) { return g.slice(x[0], 1, 3); }));

  // random 3-layer networks, all weights as inputs; smooth activations so the
  // central differences never straddle a kink
  for (unsigned seed = 1; seed <= 5; ++seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> ch(2, 4);
    const int c1 = ch(rng), c2 = ch(rng);
    add("3-layer net seed " + std::to_string(seed), op_error({{2, 1, 8, 8}, {c1, 1, 4, 4}, {c2, c1, 3, 3}, {c2 * 4, 3}},
                                [c2](G& g, V& x) {
                                  NodeId h = g.tanh(g.conv2d(x[0], x[1], 2, 1));
                                  h = g.tanh(g.layer_norm(g.conv2d(h, x[2], 1, 0), 1e-5));
                                  h = g.reshape(h, {2, c2 * 4});
                                  return g.log_softmax(g.matmul(h, x[3]));
                                }));
  }

  // gradient-penalty graph: a conv critic, its input gradient at an
  // interpolate, and the penalty differentiated w.r.t. the critic weights
  add("gradient penalty (double backward)",
      op_error({{2, 1, 8, 8}, {3, 1, 4, 4}, {27, 1}}, [](G& g, V& x) {
        NodeId h = g.conv2d(x[0], x[1], 2, 0);
        h = g.leaky_relu(g.layer_norm(h, 1e-5), 0.2);
        const NodeId d = g.sum(g.matmul(g.reshape(h, {2, 27}), x[2]));
        const std::array wrt{x[0]};
        const NodeId gx = g.differentiate(d, wrt).at(x[0]);
        const NodeId n = g.l2_norm(g.reshape(gx, {2, 64}));
        return g.mean(g.square(g.add_scalar(n, -1.0)));
      }));

  double worst = 0;
  std::string worst_name;
  for (const auto& [n, e] : errs) {
    if (e > worst) {
      worst = e;
      worst_name = n;
    }
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.pass = worst < kGradRelTol && t < kGradTimeLimit;
  o.detail = std::to_string(errs.size()) + " checks, worst rel err " + fmtd("%.2e", worst) + " (" +
             worst_name + "), " + fmtd("%.1f s", t);
  return o;
}

// ---------------------------------------------------------------------------
// 2. linear-critic gradient penalty

Outcome criterion_linear_penalty() {
  G g;
  const NodeId w = g.input("w", {1, 6});
  const NodeId x = g.input("x", {6, 1});
  const NodeId d = g.sum(g.matmul(w, x));
  const std::array wx{x};
  const NodeId gx = g.differentiate(d, wx).at(x);
  const NodeId penalty = g.square(g.add_scalar(g.l2_norm(g.reshape(gx, {6})), -1.0));
  const std::array ww{w};
  const NodeId gw = g.differentiate(penalty, ww).at(w);
  std::mt19937 rng(21);
  double worst_p = 0, worst_g = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto wv = away_from_zero({1, 6}, rng);
    Bindings<double> b;
    b.bind(w, wv);
    b.bind(x, away_from_zero({6, 1}, rng));
    const std::array out{penalty, gw};
    auto vals = g.evaluate(out, b);
    double nw = 0;
    for (double v : wv.data) nw += v * v;
    nw = std::sqrt(nw);
    const double p = (nw - 1) * (nw - 1);
    worst_p = std::max(worst_p, std::abs(vals.scalar(penalty) - p) / std::max(p, 1e-300));
    for (int i = 0; i < 6; ++i) {
      const double expect = 2 * (nw - 1) * wv[i] / nw;
      worst_g = std::max(worst_g, std::abs(vals.at(gw)[i] - expect) / std::abs(expect));
    }
  }
  Outcome o;
  o.pass = worst_p < kPenaltyRelTol && worst_g < kPenaltyRelTol;
  o.detail = "penalty rel err " + fmtd("%.1e", worst_p) + ", gradient rel err " + fmtd("%.1e", worst_g);
  return o;
}

// ---------------------------------------------------------------------------
// 3. residual, encoder and normalizer examples

bool close(double a, double b) { return std::abs(a - b) <= kExactRelTol * std::max(1.0, std::abs(b)); }

Outcome criterion_unit_examples() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  {
    graph::Graph<float> g;
    const NodeId s = g.input("s", {2, 1, 4, 4});
    const NodeId r = g.input("r", {2, 1, 4, 4});
    const NodeId res = girm::mse_residual(g, s, r);
    Tensor<float> sv({2, 1, 4, 4});
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : sv.data) v = u(rng);
    for (const float c : {0.0f, 0.25f, -0.5f}) {
      Tensor<float> rv = sv;
      for (auto& v : rv.data) v += c;
      Bindings<float> b;
      b.bind(s, sv);
      b.bind(r, rv);
      const std::array out{res};
      const auto vals = g.evaluate(out, b);
      for (float v : vals.at(res).data) {
        expect(std::abs(v - c * c) <= 1e-6f, "mse residual offset " + std::to_string(c));
      }
    }
  }
  {
    // lambda = 0 leaves the pixel term; a uniform offset c gives c^2, and
    // matching features add nothing for any lambda
    graph::Graph<float> g;
    const NodeId s = g.input("s", {3, 1, 4, 4});
    const NodeId r = g.input("r", {3, 1, 4, 4});
    const NodeId fs_ = g.input("fs", {3, 5});
    const NodeId fr = g.input("fr", {3, 5});
    const NodeId l0 = girm::encoder_objective(g, s, r, fs_, fr, 0.0);
    const NodeId l1 = girm::encoder_objective(g, s, r, fs_, fs_, 1.0);
    Tensor<float> sv({3, 1, 4, 4}, 0.2f), rv({3, 1, 4, 4}, 0.7f), fv({3, 5}, 1.f), fw({3, 5}, -2.f);
    Bindings<float> b;
    b.bind(s, sv);
    b.bind(r, rv);
    b.bind(fs_, fv);
    b.bind(fr, fw);
    const std::array out{l0, l1};
    const auto vals = g.evaluate(out, b);
    expect(std::abs(vals.scalar(l0) - 0.25) <= 1e-6, "encoder objective lambda 0");
    expect(std::abs(vals.scalar(l1) - 0.25) <= 1e-6, "encoder objective matched features");
    Bindings<float> same;
    same.bind(s, sv);
    same.bind(r, sv);
    same.bind(fs_, fv);
    same.bind(fr, fv);
    expect(g.evaluate(out, same).scalar(l1) == 0.0, "encoder objective perfect inversion");
  }
  {
    girm::RewardNormalizer n(0.01);
    expect(n.normalize(1.0) == 0.0, "first output 0");
    n.normalize(2.0);
    expect(close(n.ema(), 0.01 * 2.0 + 0.99 * 1.0), "ema after 1, 2");
    expect(close(n.ema(), 1.01), "ema = 1.01");
    const double d = 2.0 - 1.01;
    expect(close(n.emv(), 0.01 * d * d), "emv after 1, 2");
  }
  {
    for (const double c : {0.0, 0.3, 7.0, -2.5}) {
      girm::RewardNormalizer n(0.01);
      bool zero = true;
      for (int i = 0; i < 1000; ++i) zero = zero && n.normalize(c) == 0.0;
      expect(zero, "constant stream " + fmtd("%g", c));
    }
  }
  Outcome o;
  o.pass = failed.empty();
  o.detail = failed.empty() ? "all examples exact" : "failed: " + failed.front();
  return o;
}

// ---------------------------------------------------------------------------
// 4. normalizer on a stationary Gaussian stream

Outcome criterion_normalizer() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;
  for (const auto& [mu, sigma] : std::vector<std::pair<double, double>>{{0, 1}, {3, 2}, {-1, 0.05}}) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> d(mu, sigma);
    girm::RewardNormalizer n(0.01);
    double s = 0, s2 = 0;
    int m = 0;
    for (int i = 0; i < 10000; ++i) {
      const double y = n.normalize(d(rng));
      if (i >= 1000) {
        s += y;
        s2 += y * y;
        ++m;
      }
    }
    const double mean = s / m;
    const double sd = std::sqrt(s2 / m - mean * mean);
    pass = pass && std::abs(mean) <= kNormMeanBound && sd >= kNormStdLo && sd <= kNormStdHi;
    detail += "N(" + fmtd("%g", mu) + "," + fmtd("%g", sigma) + "): mean " + fmtd("%.3f", mean) +
              " sd " + fmtd("%.3f", sd) + "; ";
  }
  const double t = seconds_since(t0);
  Outcome o;
  o.pass = pass && t < kNormTimeLimit;
  o.detail = detail + fmtd("%.2f s", t);
  return o;
}

// ---------------------------------------------------------------------------
// 5. novelty separation

Outcome criterion_novelty() {
  girm::GirmConfig cfg = harness::default_config("small").girm_config;
  cfg.memory = kNoveltyCorpus;
  int good = 0;
  std::string detail;
  bool slow = false;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    girm::GirmState girm(cfg, seed);
    girm::StateMemory mem(cfg.memory, girm.frame_shape());
    girm::RewardNormalizer norm;
    std::mt19937_64 rng(seed * 7 + 1);
    while (!mem.store(toy::corner_dot(rng, cfg.canvas))) {
    }
    girm::maybe_train(girm, mem, norm);
    double corner = 0, center = 0;
    for (int i = 0; i < kNoveltyHeldOut; ++i) {
      corner += girm::raw_intrinsic(girm, toy::corner_dot(rng, cfg.canvas));
      center += girm::raw_intrinsic(girm, toy::center_dot(rng, cfg.canvas));
    }
    const double ratio = center / corner;
    const double t = seconds_since(t0);
    slow = slow || t >= kNoveltyTimeLimit;
    if (ratio >= kNoveltyRatio) ++good;
    detail += fmtd("%.2f", ratio) + fmtd(" (%.0fs) ", t);
    std::printf("  novelty seed %llu: center/corner %.3f, %.1f s\n",
                static_cast<unsigned long long>(seed), ratio, t);
    std::fflush(stdout);
  }
  Outcome o;
  o.pass = good >= kNoveltySeedsNeeded && !slow;
  o.detail = std::to_string(good) + "/5 seeds >= 2x: " + detail;
  return o;
}

// ---------------------------------------------------------------------------
// 6, 7. cached end-to-end runs

struct E2ERun {
  bool present = false;
  std::string problem;
  double seconds = 0;
  int64_t furthest_x = 0;
  double best_score = 0;
  double final_mean = 0;
  std::vector<harness::MetricsRow> rows;
  harness::ExperimentConfig config;
};

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

E2ERun load_run(const fs::path& dir, const std::string& env, bool girm_on) {
  E2ERun r;
  if (!fs::exists(dir / "summary.txt") || !fs::exists(dir / "metrics.csv")) {
    r.problem = "missing " + dir.string();
    return r;
  }
  try {
    r.config = harness::parse_config_file(dir / "config.txt");
    r.rows = harness::read_metrics(dir / "metrics.csv");
  } catch (const std::exception& e) {
    r.problem = e.what();
    return r;
  }
  const auto kv = read_kv(dir / "summary.txt");
  const auto& c = r.config;
  if (c.env.kind != env || c.girm != girm_on || c.profile != "small" || c.frames != kE2EFrames ||
      c.a2c.workers != 8 || (env == "scroller" && c.env.length != kScrollerLength)) {
    r.problem = dir.string() + " was run with a different configuration";
    return r;
  }
  if (kv.count("status") == 0 || kv.at("status") != "ok" || r.rows.empty()) {
    r.problem = dir.string() + " did not finish";
    return r;
  }
  r.present = true;
  r.seconds = std::stod(kv.at("seconds"));
  r.furthest_x = r.rows.back().furthest_x;
  r.best_score = r.rows.back().best_score;
  r.final_mean = r.rows.back().mean_return.value_or(0.0);
  return r;
}

std::vector<E2ERun> load_arm(const fs::path& runs, const std::string& env, bool girm_on) {
  std::vector<E2ERun> out;
  for (int seed = 1; seed <= 5; ++seed) {
    const fs::path dir = runs / (env + "-" + (girm_on ? "girm" : "a2c") + "-" + std::to_string(seed));
    out.push_back(load_run(dir, env, girm_on));
  }
  return out;
}

std::string missing(const std::vector<E2ERun>& a, const std::vector<E2ERun>& b) {
  for (const auto* arm : {&a, &b}) {
    for (const auto& r : *arm) {
      if (!r.present) return r.problem;
    }
  }
  return "";
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double slowest(const std::vector<E2ERun>& a, const std::vector<E2ERun>& b) {
  double t = 0;
  for (const auto* arm : {&a, &b}) {
    for (const auto& r : *arm) t = std::max(t, r.seconds);
  }
  return t;
}

Outcome criterion_scroller(const fs::path& runs) {
  const auto g = load_arm(runs, "scroller", true);
  const auto p = load_arm(runs, "scroller", false);
  if (auto m = missing(g, p); !m.empty()) return {false, m};
  std::vector<double> xg, xp;
  int goal_g = 0, goal_p = 0;
  std::string xs_g, xs_p;
  for (const auto& r : g) {
    xg.push_back(static_cast<double>(r.furthest_x));
    goal_g += r.best_score >= 1.0;
    xs_g += std::to_string(r.furthest_x) + " ";
  }
  for (const auto& r : p) {
    xp.push_back(static_cast<double>(r.furthest_x));
    goal_p += r.best_score >= 1.0;
    xs_p += std::to_string(r.furthest_x) + " ";
  }
  const double mg = median(xg), mp = median(xp);
  const double t = slowest(g, p);
  Outcome o;
  o.pass = mg >= 2 * mp && goal_g >= 3 && goal_p <= 1 && t <= kE2ETimeLimit;
  o.detail = "furthest x girm [" + xs_g + "] a2c [" + xs_p + "], medians " + fmtd("%.0f", mg) + " vs " +
             fmtd("%.0f", mp) + ", goal " + std::to_string(goal_g) + "/5 vs " + std::to_string(goal_p) +
             "/5, slowest run " + fmtd("%.0f s", t);
  return o;
}

Outcome criterion_rooms(const fs::path& runs) {
  const auto g = load_arm(runs, "rooms", true);
  const auto p = load_arm(runs, "rooms", false);
  if (auto m = missing(g, p); !m.empty()) return {false, m};
  int zero_p = 0, key_g = 0;
  std::string sg, sp;
  for (const auto& r : g) {
    key_g += r.final_mean >= kKeyScore;
    sg += fmtd("%.0f ", r.final_mean);
  }
  for (const auto& r : p) {
    zero_p += r.final_mean == 0.0;
    sp += fmtd("%.0f ", r.final_mean);
  }
  const double t = slowest(g, p);
  Outcome o;
  o.pass = zero_p >= 4 && key_g >= 3 && t <= kE2ETimeLimit;
  o.detail = "final mean score girm [" + sg + "] a2c [" + sp + "], a2c zero " + std::to_string(zero_p) +
             "/5, girm >= 100 " + std::to_string(key_g) + "/5, slowest run " + fmtd("%.0f s", t);
  return o;
}

// ---------------------------------------------------------------------------
// 8, 9, 10. short harness runs

std::map<std::string, std::string> short_run(const fs::path& out, const std::string& env, bool girm_on) {
  return {{"out", out.string()},
          {"env", env},
          {"girm", girm_on ? "on" : "off"},
          {"frames", "4000"},
          {"length", "60"},
          {"z_dim", "16"},
          {"gan_width", "4"},
          {"batch", "16"},
          {"memory", "640"},
          {"first_gan_epochs", "1"},
          {"first_encoder_epochs", "1"},
          {"fine_gan_epochs", "1"},
          {"fine_encoder_epochs", "1"},
          {"checkpoint_every", "0"},
          {"log_trajectory", "on"}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Independent n-step return: for every (t, k) walk forward to the end of the
// episode segment inside the rollout, then fold back from there.
std::vector<double> oracle_returns(const agent::Rollout& ro, double gamma) {
  std::vector<double> out(ro.transitions.size());
  for (int64_t k = 0; k < ro.workers; ++k) {
    for (int64_t t = 0; t < ro.steps; ++t) {
      int64_t e = t;
      while (e < ro.steps - 1 && !ro.at(e, k).done) ++e;
      double acc = ro.at(e, k).done ? 0.0 : ro.bootstrap[static_cast<size_t>(k)];
      for (int64_t j = e; j >= t; --j) {
        const auto& tr = ro.at(j, k);
        acc = tr.done ? tr.r_ext : tr.r_ext + gamma * acc;
      }
      out[static_cast<size_t>(t * ro.workers + k)] = acc;
    }
  }
  return out;
}

Outcome criterion_reduction(const fs::path& scratch) {
  int64_t mismatches = 0, checked = 0, nonzero_int = 0, row_mismatch = 0;
  for (const std::string env : {"scroller", "rooms"}) {
    const fs::path out = scratch / ("reduction-" + env);
    fs::remove_all(out);
    const auto cfg = harness::parse_config("", short_run(out, env, false));
    std::vector<double> ep_return(static_cast<size_t>(cfg.a2c.workers), 0.0);
    std::vector<double> finished;
    harness::Callbacks cb;
    cb.on_rollout = [&](const agent::Rollout& ro, const agent::Returns& ret, const agent::Losses*) {
      const auto want = oracle_returns(ro, cfg.a2c.gamma);
      for (size_t i = 0; i < want.size(); ++i) {
        ++checked;
        mismatches += ret.returns[i] != want[i];
        const auto& tr = ro.transitions[i];
        nonzero_int += tr.r_int != 0.0 || tr.raw_int != 0.0 || tr.r != tr.r_ext;
      }
      for (const auto& tr : ro.transitions) {
        auto& acc = ep_return[static_cast<size_t>(tr.worker)];
        acc += tr.r_ext;
        if (tr.done) {
          finished.push_back(acc);
          acc = 0;
        }
      }
    };
    cb.on_row = [&](const harness::MetricsRow& row) {
      if (finished.empty()) {
        row_mismatch += row.mean_return.has_value();
        return;
      }
      const size_t n = std::min<size_t>(100, finished.size());
      double s = 0;
      for (size_t i = finished.size() - n; i < finished.size(); ++i) s += finished[i];
      row_mismatch += !row.mean_return || std::abs(*row.mean_return - s / n) > 1e-12;
    };
    harness::run_experiment(cfg, cb);
    for (const auto& row : harness::read_metrics(out / "metrics.csv")) {
      nonzero_int += row.mean_raw_intrinsic != 0.0 || row.ema != 0.0 || row.emv != 0.0 ||
                     row.girm_phases != 0 || row.critic_loss || row.generator_loss || row.encoder_loss;
    }
  }
  Outcome o;
  o.pass = mismatches == 0 && nonzero_int == 0 && row_mismatch == 0 && checked > 0;
  o.detail = std::to_string(checked) + " returns vs oracle: " + std::to_string(mismatches) +
             " mismatches; episode-mean rows off: " + std::to_string(row_mismatch) +
             "; non-zero intrinsic entries: " + std::to_string(nonzero_int);
  return o;
}

Outcome criterion_determinism(const fs::path& scratch) {
  std::string detail;
  bool pass = true;
  for (const std::string env : {"scroller", "rooms"}) {
    const fs::path a = scratch / ("det-a-" + env), b = scratch / ("det-b-" + env);
    fs::remove_all(a);
    fs::remove_all(b);
    const auto ra = harness::run_experiment(harness::parse_config("", short_run(a, env, true)));
    const auto rb = harness::run_experiment(harness::parse_config("", short_run(b, env, true)));
    const bool m = slurp(a / "metrics.csv") == slurp(b / "metrics.csv");
    const bool c = slurp(a / "checkpoint.gckpt") == slurp(b / "checkpoint.gckpt");
    pass = pass && m && c && ra.ok && rb.ok && ra.girm_phases > 0;
    detail += env + ": metrics " + (m ? "identical" : "DIFFER") + ", checkpoint " +
              (c ? "identical" : "DIFFER") + ", " + std::to_string(ra.girm_phases) + " GIRM phases; ";
  }
  return {pass, detail};
}

Outcome criterion_gating(const fs::path& scratch, const fs::path& runs) {
  int64_t early = 0, leaked = 0, after = 0;
  for (const std::string env : {"scroller", "rooms"}) {
    const fs::path out = scratch / ("gating-" + env);
    fs::remove_all(out);
    const auto cfg = harness::parse_config("", short_run(out, env, true));
    bool trained = false;
    harness::Callbacks cb;
    cb.on_rollout = [&](const agent::Rollout& ro, const agent::Returns&, const agent::Losses*) {
      // frames reached before the memory first filled
      for (const auto& tr : ro.transitions) {
        const bool before = !trained && (ro.trainings == 0 || tr.frame < cfg.girm_config.memory);
        if (before) {
          ++early;
          leaked += tr.r_int != 0.0 || tr.raw_int != 0.0;
        } else {
          after += tr.raw_int != 0.0;
        }
      }
      trained = trained || ro.trainings > 0;
    };
    harness::run_experiment(cfg, cb);
  }
  // every cached end-to-end GIRM run: rows that end before the first phase
  int64_t rows = 0, bad_rows = 0;
  for (const std::string env : {"scroller", "rooms"}) {
    for (const auto& r : load_arm(runs, env, true)) {
      if (!r.present) continue;
      for (const auto& row : r.rows) {
        if (row.frame > r.config.girm_config.memory) break;
        ++rows;
        bad_rows += row.mean_raw_intrinsic != 0.0 || row.ema != 0.0 || row.girm_phases != 0;
      }
    }
  }
  Outcome o;
  o.pass = leaked == 0 && bad_rows == 0 && early > 0 && after > 0;
  o.detail = std::to_string(early) + " pre-training transitions, " + std::to_string(leaked) +
             " non-zero; " + std::to_string(after) + " non-zero after; cached run rows before phase 1: " +
             std::to_string(rows) + ", " + std::to_string(bad_rows) + " non-zero";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string runs = "acceptance/runs";
  std::string scratch = (fs::temp_directory_path() / "gex_acceptance").string();
  std::vector<int> only;
  app.add_option("--runs", runs, "cached end-to-end run directories");
  app.add_option("--scratch", scratch, "scratch directory for short runs");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(scratch);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", criterion_gradients},
      {"linear-critic gradient penalty", criterion_linear_penalty},
      {"residual, encoder and normalizer examples", criterion_unit_examples},
      {"normalizer on a Gaussian stream", criterion_normalizer},
      {"novelty separation", criterion_novelty},
      {"scroller end-to-end", [&] { return criterion_scroller(runs); }},
      {"rooms end-to-end", [&] { return criterion_rooms(runs); }},
      {"reduction with GIRM off", [&] { return criterion_reduction(scratch); }},
      {"determinism", [&] { return criterion_determinism(scratch); }},
      {"gating before the first phase", [&] { return criterion_gating(scratch, runs); }},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s: %s -- %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
