#include "gex/harness/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "gex/nets/checkpoint.hpp"

namespace gex::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

ExperimentConfig default_config(const std::string& profile) {
  const nets::ProfileSpec p = nets::profile_by_name(profile);
  ExperimentConfig c;
  c.profile = p.name;
  c.env.canvas = p.canvas;
  c.girm_config.canvas = p.canvas;
  c.girm_config.z_dim = p.z_dim;
  c.girm_config.width = p.gan_width;
  if (p.name == "small") {
    c.a2c.workers = 8;
    c.girm_config.memory = 8192;
    // The narrow GAN needs a larger step to separate novel frames within
    // the first phase; fine-tuning is cut to one epoch to fit the budget.
    c.girm_config.lr = 1e-3;
    c.girm_config.batch = 32;
    c.girm_config.first_encoder_epochs = 20;
    c.girm_config.fine_gan_epochs = 1;
    c.girm_config.fine_encoder_epochs = 1;
  } else {
    c.a2c.workers = 16;
    c.girm_config.memory = 32768;
  }
  return c;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(int64_t v) { return std::to_string(v); }
std::string fmt(uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "on" : "off"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(const std::string& v) { return v; }

void parse_into(const std::string& key, const std::string& s, int64_t& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValueTypeError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
}
void parse_into(const std::string& key, const std::string& s, int& out) {
  int64_t v;
  parse_into(key, s, v);
  out = static_cast<int>(v);
}
void parse_into(const std::string& key, const std::string& s, uint64_t& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValueTypeError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
}
void parse_into(const std::string& key, const std::string& s, double& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValueTypeError("config key '" + key + "': expected a number, got '" + s + "'");
  }
}
void parse_into(const std::string& key, const std::string& s, bool& out) {
  if (s == "on" || s == "true" || s == "1") {
    out = true;
  } else if (s == "off" || s == "false" || s == "0") {
    out = false;
  } else {
    throw ValueTypeError("config key '" + key + "': expected on/off, got '" + s + "'");
  }
}
void parse_into(const std::string&, const std::string& s, std::string& out) { out = s; }

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class M>
Field field(std::string key, M member) {
  Field f;
  f.key = key;
  f.get = [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); };
  f.set = [member, key](ExperimentConfig& c, const std::string& s) { parse_into(key, s, member(c)); };
  return f;
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f = {
      field("profile", [](C& c) -> std::string& { return c.profile; }),
      field("env", [](C& c) -> std::string& { return c.env.kind; }),
      field("seed", [](C& c) -> uint64_t& { return c.seed; }),
      field("frames", [](C& c) -> int64_t& { return c.frames; }),
      field("girm", [](C& c) -> bool& { return c.girm; }),
      field("out", [](C& c) -> std::string& { return c.out; }),
      field("log_trajectory", [](C& c) -> bool& { return c.log_trajectory; }),
      field("dump_levels", [](C& c) -> bool& { return c.dump_levels; }),
      field("checkpoint_every", [](C& c) -> int64_t& { return c.checkpoint_every; }),
      field("frame_stack", [](C& c) -> int64_t& { return c.frame_stack; }),
      field("canvas", [](C& c) -> int64_t& { return c.env.canvas; }),
      field("length", [](C& c) -> int64_t& { return c.env.length; }),
      field("grid_rows", [](C& c) -> int64_t& { return c.env.grid_rows; }),
      field("grid_cols", [](C& c) -> int64_t& { return c.env.grid_cols; }),
      field("level_seed", [](C& c) -> uint64_t& { return c.env.level_seed; }),
      field("gamma", [](C& c) -> double& { return c.a2c.gamma; }),
      field("rollout", [](C& c) -> int64_t& { return c.a2c.rollout; }),
      field("entropy_coef", [](C& c) -> double& { return c.a2c.entropy_coef; }),
      field("value_coef", [](C& c) -> double& { return c.a2c.value_coef; }),
      field("max_grad_norm", [](C& c) -> double& { return c.a2c.max_grad_norm; }),
      field("workers", [](C& c) -> int64_t& { return c.a2c.workers; }),
      field("warmup", [](C& c) -> bool& { return c.a2c.warmup; }),
      field("a2c_lr", [](C& c) -> double& { return c.a2c.lr; }),
      field("alpha", [](C& c) -> double& { return c.alpha; }),
      field("z_dim", [](C& c) -> int64_t& { return c.girm_config.z_dim; }),
      field("gan_width", [](C& c) -> int64_t& { return c.girm_config.width; }),
      field("lambda", [](C& c) -> double& { return c.girm_config.lambda; }),
      field("lambda_gp", [](C& c) -> double& { return c.girm_config.lambda_gp; }),
      field("n_critic", [](C& c) -> int& { return c.girm_config.n_critic; }),
      field("batch", [](C& c) -> int& { return c.girm_config.batch; }),
      field("first_gan_epochs", [](C& c) -> int& { return c.girm_config.first_gan_epochs; }),
      field("first_encoder_epochs", [](C& c) -> int& { return c.girm_config.first_encoder_epochs; }),
      field("fine_gan_epochs", [](C& c) -> int& { return c.girm_config.fine_gan_epochs; }),
      field("fine_encoder_epochs", [](C& c) -> int& { return c.girm_config.fine_encoder_epochs; }),
      field("memory", [](C& c) -> int64_t& { return c.girm_config.memory; }),
      field("residual", [](C& c) -> std::string& { return c.girm_config.residual; }),
      field("girm_lr", [](C& c) -> double& { return c.girm_config.lr; }),
      field("bn_momentum", [](C& c) -> double& { return c.girm_config.bn_momentum; }),
  };
  return f;
}

// critic_norm is an enum and handled separately
constexpr const char* kCriticNorm = "critic_norm";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return emit_config(*this) == emit_config(o);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    k.push_back(kCriticNorm);
    return k;
  }();
  return keys;
}

std::string emit_config(const ExperimentConfig& c) {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(c) << "\n";
  os << kCriticNorm << " = " << nets::to_string(c.girm_config.critic_norm) << "\n";
  return os.str();
}

void validate(const ExperimentConfig& c) {
  try {
    nets::profile_by_name(c.profile);
    c.env.validate();
    c.a2c.validate();
    c.girm_config.validate();
  } catch (const std::invalid_argument& e) {
    throw OutOfRangeError(e.what());
  }
  if (c.frames < 1) throw OutOfRangeError("frames must be >= 1");
  if (c.frame_stack < 1) throw OutOfRangeError("frame_stack must be >= 1");
  if (!(c.alpha > 0 && c.alpha <= 1)) throw OutOfRangeError("alpha must be in (0, 1]");
  if (c.checkpoint_every < 0) throw OutOfRangeError("checkpoint_every must be >= 0");
  if (c.out.empty()) throw OutOfRangeError("out must not be empty");
  if (c.env.canvas != c.girm_config.canvas) throw OutOfRangeError("env and GIRM canvas differ");
  const nets::ProfileSpec p = nets::profile_by_name(c.profile);
  if (c.env.canvas != 32 && c.env.canvas != 64) throw OutOfRangeError("canvas must be 32 or 64");
  (void)p;
}

ExperimentConfig parse_config(const std::string& text,
                              const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValueTypeError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  for (const auto& [k, v] : overrides) kv[k] = v;

  const auto& keys = config_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw UnknownKeyError("unknown config key '" + k + "'");
    }
  }
  ExperimentConfig c;
  try {
    c = default_config(kv.count("profile") ? kv.at("profile") : "small");
  } catch (const std::invalid_argument& e) {
    throw OutOfRangeError(e.what());
  }
  for (const auto& f : fields()) {
    if (f.key == "profile") continue;
    if (auto it = kv.find(f.key); it != kv.end()) f.set(c, it->second);
  }
  if (auto it = kv.find(kCriticNorm); it != kv.end()) {
    try {
      c.girm_config.critic_norm = nets::parse_norm(it->second);
    } catch (const std::invalid_argument& e) {
      throw ValueTypeError(std::string("config key 'critic_norm': ") + e.what());
    }
  }
  c.girm_config.canvas = c.env.canvas;
  validate(c);
  return c;
}

ExperimentConfig parse_config_file(const fs::path& path,
                                   const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

// ---------------------------------------------------------------------------
// metrics

const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h = {
      "frame",          "episodes",       "mean_return", "mean_raw_intrinsic", "ema",
      "emv",            "furthest_x",     "rooms_visited", "best_score",       "girm_phases",
      "policy_loss",    "value_loss",     "entropy",     "critic_loss",        "generator_loss",
      "encoder_loss"};
  return h;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v;
  parse_into("metrics", s, v);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  return join({fmt(r.frame), fmt(r.episodes), opt(r.mean_return), fmt(r.mean_raw_intrinsic),
               fmt(r.ema), fmt(r.emv), fmt(r.furthest_x), fmt(r.rooms_visited), fmt(r.best_score),
               fmt(r.girm_phases), opt(r.policy_loss), opt(r.value_loss), opt(r.entropy),
               opt(r.critic_loss), opt(r.generator_loss), opt(r.encoder_loss)});
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty metrics file " + path.string());
  const auto header = split_csv(line);
  std::map<std::string, size_t> col;
  for (size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& h : metrics_header()) {
    if (!col.count(h)) throw ConfigError("metrics file " + path.string() + " lacks column '" + h + "'");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw ConfigError("ragged metrics row in " + path.string());
    auto get = [&](const char* k) -> const std::string& { return f[col.at(k)]; };
    auto num = [&](const char* k) {
      double v;
      parse_into(k, get(k), v);
      return v;
    };
    MetricsRow r;
    r.frame = static_cast<int64_t>(num("frame"));
    r.episodes = static_cast<int64_t>(num("episodes"));
    r.mean_return = parse_opt(get("mean_return"));
    r.mean_raw_intrinsic = num("mean_raw_intrinsic");
    r.ema = num("ema");
    r.emv = num("emv");
    r.furthest_x = static_cast<int64_t>(num("furthest_x"));
    r.rooms_visited = static_cast<int64_t>(num("rooms_visited"));
    r.best_score = num("best_score");
    r.girm_phases = static_cast<int64_t>(num("girm_phases"));
    r.policy_loss = parse_opt(get("policy_loss"));
    r.value_loss = parse_opt(get("value_loss"));
    r.entropy = parse_opt(get("entropy"));
    r.critic_loss = parse_opt(get("critic_loss"));
    r.generator_loss = parse_opt(get("generator_loss"));
    r.encoder_loss = parse_opt(get("encoder_loss"));
    rows.push_back(r);
  }
  return rows;
}

std::vector<TrajectoryRecord> read_trajectory(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read trajectory file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) throw std::runtime_error("truncated trajectory file " + path.string());
  std::vector<TrajectoryRecord> out(bytes.size() / 16);
  auto le = [&](size_t at, int n) {
    uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
    return v;
  };
  for (size_t i = 0; i < out.size(); ++i) {
    const size_t b = i * 16;
    out[i].frame = le(b, 8);
    out[i].worker = static_cast<uint16_t>(le(b + 8, 2));
    out[i].room = static_cast<uint16_t>(le(b + 10, 2));
    out[i].x = static_cast<int32_t>(static_cast<uint32_t>(le(b + 12, 4)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// running

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void put_le(std::string& buf, uint64_t v, int n) {
  for (int i = 0; i < n; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

uint64_t sub_seed(uint64_t seed, uint64_t stream) {
  return envs::next_seed(seed * 0x9E3779B97F4A7C15ull + stream);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const Callbacks& callbacks) {
  validate(config);
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = config.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out.string() + ": " + ec.message());
  write_text(out / "config.txt", emit_config(config));

  envs::VecEnv venv(config.env, config.a2c.workers, config.frame_stack);
  venv.vec_reset(sub_seed(config.seed, 0));
  if (config.dump_levels) write_text(out / "level.txt", envs::dump_level(venv.env(0)));

  const nets::ProfileSpec profile = nets::profile_by_name(config.profile);
  agent::Policy policy(nets::actor_critic_spec(venv.obs_shape(), envs::kNumActions, profile),
                       sub_seed(config.seed, 1));
  std::unique_ptr<girm::GirmState> girm;
  std::unique_ptr<girm::StateMemory> memory;
  girm::RewardNormalizer normalizer(config.alpha);
  if (config.girm) {
    girm = std::make_unique<girm::GirmState>(config.girm_config, sub_seed(config.seed, 2));
    memory = std::make_unique<girm::StateMemory>(config.girm_config.memory, girm->frame_shape());
  }
  std::mt19937_64 rng(sub_seed(config.seed, 3));

  const fs::path metrics_path = out / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  metrics << join(metrics_header()) << "\n";
  std::ofstream trajectory;
  if (config.log_trajectory) {
    trajectory.open(out / "trajectory.bin", std::ios::binary);
    if (!trajectory) throw std::runtime_error("cannot write " + (out / "trajectory.bin").string());
  }

  const int64_t K = venv.workers();
  std::vector<double> episode_return(static_cast<size_t>(K), 0.0);
  std::deque<double> window;
  std::set<int64_t> rooms;
  RunResult res;
  int64_t frame = 0;
  int64_t next_row = 1000;
  int64_t next_ckpt = config.checkpoint_every;
  double raw_sum = 0;
  int64_t raw_count = 0;
  double best_score = 0;
  int64_t last_row_frame = 0;
  MetricsRow row;

  auto checkpoint = [&] {
    nets::Checkpoint c;
    c.profile = config.profile;
    c.frames = frame;
    c.girm_trained = girm && girm->trained();
    c.girm_phases = girm ? girm->phases() : 0;
    c.ema = normalizer.ema();
    c.emv = normalizer.emv();
    c.normalizer_steps = normalizer.steps();
    c.rng_states.emplace_back("agent", rng_state(rng));
    std::ostringstream seeds;
    for (int64_t k = 0; k < K; ++k) seeds << venv.episode_seed(k) << ' ';
    c.rng_states.emplace_back("env_seeds", seeds.str());
    c.stores.emplace_back("policy", policy.params());
    if (girm) {
      c.rng_states.emplace_back("girm", rng_state(girm->rng()));
      c.stores.emplace_back("girm", girm->params());
    }
    return c;
  };

  auto emit_row = [&] {
    row.frame = frame;
    row.episodes = res.episodes;
    row.mean_return.reset();
    if (!window.empty()) {
      double s = 0;
      for (double v : window) s += v;
      row.mean_return = s / static_cast<double>(window.size());
    }
    row.mean_raw_intrinsic = raw_count ? raw_sum / static_cast<double>(raw_count) : 0.0;
    raw_sum = 0;
    raw_count = 0;
    row.ema = normalizer.ema();
    row.emv = normalizer.emv();
    row.furthest_x = res.furthest_x;
    row.rooms_visited = static_cast<int64_t>(rooms.size());
    row.best_score = best_score;
    row.girm_phases = girm ? girm->phases() : 0;
    metrics << format_row(row) << "\n" << std::flush;
    if (!metrics) throw std::runtime_error("write failed for " + metrics_path.string());
    last_row_frame = frame;
    if (callbacks.on_row) callbacks.on_row(row);
  };

  while (frame < config.frames) {
    agent::Rollout ro;
    try {
      ro = agent::collect_rollout(venv, policy,
                                  {girm.get(), memory.get(), &normalizer, &rng, &frame}, config.a2c);
    } catch (const girm::GirmTrainingError& e) {
      res.ok = false;
      res.error = std::string("GIRM training aborted: ") + e.what();
      break;
    }
    ++res.rollouts;
    const agent::Returns returns = agent::compute_returns(ro, config.a2c.gamma);
    std::optional<agent::Losses> losses;
    if (ro.girm_trained_at_start || !config.a2c.warmup) {
      try {
        losses = agent::a2c_update(policy, ro, returns, config.a2c);
      } catch (const agent::A2CError& e) {
        res.ok = false;
        res.error = std::string("A2C update aborted: ") + e.what();
        break;
      }
      ++res.updates;
      row.policy_loss = losses->policy;
      row.value_loss = losses->value;
      row.entropy = losses->entropy;
    }
    for (const auto& rep : ro.reports) {
      if (!rep.critic_loss.empty()) row.critic_loss = rep.critic_loss.back();
      if (!rep.generator_loss.empty()) row.generator_loss = rep.generator_loss.back();
      if (!rep.encoder_loss.empty()) row.encoder_loss = rep.encoder_loss.back();
    }

    std::string traj;
    for (const auto& t : ro.transitions) {
      const auto k = static_cast<size_t>(t.worker);
      episode_return[k] += t.r_ext;
      res.furthest_x = std::max(res.furthest_x, t.info.x);
      rooms.insert(t.info.room);
      raw_sum += t.raw_int;
      ++raw_count;
      if (t.done) {
        ++res.episodes;
        best_score = std::max(best_score, episode_return[k]);
        window.push_back(episode_return[k]);
        if (window.size() > 100) window.pop_front();
        episode_return[k] = 0;
      }
      if (config.log_trajectory) {
        put_le(traj, static_cast<uint64_t>(t.frame), 8);
        put_le(traj, static_cast<uint64_t>(t.worker), 2);
        put_le(traj, static_cast<uint64_t>(t.info.room), 2);
        put_le(traj, static_cast<uint64_t>(static_cast<uint32_t>(t.info.x)), 4);
      }
    }
    if (config.log_trajectory) trajectory.write(traj.data(), static_cast<std::streamsize>(traj.size()));
    if (callbacks.on_rollout) callbacks.on_rollout(ro, returns, losses ? &*losses : nullptr);

    if (frame >= next_row) {
      emit_row();
      while (next_row <= frame) next_row += 1000;
    }
    if (config.checkpoint_every > 0 && frame >= next_ckpt) {
      nets::save_checkpoint(out / ("checkpoint-" + std::to_string(frame) + ".gckpt"), checkpoint());
      while (next_ckpt <= frame) next_ckpt += config.checkpoint_every;
    }
  }
  if (last_row_frame != frame) emit_row();
  metrics.close();
  if (config.log_trajectory) trajectory.close();
  nets::save_checkpoint(out / "checkpoint.gckpt", checkpoint());

  res.frames = frame;
  res.girm_phases = girm ? girm->phases() : 0;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream s;
  s << "status = " << (res.ok ? "ok" : "aborted") << "\n";
  if (!res.ok) s << "error = " << res.error << "\n";
  s << "frames = " << res.frames << "\n"
    << "rollouts = " << res.rollouts << "\n"
    << "updates = " << res.updates << "\n"
    << "episodes = " << res.episodes << "\n"
    << "girm_phases = " << res.girm_phases << "\n"
    << "furthest_x = " << res.furthest_x << "\n"
    << "rooms_visited = " << rooms.size() << "\n"
    << "best_score = " << fmt(best_score) << "\n"
    << "metrics_schema = " << kMetricsSchemaVersion << "\n"
    << "seconds = " << fmt(std::round(res.seconds * 10) / 10) << "\n";
  write_text(out / "summary.txt", s.str());
  return res;
}

// ---------------------------------------------------------------------------
// summaries

ExplorationSummary summarize_exploration(const std::vector<int32_t>& xs, int64_t length,
                                         const std::vector<double>& thresholds) {
  if (xs.empty()) throw std::invalid_argument("summarize_exploration: empty log");
  ExplorationSummary s;
  s.frames = static_cast<int64_t>(xs.size());
  s.furthest = *std::max_element(xs.begin(), xs.end());
  s.thresholds = thresholds;
  for (double th : thresholds) {
    const double cut = th * static_cast<double>(length);
    const auto n = std::count_if(xs.begin(), xs.end(), [&](int32_t x) { return x > cut; });
    s.fractions.push_back(static_cast<double>(n) / static_cast<double>(xs.size()));
  }
  return s;
}

std::string format_exploration(const ExplorationSummary& s) {
  std::ostringstream os;
  os << "frames " << s.frames << "\nfurthest x " << s.furthest << "\n";
  for (size_t i = 0; i < s.thresholds.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "beyond %.2f L: %.1f%%\n", s.thresholds[i], 100.0 * s.fractions[i]);
    os << buf;
  }
  return os.str();
}

namespace {

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

RunReport emit_summary(const fs::path& run_dir) {
  const fs::path metrics_path = run_dir / "metrics.csv";
  if (!fs::exists(metrics_path)) throw std::runtime_error("missing metrics file " + metrics_path.string());
  const auto rows = read_metrics(metrics_path);
  const ExperimentConfig cfg = parse_config_file(run_dir / "config.txt");
  auto summary = read_kv(run_dir / "summary.txt");
  const MetricsRow last = rows.empty() ? MetricsRow{} : rows.back();
  const double score = last.mean_return.value_or(0.0);
  const std::string status = summary.count("status") ? summary["status"] : "incomplete";

  std::ostringstream t;
  t << "run           " << run_dir.filename().string() << "\n"
    << "env           " << cfg.env.kind << " (" << cfg.profile << " profile)\n"
    << "seed          " << cfg.seed << "\n"
    << "girm          " << (cfg.girm ? "on" : "off") << "\n"
    << "frames used   " << last.frame << " of " << cfg.frames << "\n"
    << "mean score    " << fmt(score) << " (last 100 episodes)\n"
    << "best score    " << fmt(last.best_score) << "\n";
  if (cfg.env.kind == "scroller") {
    t << "furthest x    " << last.furthest_x << " of " << cfg.env.length - 1
      << (last.furthest_x == cfg.env.length - 1 ? " (goal reached)" : "") << "\n";
  } else {
    t << "rooms visited " << last.rooms_visited << " of " << cfg.env.grid_rows * cfg.env.grid_cols << "\n";
  }
  t << "girm phases   " << last.girm_phases << "\n"
    << "status        " << status << "\n";
  if (summary.count("error")) t << "error         " << summary["error"] << "\n";

  RunReport r;
  r.text = t.str();
  r.csv_header =
      "run,env,profile,seed,girm,frames,mean_score,best_score,furthest_x,length,rooms_visited,"
      "girm_phases,status";
  r.csv_row = join({run_dir.filename().string(), cfg.env.kind, cfg.profile, fmt(cfg.seed),
                    fmt(cfg.girm), fmt(last.frame), fmt(score), fmt(last.best_score),
                    fmt(last.furthest_x), fmt(cfg.env.length), fmt(last.rooms_visited),
                    fmt(last.girm_phases), status});
  write_text(run_dir / "report.txt", r.text);
  write_text(run_dir / "report.csv", r.csv_header + "\n" + r.csv_row + "\n");
  return r;
}

}  // namespace gex::harness
