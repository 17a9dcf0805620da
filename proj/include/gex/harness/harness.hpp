#pragma once

// Experiment orchestration: flat key=value configuration, the training loop,
// metrics.csv, the optional per-frame trajectory log, exploration summaries
// and run reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gex/agent/agent.hpp"
#include "gex/envs/envs.hpp"
#include "gex/girm/girm.hpp"

namespace gex::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnknownKeyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class ValueTypeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class OutOfRangeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct ExperimentConfig {
  std::string profile = "small";
  uint64_t seed = 1;
  int64_t frames = 500000;
  bool girm = true;
  std::string out = "runs/default";
  bool log_trajectory = false;
  bool dump_levels = false;
  int64_t checkpoint_every = 100000;  // frames; 0 disables periodic checkpoints
  int64_t frame_stack = 1;
  double alpha = 0.01;  // normalizer smoothing

  envs::EnvConfig env;
  agent::A2CConfig a2c;
  girm::GirmConfig girm_config;

  bool operator==(const ExperimentConfig&) const;
};

// Profile-dependent defaults ("small" or "paper").
ExperimentConfig default_config(const std::string& profile = "small");

// Every key in emission order.
const std::vector<std::string>& config_keys();

// Flat text, one "key = value" per line, '#' starts a comment. Later
// sources override earlier ones: file, then `overrides` (flags). The profile
// is resolved first and selects the defaults the other keys modify.
ExperimentConfig parse_config(const std::string& text,
                              const std::map<std::string, std::string>& overrides = {});
ExperimentConfig parse_config_file(const std::filesystem::path& path,
                                   const std::map<std::string, std::string>& overrides = {});
std::string emit_config(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);  // throws OutOfRangeError

// ---------------------------------------------------------------------------
// metrics

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsRow {
  int64_t frame = 0;
  int64_t episodes = 0;
  std::optional<double> mean_return;  // last 100 finished episodes
  double mean_raw_intrinsic = 0;      // over the frames since the previous row
  double ema = 0, emv = 0;
  int64_t furthest_x = 0;
  int64_t rooms_visited = 0;
  double best_score = 0;
  int64_t girm_phases = 0;
  std::optional<double> policy_loss, value_loss, entropy;
  std::optional<double> critic_loss, generator_loss, encoder_loss;
};

const std::vector<std::string>& metrics_header();
std::string format_row(const MetricsRow& row);
// Parses metrics.csv by header names. Throws ConfigError on schema mismatch.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

// Trajectory log: 16-byte little-endian records
//   u64 frame, u16 worker, u16 room, i32 x
struct TrajectoryRecord {
  uint64_t frame = 0;
  uint16_t worker = 0;
  uint16_t room = 0;
  int32_t x = 0;
  bool operator==(const TrajectoryRecord&) const = default;
};
std::vector<TrajectoryRecord> read_trajectory(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// running

struct Callbacks {
  // After every rollout; `losses` is null when no update ran (warm-up).
  std::function<void(const agent::Rollout&, const agent::Returns&, const agent::Losses*)> on_rollout;
  std::function<void(const MetricsRow&)> on_row;
};

struct RunResult {
  bool ok = true;
  std::string error;  // training abort message
  int64_t frames = 0;
  int64_t rollouts = 0;
  int64_t updates = 0;
  int64_t episodes = 0;
  int64_t girm_phases = 0;
  int64_t furthest_x = 0;
  double seconds = 0;
};

// Writes config.txt, metrics.csv, checkpoint.gckpt (+ periodic
// checkpoint-<frame>.gckpt), summary.txt and, on request, trajectory.bin and
// level.txt into config.out. Stops at the first rollout boundary at or past
// the frame budget. I/O errors throw std::runtime_error naming the path.
RunResult run_experiment(const ExperimentConfig& config, const Callbacks& callbacks = {});

// ---------------------------------------------------------------------------
// summaries

struct ExplorationSummary {
  int64_t frames = 0;
  int64_t furthest = 0;
  std::vector<double> thresholds;  // theta
  std::vector<double> fractions;   // share of frames with x > theta * length
};

// Throws std::invalid_argument on an empty log.
ExplorationSummary summarize_exploration(const std::vector<int32_t>& xs, int64_t length,
                                         const std::vector<double>& thresholds = {0.16, 0.32,
                                                                                  0.48});
std::string format_exploration(const ExplorationSummary& s);

struct RunReport {
  std::string text;  // human readable
  std::string csv_header;
  std::string csv_row;
};

// Reads config.txt, metrics.csv and summary.txt from a run directory and
// writes report.txt / report.csv next to them. Throws std::runtime_error if
// metrics.csv is missing.
RunReport emit_summary(const std::filesystem::path& run_dir);

}  // namespace gex::harness
