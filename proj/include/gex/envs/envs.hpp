#pragma once

// Two deterministic pixel environments and a lockstep vector of workers.
//
// scroller: side-scrolling platformer; the only reward is +1 for reaching the
//   last column. Actions: noop, left, right, jump, right+jump.
// rooms: grid of 16x16-tile rooms seen by a static camera; a key (+100) opens
//   locked doors (+300 each). Actions: noop, up, down, left, right.
//
// Observations are single-channel canvas x canvas frames in [-1, 1]; a tile
// is canvas/16 pixels wide.

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gex/tensor.hpp"

namespace gex::envs {

inline constexpr int kNumActions = 5;
inline constexpr int64_t kTiles = 16;  // tiles across the rendered window / room

// Contract violations: step after done, bad action id.
class EnvError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepInfo {
  int64_t x = 0;     // scroller column (rooms: column inside the room)
  int64_t room = 0;  // rooms only
  double score = 0;  // extrinsic return so far this episode
  bool operator==(const StepInfo&) const = default;
};

struct StepResult {
  std::vector<float> obs;
  double reward = 0;
  bool done = false;
  StepInfo info;
};

// ---------------------------------------------------------------------------
// scroller

enum class Terrain : uint8_t { ground, gap, wall1, wall2 };

struct ScrollerLevel {
  uint64_t seed = 0;
  int64_t length = 0;
  std::vector<Terrain> terrain;
  std::vector<uint8_t> clouds;  // decoration per column, render only

  int64_t goal() const { return length - 1; }
  bool operator==(const ScrollerLevel&) const = default;
};

// Pure in (seed, length). Throws std::invalid_argument for length < 32 and
// GenerationError if no level passes the expert check within the retry bound.
ScrollerLevel generate_scroller(uint64_t seed, int64_t length);

// Always-right policy that jumps when the next column is a gap or higher
// ground. Returns whether it reaches the goal before timing out.
bool scroller_expert_solves(const ScrollerLevel& level);

struct ScrollerState {
  int64_t x = 2;
  int64_t y = 0;   // height above ground level; negative only while falling into a gap
  int64_t vy = 0;
  bool grounded = true;
  int64_t steps = 0;
  bool done = false;
  double score = 0;
  bool operator==(const ScrollerState&) const = default;
};

// ---------------------------------------------------------------------------
// rooms

enum class Tile : uint8_t { floor, wall, ladder, hazard, key, locked_door, open_door };

struct Door {
  int64_t room, row, col;        // locked tile on the border of `room`
  int64_t to_room, to_row, to_col;  // where the agent lands after opening it
  bool operator==(const Door&) const = default;
};

struct RoomsLayout {
  uint64_t seed = 0;
  int64_t grid_rows = 0;
  int64_t grid_cols = 0;
  std::vector<Tile> tiles;  // room-major, kTiles x kTiles per room
  std::vector<Door> doors;  // in chain order
  int64_t start_room = 0, start_row = 0, start_col = 0;

  int64_t rooms() const { return grid_rows * grid_cols; }
  Tile at(int64_t room, int64_t r, int64_t c) const {
    return tiles[static_cast<size_t>((room * kTiles + r) * kTiles + c)];
  }
  Tile& at(int64_t room, int64_t r, int64_t c) {
    return tiles[static_cast<size_t>((room * kTiles + r) * kTiles + c)];
  }
  bool operator==(const RoomsLayout&) const = default;
};

// Pure in seed. Rooms are chained in snake order (left to right along the
// first grid row, back along the second, ...). Throws std::invalid_argument
// for fewer than two rooms.
RoomsLayout generate_rooms(uint64_t seed, int64_t grid_rows = 2, int64_t grid_cols = 2);

// Shortest-path policy: key first, then every door in chain order. Returns
// the action sequence, empty if some target is unreachable.
std::vector<int> rooms_expert_route(const RoomsLayout& layout);

struct RoomsState {
  int64_t room = 0, row = 0, col = 0;
  bool has_key = false;
  bool key_taken = false;
  std::vector<uint8_t> opened;  // per door
  std::vector<uint8_t> visited;  // per room
  int64_t steps = 0;
  bool done = false;
  double score = 0;
  bool operator==(const RoomsState&) const = default;
};

// ---------------------------------------------------------------------------
// environments

class Env {
 public:
  virtual ~Env() = default;

  virtual std::vector<float> reset(uint64_t seed) = 0;
  // Throws EnvError after done or for an action outside [0, kNumActions).
  virtual StepResult step(int action) = 0;
  virtual std::vector<float> render() const = 0;
  virtual StepInfo info() const = 0;
  virtual bool done() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  int64_t canvas() const { return canvas_; }
  Shape frame_shape() const { return {1, canvas_, canvas_}; }

 protected:
  explicit Env(int64_t canvas);
  int64_t canvas_;
};

class ScrollerEnv final : public Env {
 public:
  ScrollerEnv(ScrollerLevel level, int64_t canvas = 32);

  std::vector<float> reset(uint64_t seed) override;
  StepResult step(int action) override;
  std::vector<float> render() const override;
  StepInfo info() const override;
  bool done() const override { return s_.done; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<ScrollerEnv>(*this); }

  const ScrollerLevel& level() const { return level_; }
  const ScrollerState& state() const { return s_; }
  void set_state(const ScrollerState& s) { s_ = s; }
  int64_t timeout() const { return 4 * level_.length; }
  int64_t camera_left() const;

 private:
  ScrollerLevel level_;
  ScrollerState s_;
};

class RoomsEnv final : public Env {
 public:
  static constexpr int64_t kTimeout = 2000;

  RoomsEnv(RoomsLayout layout, int64_t canvas = 32);

  std::vector<float> reset(uint64_t seed) override;
  StepResult step(int action) override;
  std::vector<float> render() const override;
  StepInfo info() const override;
  bool done() const override { return s_.done; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<RoomsEnv>(*this); }

  const RoomsLayout& layout() const { return layout_; }
  const RoomsState& state() const { return s_; }
  void set_state(const RoomsState& s) { s_ = s; }
  // Tile as seen now: the key disappears once taken, opened doors are open.
  Tile tile(int64_t room, int64_t r, int64_t c) const;

 private:
  RoomsLayout layout_;
  RoomsState s_;
};

// ---------------------------------------------------------------------------
// configuration and vectorization

struct EnvConfig {
  std::string kind = "scroller";  // scroller | rooms
  int64_t canvas = 32;
  int64_t length = 200;  // scroller columns
  int64_t grid_rows = 2;
  int64_t grid_cols = 2;
  uint64_t level_seed = 0;

  void validate() const;  // throws std::invalid_argument
};

std::unique_ptr<Env> make_env(const EnvConfig& config);

// Plain-text map: scroller is one line, one character per column
// ('#' ground, '.' gap, '1'/'2' walls, 'G' goal); rooms are kTiles lines per
// room, one character per tile (' ' floor, '#' wall, 'H' ladder, '^' hazard,
// 'k' key, 'D' locked door, 'd' open door, '@' start).
std::string dump_level(const Env& env);

struct VecStep {
  std::vector<float> obs;     // [K, stack, C, C] after any auto-reset
  std::vector<float> frames;  // [K, 1, C, C] frame each step reached (pre-reset)
  std::vector<double> reward;
  std::vector<uint8_t> done;
  std::vector<StepInfo> info;  // as reached (pre-reset)
};

// K workers built from one config. Each worker owns a seed stream: the seed
// given to vec_reset, then a fixed mix of the previous seed on every
// auto-reset. Worker i never reads another worker's state.
class VecEnv {
 public:
  VecEnv(const EnvConfig& config, int64_t workers, int64_t frame_stack = 1);

  int64_t workers() const { return static_cast<int64_t>(envs_.size()); }
  int64_t frame_stack() const { return stack_; }
  int64_t canvas() const { return config_.canvas; }
  Shape obs_shape() const { return {stack_, config_.canvas, config_.canvas}; }
  const EnvConfig& config() const { return config_; }
  const Env& env(int64_t i) const { return *envs_.at(static_cast<size_t>(i)); }

  // Throws std::invalid_argument unless seeds.size() == workers().
  std::vector<float> vec_reset(std::span<const uint64_t> seeds);
  std::vector<float> vec_reset(uint64_t seed);  // worker i gets mix(seed, i)
  VecStep vec_step(std::span<const int> actions);
  const std::vector<float>& observation() const { return obs_; }
  uint64_t episode_seed(int64_t i) const { return seeds_.at(static_cast<size_t>(i)); }

 private:
  void push_frame(int64_t worker, const std::vector<float>& frame, bool fresh);

  EnvConfig config_;
  int64_t stack_;
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<uint64_t> seeds_;
  std::vector<float> obs_;
  bool ready_ = false;
};

uint64_t next_seed(uint64_t seed);

}  // namespace gex::envs
