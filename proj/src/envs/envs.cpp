#include "gex/envs/envs.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <functional>
#include <random>

namespace gex::envs {

namespace {

constexpr int kGenerationRetries = 64;

void check_action(int action) {
  if (action < 0 || action >= kNumActions) {
    throw EnvError("invalid action " + std::to_string(action) + ", expected 0.." +
                   std::to_string(kNumActions - 1));
  }
}

float clamp1(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

// Fills tile (r, c) of a canvas with value v.
void fill_tile(std::vector<float>& img, int64_t canvas, int64_t r, int64_t c, float v) {
  const int64_t p = canvas / kTiles;
  for (int64_t y = r * p; y < (r + 1) * p; ++y) {
    std::fill_n(img.begin() + y * canvas + c * p, p, v);
  }
}

}  // namespace

uint64_t next_seed(uint64_t seed) {
  // splitmix64 finalizer
  uint64_t z = seed + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Env::Env(int64_t canvas) : canvas_(canvas) {
  if (canvas < kTiles || canvas % kTiles != 0) {
    throw std::invalid_argument("canvas must be a positive multiple of " + std::to_string(kTiles));
  }
}

// ---------------------------------------------------------------------------
// scroller

namespace {

// Height of the walkable surface; gaps have none.
constexpr int64_t kNoSurface = -1000;

int64_t surface(Terrain t) {
  switch (t) {
    case Terrain::ground: return 0;
    case Terrain::gap: return kNoSurface;
    case Terrain::wall1: return 1;
    case Terrain::wall2: return 2;
  }
  return 0;
}

// Advances the state by one action; returns the extrinsic reward.
double scroller_advance(const ScrollerLevel& level, ScrollerState& s, int action) {
  const bool jump = action == 3 || action == 4;
  const int64_t dx = action == 1 ? -1 : (action == 2 || action == 4) ? 1 : 0;
  auto surf = [&](int64_t x) { return surface(level.terrain[static_cast<size_t>(x)]); };

  if (jump && s.grounded) {
    s.vy = 2;
    s.grounded = false;
  }
  if (!s.grounded) {
    s.y += s.vy;
    s.vy = std::max<int64_t>(s.vy - 1, -1);
  }
  const int64_t nx = std::clamp<int64_t>(s.x + dx, 0, level.length - 1);
  if (surf(nx) <= s.y) s.x = nx;

  const int64_t ground = surf(s.x);
  if (s.grounded && s.y > ground) {
    s.grounded = false;  // walked off a ledge
    s.vy = -1;
  } else if (!s.grounded && s.y <= ground) {
    s.y = ground;
    s.vy = 0;
    s.grounded = true;
  }

  ++s.steps;
  double reward = 0;
  if (s.x == level.goal()) {
    reward = 1;
    s.done = true;
  } else if (ground == kNoSurface && s.y < 0) {
    s.done = true;
  } else if (s.steps >= 4 * level.length) {
    s.done = true;
  }
  s.score += reward;
  return reward;
}

}  // namespace

bool scroller_expert_solves(const ScrollerLevel& level) {
  ScrollerState s;
  while (!s.done) {
    const int64_t next = std::min(s.x + 1, level.goal());
    const Terrain t = level.terrain[static_cast<size_t>(next)];
    const bool obstacle =
        t == Terrain::gap || surface(t) > surface(level.terrain[static_cast<size_t>(s.x)]);
    scroller_advance(level, s, obstacle ? 4 : 2);
  }
  return s.x == level.goal();
}

ScrollerLevel generate_scroller(uint64_t seed, int64_t length) {
  if (length < 32) throw std::invalid_argument("scroller length must be >= 32");
  uint64_t attempt_seed = seed;
  for (int attempt = 0; attempt < kGenerationRetries; ++attempt) {
    std::mt19937_64 rng(attempt_seed);
    auto uniform = [&](int64_t lo, int64_t hi) {
      return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
    };
    ScrollerLevel level;
    level.seed = seed;
    level.length = length;
    level.terrain.assign(static_cast<size_t>(length), Terrain::ground);
    level.clouds.assign(static_cast<size_t>(length), 0);

    // features start after the five-column spawn strip; the last six columns
    // stay flat so the goal is never behind an obstacle. A feature the expert
    // cannot clear (e.g. a gap whose landing arc ends in the next gap) is
    // re-drawn.
    int64_t x = 5;
    while (true) {
      x += uniform(3, 5);
      bool placed = false;
      for (int tries = 0; tries < 16 && !placed; ++tries) {
        const int64_t kind = uniform(0, 99);
        const Terrain t = kind < 55 ? Terrain::gap : kind < 70 ? Terrain::wall1 : Terrain::wall2;
        const int64_t w = t == Terrain::wall1 ? uniform(1, 3) : uniform(1, 2);
        if (x + w > length - 6) break;
        for (int64_t i = 0; i < w; ++i) level.terrain[static_cast<size_t>(x + i)] = t;
        placed = scroller_expert_solves(level);
        if (placed) {
          x += w;
        } else {
          for (int64_t i = 0; i < w; ++i) level.terrain[static_cast<size_t>(x + i)] = Terrain::ground;
        }
      }
      if (x + 3 > length - 6) break;
      if (!placed && x + 5 > length - 6) break;
    }
    for (int64_t c = 0; c < length; ++c) {
      if (uniform(0, 5) == 0) level.clouds[static_cast<size_t>(c)] = static_cast<uint8_t>(uniform(1, 3));
    }
    if (scroller_expert_solves(level)) return level;
    attempt_seed = next_seed(attempt_seed);
  }
  throw GenerationError("scroller: no solvable level for seed " + std::to_string(seed) +
                        " after " + std::to_string(kGenerationRetries) + " attempts");
}

ScrollerEnv::ScrollerEnv(ScrollerLevel level, int64_t canvas) : Env(canvas), level_(std::move(level)) {
  if (level_.length < kTiles ||
      static_cast<int64_t>(level_.terrain.size()) != level_.length ||
      static_cast<int64_t>(level_.clouds.size()) != level_.length) {
    throw std::invalid_argument("scroller: malformed level");
  }
}

std::vector<float> ScrollerEnv::reset(uint64_t) {
  s_ = ScrollerState{};
  return render();
}

StepResult ScrollerEnv::step(int action) {
  if (s_.done) throw EnvError("scroller: step after done; call reset");
  check_action(action);
  StepResult r;
  r.reward = scroller_advance(level_, s_, action);
  r.done = s_.done;
  r.obs = render();
  r.info = info();
  return r;
}

int64_t ScrollerEnv::camera_left() const {
  return std::clamp<int64_t>(s_.x - kTiles / 2, 0, level_.length - kTiles);
}

StepInfo ScrollerEnv::info() const { return {s_.x, 0, s_.score}; }

std::vector<float> ScrollerEnv::render() const {
  const int64_t left = camera_left();
  const double progress = static_cast<double>(left) / static_cast<double>(level_.length - kTiles);
  const float sky = clamp1(-0.9 + 0.5 * progress);
  const float cloud = clamp1(-0.55 + 0.5 * progress);
  std::vector<float> img(static_cast<size_t>(canvas_ * canvas_), sky);
  const int64_t p = canvas_ / kTiles;

  for (int64_t j = 0; j < kTiles; ++j) {
    const auto c = static_cast<size_t>(left + j);
    if (level_.clouds[c]) fill_tile(img, canvas_, 1 + level_.clouds[c], j, cloud);
    switch (level_.terrain[c]) {
      case Terrain::gap:
        for (int64_t r = 12; r < kTiles; ++r) fill_tile(img, canvas_, r, j, -1.f);
        break;
      case Terrain::wall2:
        fill_tile(img, canvas_, 10, j, 0.55f);
        [[fallthrough]];
      case Terrain::wall1:
        fill_tile(img, canvas_, 11, j, 0.55f);
        [[fallthrough]];
      case Terrain::ground:
        for (int64_t r = 12; r < kTiles; ++r) fill_tile(img, canvas_, r, j, 0.1f);
        // lighter grass line on the top pixel row
        std::fill_n(img.begin() + 12 * p * canvas_ + j * p, p, 0.3f);
        break;
    }
    if (static_cast<int64_t>(c) == level_.goal()) {
      for (int64_t r = 6; r < 12; ++r) fill_tile(img, canvas_, r, j, 0.8f);
    }
  }
  const int64_t row = 11 - s_.y;
  if (row >= 0 && row < kTiles) fill_tile(img, canvas_, row, s_.x - left, 1.f);
  return img;
}

// ---------------------------------------------------------------------------
// rooms

namespace {

constexpr std::array<int64_t, 4> kCorridors = {2, 6, 10, 14};

enum class Side { east, west, south, north };

struct Exit {
  Side side;
  int64_t pos;  // row for east/west, column for north/south
};

// Snake order over the grid.
std::vector<int64_t> chain_order(int64_t rows, int64_t cols) {
  std::vector<int64_t> order;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t k = 0; k < cols; ++k) order.push_back(r * cols + (r % 2 ? cols - 1 - k : k));
  }
  return order;
}

Side side_towards(int64_t from, int64_t to) {
  if (to == from + 1) return Side::east;
  if (to == from - 1) return Side::west;
  return to > from ? Side::south : Side::north;
}

struct Cell {
  int64_t room, row, col;
  bool operator==(const Cell&) const = default;
};

// One movement step ignoring doors and pickups; returns the destination tile
// position, or `from` when blocked. Doors count as walls here.
Cell move_cell(const RoomsLayout& L, const Cell& from, int action,
               const std::function<Tile(const Cell&)>& tile) {
  int64_t dr = 0, dc = 0;
  switch (action) {
    case 1: dr = -1; break;
    case 2: dr = 1; break;
    case 3: dc = -1; break;
    case 4: dc = 1; break;
    default: return from;
  }
  const Cell to{from.room, from.row + dr, from.col + dc};
  if (to.row < 0 || to.row >= kTiles || to.col < 0 || to.col >= kTiles) return from;
  const Tile dst = tile(to);
  if (dr != 0) {
    if (tile(from) != Tile::ladder || dst != Tile::ladder) return from;
  } else if (dst == Tile::wall || dst == Tile::open_door || dst == Tile::locked_door) {
    return from;
  }
  (void)L;
  return to;
}

// Shortest action sequence from `from` to any cell satisfying `goal` inside
// one room, never entering a hazard.
std::vector<int> bfs_route(const RoomsLayout& L, const Cell& from,
                           const std::function<Tile(const Cell&)>& tile,
                           const std::function<bool(const Cell&)>& goal) {
  std::vector<int> prev_action(kTiles * kTiles, -1);
  std::vector<int64_t> prev(kTiles * kTiles, -1);
  auto id = [](const Cell& c) { return c.row * kTiles + c.col; };
  std::deque<Cell> queue{from};
  prev[static_cast<size_t>(id(from))] = id(from);
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    if (goal(c)) {
      std::vector<int> route;
      for (int64_t k = id(c); k != id(from); k = prev[static_cast<size_t>(k)]) {
        route.push_back(prev_action[static_cast<size_t>(k)]);
      }
      std::reverse(route.begin(), route.end());
      return route;
    }
    for (int a = 1; a < kNumActions; ++a) {
      const Cell n = move_cell(L, c, a, tile);
      if (n == c || tile(n) == Tile::hazard || prev[static_cast<size_t>(id(n))] >= 0) continue;
      prev[static_cast<size_t>(id(n))] = id(c);
      prev_action[static_cast<size_t>(id(n))] = a;
      queue.push_back(n);
    }
  }
  return {};
}

}  // namespace

std::vector<int> rooms_expert_route(const RoomsLayout& layout) {
  std::vector<int> route;
  Cell at{layout.start_room, layout.start_row, layout.start_col};
  auto tile = [&](const Cell& c) { return layout.at(c.room, c.row, c.col); };

  // to the key
  auto leg = bfs_route(layout, at, tile, [&](const Cell& c) { return tile(c) == Tile::key; });
  if (leg.empty()) return {};
  route.insert(route.end(), leg.begin(), leg.end());
  for (int a : leg) at = move_cell(layout, at, a, tile);

  // through every door: walk next to it, then push into it
  for (const Door& d : layout.doors) {
    if (at.room != d.room) return {};
    static const std::array<std::pair<int64_t, int64_t>, 4> kDirs = {
        {{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    int push = -1;
    auto next_to = [&](const Cell& c) {
      if (c.room != d.room) return false;
      for (int k = 0; k < 4; ++k) {
        if (c.row + kDirs[k].first == d.row && c.col + kDirs[k].second == d.col) {
          // vertical pushes need a ladder underfoot
          if (k < 2 && tile(c) != Tile::ladder) continue;
          push = k + 1;
          return true;
        }
      }
      return false;
    };
    leg = bfs_route(layout, at, tile, next_to);
    if (leg.empty() && !next_to(at)) return {};
    route.insert(route.end(), leg.begin(), leg.end());
    route.push_back(push);
    at = {d.to_room, d.to_row, d.to_col};
  }
  return route;
}

namespace {

RoomsLayout build_rooms(uint64_t seed, uint64_t attempt_seed, int64_t rows, int64_t cols) {
  std::mt19937_64 rng(attempt_seed);
  auto uniform = [&](int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
  };
  RoomsLayout L;
  L.seed = seed;
  L.grid_rows = rows;
  L.grid_cols = cols;
  L.tiles.assign(static_cast<size_t>(rows * cols * kTiles * kTiles), Tile::wall);

  const auto order = chain_order(rows, cols);
  std::vector<Exit> exits(order.size());
  std::vector<std::vector<uint8_t>> reserved(order.size(),
                                             std::vector<uint8_t>(kTiles * kTiles, 0));
  auto reserve = [&](size_t k, int64_t r, int64_t c) { reserved[k][static_cast<size_t>(r * kTiles + c)] = 1; };

  for (size_t k = 0; k < order.size(); ++k) {
    const int64_t room = order[k];
    for (int64_t r : kCorridors) {
      for (int64_t c = 1; c < kTiles - 1; ++c) L.at(room, r, c) = Tile::floor;
    }
    // one ladder per corridor pair; the start room zig-zags so the key sits
    // at the far end of a single long route
    for (size_t i = 0; i + 1 < kCorridors.size(); ++i) {
      const int64_t c = k == 0 ? (i % 2 == 0 ? uniform(10, 13) : uniform(2, 5)) : uniform(2, 13);
      for (int64_t r = kCorridors[i]; r <= kCorridors[i + 1]; ++r) L.at(room, r, c) = Tile::ladder;
    }
  }

  // start, key
  L.start_room = order[0];
  L.start_row = kCorridors[0];
  L.start_col = 3;
  L.at(L.start_room, kCorridors.back(), 1) = Tile::key;
  reserve(0, L.start_row, L.start_col);
  reserve(0, kCorridors.back(), 1);

  // doors along the chain
  for (size_t k = 0; k + 1 < order.size(); ++k) {
    const int64_t from = order[k], to = order[k + 1];
    const Side side = side_towards(from, to);
    Door d{from, 0, 0, to, 0, 0};
    if (side == Side::east || side == Side::west) {
      const int64_t r = k == 0 ? kCorridors.back() : kCorridors[static_cast<size_t>(uniform(0, 3))];
      const bool east = side == Side::east;
      d.row = d.to_row = r;
      d.col = east ? kTiles - 1 : 0;
      d.to_col = east ? 1 : kTiles - 2;
      L.at(from, r, d.col) = Tile::locked_door;
      L.at(to, r, east ? 0 : kTiles - 1) = Tile::open_door;
      reserve(k, r, east ? kTiles - 2 : 1);
      reserve(k + 1, r, d.to_col);
    } else {
      const int64_t c = k == 0 ? uniform(8, 13) : uniform(2, 13);
      const bool south = side == Side::south;
      d.col = d.to_col = c;
      d.row = south ? kTiles - 1 : 0;
      d.to_row = south ? 1 : kTiles - 2;
      L.at(from, d.row, c) = Tile::locked_door;
      L.at(to, south ? 0 : kTiles - 1, c) = Tile::open_door;
      // ladder stubs so the agent can push through and arrive on a ladder
      if (south) {
        L.at(from, kCorridors.back(), c) = Tile::ladder;
        L.at(to, 1, c) = Tile::ladder;
        L.at(to, kCorridors.front(), c) = Tile::ladder;
      } else {
        L.at(from, 1, c) = Tile::ladder;
        L.at(from, kCorridors.front(), c) = Tile::ladder;
        L.at(to, kCorridors.back(), c) = Tile::ladder;
      }
      reserve(k, south ? kCorridors.back() : 1, c);
      reserve(k + 1, d.to_row, c);
    }
    L.doors.push_back(d);
  }

  // hazards at corridor dead ends
  for (size_t k = 0; k < order.size(); ++k) {
    for (int64_t r : kCorridors) {
      for (int64_t c : {int64_t{1}, kTiles - 2}) {
        if (L.at(order[k], r, c) == Tile::floor && !reserved[k][static_cast<size_t>(r * kTiles + c)]) {
          L.at(order[k], r, c) = Tile::hazard;
        }
      }
    }
  }
  return L;
}

}  // namespace

RoomsLayout generate_rooms(uint64_t seed, int64_t grid_rows, int64_t grid_cols) {
  if (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols < 2) {
    throw std::invalid_argument("rooms grid must hold at least two rooms (no door otherwise)");
  }
  uint64_t attempt_seed = seed;
  for (int attempt = 0; attempt < kGenerationRetries; ++attempt) {
    RoomsLayout L = build_rooms(seed, attempt_seed, grid_rows, grid_cols);
    const auto route = rooms_expert_route(L);
    if (!route.empty()) {
      RoomsEnv env(L);
      env.reset(0);
      StepResult r;
      for (int a : route) {
        if (env.done()) break;
        r = env.step(a);
      }
      const double full = 100.0 + 300.0 * static_cast<double>(L.doors.size());
      if (env.state().score == full) return L;
    }
    attempt_seed = next_seed(attempt_seed);
  }
  throw GenerationError("rooms: no solvable layout for seed " + std::to_string(seed) + " after " +
                        std::to_string(kGenerationRetries) + " attempts");
}

RoomsEnv::RoomsEnv(RoomsLayout layout, int64_t canvas) : Env(canvas), layout_(std::move(layout)) {
  if (static_cast<int64_t>(layout_.tiles.size()) != layout_.rooms() * kTiles * kTiles) {
    throw std::invalid_argument("rooms: malformed layout");
  }
  reset(0);
}

std::vector<float> RoomsEnv::reset(uint64_t) {
  s_ = RoomsState{};
  s_.room = layout_.start_room;
  s_.row = layout_.start_row;
  s_.col = layout_.start_col;
  s_.opened.assign(layout_.doors.size(), 0);
  s_.visited.assign(static_cast<size_t>(layout_.rooms()), 0);
  s_.visited[static_cast<size_t>(s_.room)] = 1;
  return render();
}

Tile RoomsEnv::tile(int64_t room, int64_t r, int64_t c) const {
  const Tile t = layout_.at(room, r, c);
  if (t == Tile::key && s_.key_taken) return Tile::floor;
  if (t == Tile::locked_door) {
    for (size_t d = 0; d < layout_.doors.size(); ++d) {
      const Door& door = layout_.doors[d];
      if (s_.opened[d] && door.room == room && door.row == r && door.col == c) return Tile::open_door;
    }
  }
  return t;
}

StepResult RoomsEnv::step(int action) {
  if (s_.done) throw EnvError("rooms: step after done; call reset");
  check_action(action);
  auto tile_at = [&](const Cell& c) { return tile(c.room, c.row, c.col); };
  const Cell from{s_.room, s_.row, s_.col};
  double reward = 0;

  // a push into a locked door opens it when holding the key
  int64_t dr = action == 1 ? -1 : action == 2 ? 1 : 0;
  int64_t dc = action == 3 ? -1 : action == 4 ? 1 : 0;
  const int64_t tr = s_.row + dr, tc = s_.col + dc;
  bool passed = false;
  if ((dr || dc) && tr >= 0 && tr < kTiles && tc >= 0 && tc < kTiles &&
      tile(s_.room, tr, tc) == Tile::locked_door && s_.has_key &&
      (dr == 0 || tile_at(from) == Tile::ladder)) {
    for (size_t d = 0; d < layout_.doors.size(); ++d) {
      const Door& door = layout_.doors[d];
      if (door.room == s_.room && door.row == tr && door.col == tc && !s_.opened[d]) {
        s_.opened[d] = 1;
        reward += 300;
        s_.room = door.to_room;
        s_.row = door.to_row;
        s_.col = door.to_col;
        s_.visited[static_cast<size_t>(s_.room)] = 1;
        passed = true;
        break;
      }
    }
  }
  if (!passed) {
    const Cell to = move_cell(layout_, from, action, tile_at);
    s_.row = to.row;
    s_.col = to.col;
    const Tile t = tile_at(to);
    if (t == Tile::key) {
      s_.key_taken = true;
      s_.has_key = true;
      reward += 100;
    } else if (t == Tile::hazard) {
      s_.done = true;
    }
  }
  ++s_.steps;
  if (s_.steps >= kTimeout) s_.done = true;
  s_.score += reward;

  StepResult r;
  r.reward = reward;
  r.done = s_.done;
  r.obs = render();
  r.info = info();
  return r;
}

StepInfo RoomsEnv::info() const { return {s_.col, s_.room, s_.score}; }

std::vector<float> RoomsEnv::render() const {
  std::vector<float> img(static_cast<size_t>(canvas_ * canvas_), -1.f);
  // walls shade differs per room so rooms are told apart
  const float wall = clamp1(-0.5 + 0.12 * static_cast<double>(s_.room % 4));
  for (int64_t r = 0; r < kTiles; ++r) {
    for (int64_t c = 0; c < kTiles; ++c) {
      switch (tile(s_.room, r, c)) {
        // Ladders share the floor shade: the shaft cut through the wall rows
        // already shows them, and the agent sprite then has the same contrast
        // on every tile it can stand on, so its novelty does not depend on
        // what it stands on.
        case Tile::floor:
        case Tile::ladder: break;
        case Tile::wall: fill_tile(img, canvas_, r, c, wall); break;
        case Tile::hazard: fill_tile(img, canvas_, r, c, 0.6f); break;
        case Tile::key: fill_tile(img, canvas_, r, c, 0.85f); break;
        case Tile::locked_door: fill_tile(img, canvas_, r, c, 0.4f); break;
        case Tile::open_door: fill_tile(img, canvas_, r, c, -0.7f); break;
      }
    }
  }
  if (s_.has_key) fill_tile(img, canvas_, 0, kTiles - 2, 0.85f);  // HUD
  fill_tile(img, canvas_, s_.row, s_.col, 1.f);
  return img;
}

// ---------------------------------------------------------------------------
// configuration, dumps, vectorization

void EnvConfig::validate() const {
  if (kind != "scroller" && kind != "rooms") {
    throw std::invalid_argument("env kind must be scroller or rooms, got '" + kind + "'");
  }
  if (canvas < kTiles || canvas % kTiles != 0) {
    throw std::invalid_argument("canvas must be a positive multiple of 16");
  }
  if (kind == "scroller" && length < 32) throw std::invalid_argument("scroller length must be >= 32");
  if (kind == "rooms" && (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols < 2)) {
    throw std::invalid_argument("rooms grid must hold at least two rooms");
  }
}

std::unique_ptr<Env> make_env(const EnvConfig& config) {
  config.validate();
  if (config.kind == "scroller") {
    return std::make_unique<ScrollerEnv>(generate_scroller(config.level_seed, config.length),
                                         config.canvas);
  }
  return std::make_unique<RoomsEnv>(
      generate_rooms(config.level_seed, config.grid_rows, config.grid_cols), config.canvas);
}

std::string dump_level(const Env& env) {
  std::string out;
  if (const auto* s = dynamic_cast<const ScrollerEnv*>(&env)) {
    const ScrollerLevel& L = s->level();
    for (int64_t c = 0; c < L.length; ++c) {
      if (c == L.goal()) {
        out += 'G';
        continue;
      }
      switch (L.terrain[static_cast<size_t>(c)]) {
        case Terrain::ground: out += '#'; break;
        case Terrain::gap: out += '.'; break;
        case Terrain::wall1: out += '1'; break;
        case Terrain::wall2: out += '2'; break;
      }
    }
    out += '\n';
    return out;
  }
  const auto& R = dynamic_cast<const RoomsEnv&>(env).layout();
  for (int64_t room = 0; room < R.rooms(); ++room) {
    out += "room " + std::to_string(room) + "\n";
    for (int64_t r = 0; r < kTiles; ++r) {
      for (int64_t c = 0; c < kTiles; ++c) {
        if (room == R.start_room && r == R.start_row && c == R.start_col) {
          out += '@';
          continue;
        }
        static constexpr char kChars[] = {' ', '#', 'H', '^', 'k', 'D', 'd'};
        out += kChars[static_cast<int>(R.at(room, r, c))];
      }
      out += '\n';
    }
  }
  return out;
}

VecEnv::VecEnv(const EnvConfig& config, int64_t workers, int64_t frame_stack)
    : config_(config), stack_(frame_stack) {
  if (workers < 1) throw std::invalid_argument("vec env needs at least one worker");
  if (frame_stack < 1) throw std::invalid_argument("frame stack must be >= 1");
  auto proto = make_env(config_);
  for (int64_t i = 0; i < workers; ++i) envs_.push_back(proto->clone());
  seeds_.assign(static_cast<size_t>(workers), 0);
  obs_.assign(static_cast<size_t>(workers * stack_ * config_.canvas * config_.canvas), 0.f);
}

void VecEnv::push_frame(int64_t worker, const std::vector<float>& frame, bool fresh) {
  const int64_t n = config_.canvas * config_.canvas;
  float* slot = obs_.data() + worker * stack_ * n;
  if (fresh) {
    for (int64_t k = 0; k < stack_; ++k) std::copy(frame.begin(), frame.end(), slot + k * n);
  } else {
    std::copy(slot + n, slot + stack_ * n, slot);
    std::copy(frame.begin(), frame.end(), slot + (stack_ - 1) * n);
  }
}

std::vector<float> VecEnv::vec_reset(std::span<const uint64_t> seeds) {
  if (static_cast<int64_t>(seeds.size()) != workers()) {
    throw std::invalid_argument("vec_reset: " + std::to_string(seeds.size()) + " seeds for " +
                                std::to_string(workers()) + " workers");
  }
  for (int64_t i = 0; i < workers(); ++i) {
    seeds_[static_cast<size_t>(i)] = seeds[static_cast<size_t>(i)];
    push_frame(i, envs_[static_cast<size_t>(i)]->reset(seeds[static_cast<size_t>(i)]), true);
  }
  ready_ = true;
  return obs_;
}

std::vector<float> VecEnv::vec_reset(uint64_t seed) {
  std::vector<uint64_t> seeds(static_cast<size_t>(workers()));
  for (size_t i = 0; i < seeds.size(); ++i) seeds[i] = next_seed(seed ^ (0x51ED2701ull * (i + 1)));
  return vec_reset(seeds);
}

VecStep VecEnv::vec_step(std::span<const int> actions) {
  if (!ready_) throw EnvError("vec_step before vec_reset");
  if (static_cast<int64_t>(actions.size()) != workers()) {
    throw std::invalid_argument("vec_step: " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(workers()) + " workers");
  }
  const auto k = static_cast<size_t>(workers());
  const int64_t n = config_.canvas * config_.canvas;
  VecStep out;
  out.frames.resize(k * static_cast<size_t>(n));
  out.reward.resize(k);
  out.done.resize(k);
  out.info.resize(k);
  for (size_t i = 0; i < k; ++i) {
    StepResult r = envs_[i]->step(actions[i]);
    std::copy(r.obs.begin(), r.obs.end(), out.frames.begin() + static_cast<int64_t>(i) * n);
    out.reward[i] = r.reward;
    out.done[i] = r.done;
    out.info[i] = r.info;
    if (r.done) {
      seeds_[i] = next_seed(seeds_[i]);
      push_frame(static_cast<int64_t>(i), envs_[i]->reset(seeds_[i]), true);
    } else {
      push_frame(static_cast<int64_t>(i), r.obs, false);
    }
  }
  out.obs = obs_;
  return out;
}

}  // namespace gex::envs
