#pragma once

// Dot-on-dark-background frames for novelty tests. A 4x4 bright square is
// placed with jitter either in one of the four corners or at the center.

#include <cstdint>
#include <random>
#include <vector>

namespace toy {

inline std::vector<float> dot_at(int64_t canvas, int64_t row, int64_t col) {
  std::vector<float> f(static_cast<size_t>(canvas * canvas), -1.f);
  for (int64_t r = row; r < row + 4; ++r) {
    for (int64_t c = col; c < col + 4; ++c) f[static_cast<size_t>(r * canvas + c)] = 1.f;
  }
  return f;
}

inline std::vector<float> corner_dot(std::mt19937_64& rng, int64_t canvas) {
  std::uniform_int_distribution<int64_t> jitter(0, 3);
  std::uniform_int_distribution<int> corner(0, 3);
  const int k = corner(rng);
  const int64_t far = canvas - 4 - 4;  // leftmost offset of the far-side corner band
  const int64_t row = (k / 2 ? far : 0) + jitter(rng);
  const int64_t col = (k % 2 ? far : 0) + jitter(rng);
  return dot_at(canvas, row, col);
}

inline std::vector<float> center_dot(std::mt19937_64& rng, int64_t canvas) {
  std::uniform_int_distribution<int64_t> jitter(-2, 2);
  const int64_t mid = canvas / 2 - 2;
  return dot_at(canvas, mid + jitter(rng), mid + jitter(rng));
}

}  // namespace toy
