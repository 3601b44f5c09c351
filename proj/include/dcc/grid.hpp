#pragma once

#include <cstdint>
#include <vector>

#include "dcc/common.hpp"

namespace dcc {

// 2D grid, row-major (y, x).
template <typename T>
struct Grid2 {
  int h = 0, w = 0;
  std::vector<T> v;

  Grid2() = default;
  Grid2(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

  size_t size() const { return v.size(); }

  bool operator==(const Grid2&) const = default;
};

// 3D grid with dims (H, W, D): D axial slices of H rows x W columns.
// Storage is x-fastest: index = x + W * (y + H * z).
template <typename T>
struct Grid3 {
  int h = 0, w = 0, d = 0;
  std::vector<T> v;

  Grid3() = default;
  Grid3(int h_, int w_, int d_, T fill = T{})
      : h(h_), w(w_), d(d_), v(static_cast<size_t>(h_) * w_ * d_, fill) {}

  T& at(int z, int y, int x) {
    return v[static_cast<size_t>(x) + static_cast<size_t>(w) * (y + static_cast<size_t>(h) * z)];
  }
  const T& at(int z, int y, int x) const {
    return v[static_cast<size_t>(x) + static_cast<size_t>(w) * (y + static_cast<size_t>(h) * z)];
  }

  size_t size() const { return v.size(); }

  Grid2<T> slice(int z) const {
    Grid2<T> s(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) s.at(y, x) = at(z, y, x);
    return s;
  }

  bool operator==(const Grid3&) const = default;
};

}  // namespace dcc
