// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "precipx/errors.hpp"

namespace precipx {

/// Dense row-major 2D grid.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw SizingError("negative grid dimensions");
  }

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }
  template <typename U>
  [[nodiscard]] bool same_shape(const Grid<U>& other) const {
    return height == other.height && width == other.width;
  }

  T& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  const T& at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  bool operator==(const Grid&) const = default;
};

using FloatGrid = Grid<float>;
using MaskGrid = Grid<std::uint8_t>;

/// Rain rate in mm/hr; all values non-negative and finite.
using PrecipGrid = FloatGrid;

inline void require_same_shape(const FloatGrid& a, const FloatGrid& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ValidationError(what + ": shape mismatch (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                          " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

}  // namespace precipx
