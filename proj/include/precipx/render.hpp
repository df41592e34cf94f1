// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "precipx/grid.hpp"

namespace precipx::render {

struct Panel {
  std::string name;
  std::filesystem::path path;
};

/// Colour-scale maximum shared by every panel: the joint max over all grids,
/// or 1 when every value is zero.
float shared_scale(const PrecipGrid& truth, const std::vector<std::pair<std::string, PrecipGrid>>& predictions);

/// Writes `<dir>/<prefix>truth.png` and one `<dir>/<prefix><name>.png` per
/// prediction, all on the same colour scale. Throws IoError on write failure.
std::vector<Panel> render_maps(const PrecipGrid& truth,
                               const std::vector<std::pair<std::string, PrecipGrid>>& predictions,
                               const std::filesystem::path& dir, const std::string& prefix = "");

/// Reads back width and height of a PNG written by render_maps.
std::pair<int, int> png_size(const std::filesystem::path& path);

}  // namespace precipx::render
