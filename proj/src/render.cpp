// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/render.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "precipx/errors.hpp"

namespace precipx::render {

namespace fs = std::filesystem;

namespace {

using Rgb = std::array<std::uint8_t, 3>;

// White (dry) through blue and green to red, on sqrt-scaled intensity.
Rgb colour(float v, float vmax) {
  if (!(v > 0)) return {255, 255, 255};
  const float t = std::clamp(std::sqrt(v / vmax), 0.0f, 1.0f);
  static constexpr std::array<std::array<float, 3>, 4> stops{{{200, 220, 255}, {40, 90, 220}, {40, 190, 60}, {220, 30, 30}}};
  const float x = t * 3.0f;
  const int i = std::min(2, static_cast<int>(x));
  const float f = x - static_cast<float>(i);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] * (1 - f) + stops[i + 1][c] * f));
  return out;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

void write_png(const PrecipGrid& g, float vmax, const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw IoError("failed to write " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(g.width), static_cast<png_uint_32>(g.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(g.width) * 3);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const auto rgb = colour(g.at(r, c), vmax);
      std::copy(rgb.begin(), rgb.end(), row.begin() + static_cast<std::ptrdiff_t>(c) * 3);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

float shared_scale(const PrecipGrid& truth, const std::vector<std::pair<std::string, PrecipGrid>>& predictions) {
  float vmax = 0.0f;
  auto scan = [&](const PrecipGrid& g) {
    for (float v : g.values)
      if (std::isfinite(v)) vmax = std::max(vmax, v);
  };
  scan(truth);
  for (const auto& [name, g] : predictions) scan(g);
  return vmax > 0.0f ? vmax : 1.0f;
}

std::vector<Panel> render_maps(const PrecipGrid& truth,
                               const std::vector<std::pair<std::string, PrecipGrid>>& predictions,
                               const fs::path& dir, const std::string& prefix) {
  for (const auto& [name, g] : predictions) require_same_shape(truth, g, "render_maps " + name);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const float vmax = shared_scale(truth, predictions);
  std::vector<Panel> panels;
  panels.push_back({"truth", dir / (prefix + "truth.png")});
  write_png(truth, vmax, panels.back().path);
  for (const auto& [name, g] : predictions) {
    panels.push_back({name, dir / (prefix + name + ".png")});
    write_png(g, vmax, panels.back().path);
  }
  return panels;
}

std::pair<int, int> png_size(const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw IoError("failed to read " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  png_destroy_read_struct(&png, &info, nullptr);
  return {w, h};
}

}  // namespace precipx::render
