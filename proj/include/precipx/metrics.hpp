// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Forecast verification: categorical scores at a rain threshold, neighbourhood
// CSI via block max pooling, and continuous scores. Undefined scores (zero
// denominators, zero variance) are std::nullopt, never NaN.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "precipx/grid.hpp"

namespace precipx::metrics {

/// Rain/no-rain threshold in mm/hr. A pixel rains when value >= threshold.
inline constexpr float kRainThreshold = 0.1f;

using Score = std::optional<double>;

struct ConfusionCounts {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t false_alarms = 0;
  std::int64_t correct_negatives = 0;

  [[nodiscard]] std::int64_t total() const { return hits + misses + false_alarms + correct_negatives; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

MaskGrid binarize(const FloatGrid& field, float threshold = kRainThreshold);

ConfusionCounts confusion(const MaskGrid& pred, const MaskGrid& truth);
ConfusionCounts confusion(const FloatGrid& pred, const FloatGrid& truth, float threshold = kRainThreshold);

Score pod(const ConfusionCounts& c);
Score far(const ConfusionCounts& c);
Score csi(const ConfusionCounts& c);

/// Max pool with kernel = stride = k. Grids whose sides are not multiples of
/// k are reflect-padded at the bottom/right first.
MaskGrid block_max_pool(const MaskGrid& field, int k);

ConfusionCounts neighbor_confusion(const MaskGrid& pred, const MaskGrid& truth, int kernel);
Score csi_neighbor(const FloatGrid& pred, const FloatGrid& truth, int kernel, float threshold = kRainThreshold);

Score rmse(const FloatGrid& pred, const FloatGrid& truth);
Score cc(const FloatGrid& pred, const FloatGrid& truth);

enum class NoiseKind { none, additive, multiplicative };
NoiseKind parse_noise_kind(const std::string& s);
std::string to_string(NoiseKind k);

/// additive: x + e, multiplicative: x * (1 + e), e ~ Normal(0, sigma^2).
FloatGrid inject_noise(const FloatGrid& grid, NoiseKind kind, double sigma, std::uint64_t seed);

struct MetricReport {
  Score pod, far, csi, csi4, csi8, rmse, cc;

  /// (name, value) pairs in table order: RMSE, CC, POD, FAR, CSI, CSI-4, CSI-8.
  [[nodiscard]] std::vector<std::pair<std::string, Score>> named() const;
};

/// Pools scores over many scenes: confusion counts are summed and the
/// continuous scores use running sums over every pixel.
class MetricAccumulator {
 public:
  /// `rain_pred` drives the categorical scores; `rate_pred` (mm/hr) the
  /// continuous ones. Either may be the same field.
  void add(const FloatGrid& rain_pred, const FloatGrid& rate_pred, const FloatGrid& truth);
  /// Categorical scores only.
  void add_categorical(const FloatGrid& rain_pred, const FloatGrid& truth);

  [[nodiscard]] MetricReport report() const;
  [[nodiscard]] const ConfusionCounts& counts() const { return counts_; }

 private:
  ConfusionCounts counts_, counts4_, counts8_;
  std::int64_t n_ = 0;
  double sx_ = 0, sy_ = 0, sxx_ = 0, syy_ = 0, sxy_ = 0, sse_ = 0;
};

MetricReport evaluate(const FloatGrid& rain_pred, const FloatGrid& rate_pred, const FloatGrid& truth);

}  // namespace precipx::metrics
