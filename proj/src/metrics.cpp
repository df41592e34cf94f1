// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace precipx::metrics {
namespace {

Score ratio(std::int64_t num, std::int64_t den) {
  if (den <= 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

// Index into [0, n) reflecting about the edges (edge pixel not repeated).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  hits += o.hits;
  misses += o.misses;
  false_alarms += o.false_alarms;
  correct_negatives += o.correct_negatives;
  return *this;
}

MaskGrid binarize(const FloatGrid& field, float threshold) {
  MaskGrid out(field.height, field.width);
  for (std::size_t i = 0; i < field.size(); ++i) out.values[i] = field.values[i] >= threshold ? 1 : 0;
  return out;
}

ConfusionCounts confusion(const MaskGrid& pred, const MaskGrid& truth) {
  if (!pred.same_shape(truth)) throw ValidationError("confusion: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool t = truth.values[i] != 0;
    if (p && t) ++c.hits;
    else if (t) ++c.misses;
    else if (p) ++c.false_alarms;
    else ++c.correct_negatives;
  }
  return c;
}

ConfusionCounts confusion(const FloatGrid& pred, const FloatGrid& truth, float threshold) {
  require_same_shape(pred, truth, "confusion");
  return confusion(binarize(pred, threshold), binarize(truth, threshold));
}

Score pod(const ConfusionCounts& c) { return ratio(c.hits, c.hits + c.misses); }
Score far(const ConfusionCounts& c) { return ratio(c.false_alarms, c.hits + c.false_alarms); }
Score csi(const ConfusionCounts& c) { return ratio(c.hits, c.hits + c.misses + c.false_alarms); }

MaskGrid block_max_pool(const MaskGrid& field, int k) {
  if (k < 1) throw ValidationError("pool kernel must be >= 1");
  const int oh = (field.height + k - 1) / k;
  const int ow = (field.width + k - 1) / k;
  MaskGrid out(oh, ow);
  for (int r = 0; r < oh * k; ++r) {
    const int sr = reflect_index(r, field.height);
    for (int c = 0; c < ow * k; ++c) {
      const int sc = reflect_index(c, field.width);
      auto& cell = out.at(r / k, c / k);
      cell = std::max(cell, field.at(sr, sc));
    }
  }
  return out;
}

ConfusionCounts neighbor_confusion(const MaskGrid& pred, const MaskGrid& truth, int kernel) {
  if (!pred.same_shape(truth)) throw ValidationError("csi_neighbor: shape mismatch");
  return confusion(block_max_pool(pred, kernel), block_max_pool(truth, kernel));
}

Score csi_neighbor(const FloatGrid& pred, const FloatGrid& truth, int kernel, float threshold) {
  require_same_shape(pred, truth, "csi_neighbor");
  return csi(neighbor_confusion(binarize(pred, threshold), binarize(truth, threshold), kernel));
}

Score rmse(const FloatGrid& pred, const FloatGrid& truth) {
  require_same_shape(pred, truth, "rmse");
  if (pred.size() == 0) return std::nullopt;
  double sse = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.values[i]) - truth.values[i];
    sse += d * d;
  }
  return std::sqrt(sse / static_cast<double>(pred.size()));
}

Score cc(const FloatGrid& pred, const FloatGrid& truth) {
  require_same_shape(pred, truth, "cc");
  const auto n = static_cast<double>(pred.size());
  if (pred.size() < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mx += pred.values[i];
    my += truth.values[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred.values[i] - mx;
    const double dy = truth.values[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "additive") return NoiseKind::additive;
  if (s == "multiplicative") return NoiseKind::multiplicative;
  throw ValidationError("unknown noise kind '" + s + "'");
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::additive: return "additive";
    case NoiseKind::multiplicative: return "multiplicative";
  }
  return "none";
}

FloatGrid inject_noise(const FloatGrid& grid, NoiseKind kind, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw ValidationError("noise sigma must be >= 0");
  FloatGrid out = grid;
  if (kind == NoiseKind::none || sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : out.values) {
    const double e = normal(rng);
    v = kind == NoiseKind::additive ? static_cast<float>(v + e) : static_cast<float>(v * (1.0 + e));
  }
  return out;
}

std::vector<std::pair<std::string, Score>> MetricReport::named() const {
  return {{"RMSE", rmse}, {"CC", cc}, {"POD", pod}, {"FAR", far}, {"CSI", csi}, {"CSI-4", csi4}, {"CSI-8", csi8}};
}

void MetricAccumulator::add_categorical(const FloatGrid& rain_pred, const FloatGrid& truth) {
  require_same_shape(rain_pred, truth, "metrics");
  const auto p = binarize(rain_pred);
  const auto t = binarize(truth);
  counts_ += confusion(p, t);
  counts4_ += neighbor_confusion(p, t, 4);
  counts8_ += neighbor_confusion(p, t, 8);
}

void MetricAccumulator::add(const FloatGrid& rain_pred, const FloatGrid& rate_pred, const FloatGrid& truth) {
  add_categorical(rain_pred, truth);
  require_same_shape(rate_pred, truth, "metrics");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double x = rate_pred.values[i];
    const double y = truth.values[i];
    sx_ += x;
    sy_ += y;
    sxx_ += x * x;
    syy_ += y * y;
    sxy_ += x * y;
    sse_ += (x - y) * (x - y);
  }
  n_ += static_cast<std::int64_t>(truth.size());
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.pod = pod(counts_);
  r.far = far(counts_);
  r.csi = csi(counts_);
  r.csi4 = csi(counts4_);
  r.csi8 = csi(counts8_);
  if (n_ > 0) {
    const double n = static_cast<double>(n_);
    r.rmse = std::sqrt(sse_ / n);
    const double vx = sxx_ - sx_ * sx_ / n;
    const double vy = syy_ - sy_ * sy_ / n;
    const double cov = sxy_ - sx_ * sy_ / n;
    if (vx > 0 && vy > 0) r.cc = std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
  }
  return r;
}

MetricReport evaluate(const FloatGrid& rain_pred, const FloatGrid& rate_pred, const FloatGrid& truth) {
  MetricAccumulator acc;
  acc.add(rain_pred, rate_pred, truth);
  auto r = acc.report();
  r.rmse = rmse(rate_pred, truth);
  r.cc = cc(rate_pred, truth);
  return r;
}

}  // namespace precipx::metrics
