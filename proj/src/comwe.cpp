// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/comwe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "precipx/errors.hpp"

namespace precipx::comwe {

using torch::indexing::None;
using torch::indexing::Slice;
namespace F = torch::nn::functional;

WaveletBands dwt_haar(const torch::Tensor& x) {
  if (x.dim() < 2) throw ContractError("dwt_haar needs at least a 2D tensor");
  WaveletBands out;
  out.height = x.size(-2);
  out.width = x.size(-1);
  auto xp = layers::pad_to_multiple(x, 2);
  const auto a = xp.index({"...", Slice(0, None, 2), Slice(0, None, 2)});
  const auto b = xp.index({"...", Slice(0, None, 2), Slice(1, None, 2)});
  const auto c = xp.index({"...", Slice(1, None, 2), Slice(0, None, 2)});
  const auto d = xp.index({"...", Slice(1, None, 2), Slice(1, None, 2)});
  out.ll = (a + b + c + d) * 0.5;
  out.hl = (a - b + c - d) * 0.5;
  out.lh = (a + b - c - d) * 0.5;
  out.hh = (a - b - c + d) * 0.5;
  return out;
}

torch::Tensor idwt_haar(const WaveletBands& bands) {
  const auto& ll = bands.ll;
  const auto a = (ll + bands.hl + bands.lh + bands.hh) * 0.5;
  const auto b = (ll - bands.hl + bands.lh - bands.hh) * 0.5;
  const auto c = (ll + bands.hl - bands.lh - bands.hh) * 0.5;
  const auto d = (ll - bands.hl - bands.lh + bands.hh) * 0.5;
  // Interleave: rows (a b / c d) -> stack on new trailing dims then reshape.
  auto top = torch::stack({a, b}, -1).flatten(-2);     // ... x h x 2w
  auto bottom = torch::stack({c, d}, -1).flatten(-2);  // ... x h x 2w
  auto full = torch::stack({top, bottom}, -2).flatten(-3, -2);
  return layers::crop_to(full, bands.height, bands.width);
}

double MaskSet::masked_fraction(const MaskGrid& m) {
  if (m.size() == 0) return 0.0;
  const auto visible = std::count(m.values.begin(), m.values.end(), std::uint8_t{1});
  return 1.0 - static_cast<double>(visible) / static_cast<double>(m.size());
}

namespace {

void paint_patch(MaskGrid& m, int patch, int cols, int index, std::uint8_t value) {
  const int pr = index / cols;
  const int pc = index % cols;
  for (int r = pr * patch; r < (pr + 1) * patch; ++r)
    for (int c = pc * patch; c < (pc + 1) * patch; ++c) m.at(r, c) = value;
}

}  // namespace

MaskSet build_maskset(int level, int height, int width, double alpha, int n, int patch, std::uint64_t seed) {
  if (!(alpha >= 0 && alpha < 1)) throw ConstructionError("mask ratio alpha must lie in [0, 1)");
  if (n < 1) throw ConstructionError("re-mask count n must be >= 1");
  if (patch < 1 || height % patch != 0 || width % patch != 0)
    throw ContractError("patch size " + std::to_string(patch) + " does not divide the " + std::to_string(height) +
                        "x" + std::to_string(width) + " feature map");
  MaskSet set;
  set.level = level;
  set.alpha = alpha;
  set.n = n;
  set.patch = patch;
  set.patch_rows = height / patch;
  set.patch_cols = width / patch;
  const int total = set.patch_rows * set.patch_cols;
  const int hidden = static_cast<int>(std::lround(alpha * total));
  const int visible = total - hidden;
  if (n > visible)
    throw ConstructionError("cannot split " + std::to_string(visible) + " visible patches into " + std::to_string(n) +
                            " re-masks");

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  set.conv_mask = MaskGrid(height, width, 1);
  for (int k = 0; k < hidden; ++k) paint_patch(set.conv_mask, patch, set.patch_cols, order[k], 0);

  std::vector<int> visible_patches(order.begin() + hidden, order.end());
  std::shuffle(visible_patches.begin(), visible_patches.end(), rng);
  set.remasks.assign(n, MaskGrid(height, width, 0));
  for (std::size_t k = 0; k < visible_patches.size(); ++k)
    paint_patch(set.remasks[k % n], patch, set.patch_cols, visible_patches[k], 1);
  return set;
}

MaskSet identity_maskset(int level, int height, int width) {
  MaskSet set;
  set.level = level;
  set.patch_rows = height;
  set.patch_cols = width;
  set.conv_mask = MaskGrid(height, width, 1);
  set.remasks = {MaskGrid(height, width, 1)};
  return set;
}

torch::Tensor mask_to_tensor(const MaskGrid& m, torch::Dtype dtype) {
  auto t = torch::empty({1, 1, m.height, m.width}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = static_cast<float>(m.values[i]);
  return t.to(dtype);
}

LevelMasks stack_masks(const std::vector<MaskSet>& per_sample, torch::Dtype dtype) {
  if (per_sample.empty()) throw ContractError("stack_masks: empty batch");
  const auto n = per_sample.front().remasks.size();
  LevelMasks out;
  std::vector<torch::Tensor> conv;
  std::vector<std::vector<torch::Tensor>> branches(n);
  for (const auto& s : per_sample) {
    if (s.remasks.size() != n) throw ContractError("stack_masks: re-mask count differs across the batch");
    conv.push_back(mask_to_tensor(s.conv_mask, dtype));
    for (std::size_t j = 0; j < n; ++j) branches[j].push_back(mask_to_tensor(s.remasks[j], dtype));
  }
  out.conv = torch::cat(conv, 0);
  for (auto& b : branches) out.remasks.push_back(torch::cat(b, 0));
  return out;
}

MaskedConvImpl::MaskedConvImpl(int in_channels, int out_channels) {
  align_ = register_module("align", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
  body_ = register_module("body", layers::DoubleConv(out_channels, out_channels));
}

torch::Tensor MaskedConvImpl::forward(const torch::Tensor& prev, const torch::Tensor& mask) {
  auto x = align_(F::max_pool2d(prev, F::MaxPool2dFuncOptions(2)));
  if (mask.defined()) {
    if (mask.size(-2) != x.size(-2) || mask.size(-1) != x.size(-1))
      throw ContractError("masked_conv: mask is " + std::to_string(mask.size(-2)) + "x" +
                          std::to_string(mask.size(-1)) + " but the pooled feature map is " +
                          std::to_string(x.size(-2)) + "x" + std::to_string(x.size(-1)));
    x = x * mask;
  }
  return body_(x);
}

DaweImpl::DaweImpl(int level, int embed_channels, int out_channels) : level_(level) {
  if (level < 1) throw ContractError("DAWE level must be >= 1");
  align_ = register_module(
      "align", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * embed_channels, out_channels, 1).bias(false)));
  spatial_ = register_module("spatial", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 7).padding(3)));
}

torch::Tensor DaweImpl::high_bands(const torch::Tensor& embedded) const {
  auto x = embedded;
  WaveletBands bands;
  for (int i = 0; i < level_; ++i) {
    if (x.size(-2) < 2 || x.size(-1) < 2)
      throw ContractError("DAWE level " + std::to_string(level_) + " is deeper than the input resolution allows");
    bands = dwt_haar(x);
    x = bands.ll;
  }
  return torch::cat({bands.hl, bands.lh, bands.hh}, 1);
}

torch::Tensor DaweImpl::attention(const torch::Tensor& aligned) {
  auto pooled = torch::cat({aligned.mean(1, true), std::get<0>(aligned.max(1, true))}, 1);
  return torch::sigmoid(spatial_(pooled));
}

torch::Tensor DaweImpl::forward(const torch::Tensor& embedded) {
  auto aligned = align_(high_bands(embedded));
  return aligned * attention(aligned);
}

AutoEncoderImpl::AutoEncoderImpl(int channels) {
  const int half = std::max(1, channels / 2);
  enc1_ = register_module("enc1", layers::LoraConv2d(channels, half, 3));
  enc2_ = register_module("enc2", layers::LoraConv2d(half, half, 3));
  dec1_ = register_module("dec1", layers::LoraConv2d(half, half, 3));
  dec2_ = register_module("dec2", layers::LoraConv2d(half, channels, 3));
}

torch::Tensor AutoEncoderImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(enc2_(torch::relu(enc1_(x))));
  return dec2_(torch::relu(dec1_(h)));
}

RmkdImpl::RmkdImpl(int channels, int branches) : branches_(branches) {
  if (branches < 1) throw ContractError("RMKD needs at least one branch");
  ae_ = register_module("ae", AutoEncoder(channels));
  branch_logits_ = register_parameter("branch_logits", torch::zeros({branches}));
}

torch::Tensor RmkdImpl::forward(const torch::Tensor& conv_features, const torch::Tensor& high_features,
                                const std::vector<torch::Tensor>& remasks, const torch::Tensor& ae_mask) {
  if (high_features.defined() && !conv_features.sizes().equals(high_features.sizes()))
    throw ContractError("rmkd: F_c and F_h differ in shape");
  auto x = high_features.defined() ? conv_features + high_features : conv_features;
  if (ae_mask.defined()) x = x * ae_mask;
  if (remasks.empty()) return ae_(x);
  if (remasks.size() == 1) return ae_(x * remasks.front());
  if (static_cast<int>(remasks.size()) != branches_)
    throw ContractError("rmkd: got " + std::to_string(remasks.size()) + " re-masks for " + std::to_string(branches_) +
                        " branches");
  const auto weights = branch_weights().to(x.dtype());
  torch::Tensor out;
  for (int j = 0; j < branches_; ++j) {
    auto branch = weights[j] * ae_(x * remasks[j]);
    out = out.defined() ? out + branch : branch;
  }
  return out;
}

}  // namespace precipx::comwe
