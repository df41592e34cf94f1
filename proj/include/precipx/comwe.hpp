// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Coordinated masking and wavelet enhancement.
//
// One encoder level runs
//   F_c = MaskedConv(phi(F_prev) * M_c)          phi = 2x2 max-pool + 1x1 conv
//   F_h = SA(align(cat(HL, LH, HH)))             bands of the level-fold Haar DWT
//   F_R = sum_j softmax(w)_j * AE((F_c + F_h) * m_j)
// where the re-masks m_j split the visible patches of M_c into n disjoint
// groups, so each m_j hides a fraction (n + alpha - 1) / n of the map.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "precipx/grid.hpp"
#include "precipx/layers.hpp"

namespace precipx::comwe {

// ---------------------------------------------------------------- wavelets

struct WaveletBands {
  torch::Tensor ll, hl, lh, hh;
  std::int64_t height = 0;  // input size before any reflect padding
  std::int64_t width = 0;
};

/// One level of the orthonormal Haar DWT over the last two dims. For every 2x2
/// tile [[a, b], [c, d]]:
///   LL = (a+b+c+d)/2  HL = (a-b+c-d)/2  LH = (a+b-c-d)/2  HH = (a-b-c+d)/2
/// Odd sides are reflect-padded first.
WaveletBands dwt_haar(const torch::Tensor& x);
/// Inverse of dwt_haar, cropped back to the original input size.
torch::Tensor idwt_haar(const WaveletBands& bands);

// ---------------------------------------------------------------- masks

/// Patch masks for one encoder level. 1 marks a visible position.
struct MaskSet {
  int level = 1;
  double alpha = 0.0;
  int n = 1;
  int patch = 1;
  int patch_rows = 0;
  int patch_cols = 0;
  MaskGrid conv_mask;
  std::vector<MaskGrid> remasks;

  /// Masked fraction of a grid, in [0, 1].
  static double masked_fraction(const MaskGrid& m);
  [[nodiscard]] double patch_quantum() const { return 1.0 / (static_cast<double>(patch_rows) * patch_cols); }
};

/// Hides round(alpha * P) of the P patches for M_c, shuffles the remaining
/// visible patches with `seed` and deals them round-robin to n re-masks
/// (remainders go to the lowest-index branches).
MaskSet build_maskset(int level, int height, int width, double alpha, int n, int patch, std::uint64_t seed);
/// n = 1, alpha = 0: every position visible.
MaskSet identity_maskset(int level, int height, int width);

/// Batched masks for one level, each N x 1 x h x w.
struct LevelMasks {
  torch::Tensor conv;
  std::vector<torch::Tensor> remasks;
};

torch::Tensor mask_to_tensor(const MaskGrid& m, torch::Dtype dtype = torch::kFloat32);
LevelMasks stack_masks(const std::vector<MaskSet>& per_sample, torch::Dtype dtype = torch::kFloat32);

// ---------------------------------------------------------------- modules

/// phi (2x2 max-pool + 1x1 channel alignment) followed by a double 3x3 conv
/// over the masked map.
class MaskedConvImpl : public torch::nn::Module {
 public:
  MaskedConvImpl(int in_channels, int out_channels);
  /// `mask` is N x 1 x h x w at the pooled resolution, or undefined. Throws
  /// ContractError on a resolution mismatch.
  torch::Tensor forward(const torch::Tensor& prev, const torch::Tensor& mask = {});

 private:
  torch::nn::Conv2d align_{nullptr};
  layers::DoubleConv body_{nullptr};
};
TORCH_MODULE(MaskedConv);

/// Detail-aware wavelet enhancement for encoder level `level` (>= 1).
class DaweImpl : public torch::nn::Module {
 public:
  DaweImpl(int level, int embed_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& embedded);
  /// Spatial attention map sigmoid(conv7x7([mean_c; max_c])) of `aligned`.
  torch::Tensor attention(const torch::Tensor& aligned);
  /// Concatenated high bands after `level` DWT steps on the LL chain.
  torch::Tensor high_bands(const torch::Tensor& embedded) const;
  [[nodiscard]] int level() const { return level_; }

 private:
  int level_;
  torch::nn::Conv2d align_{nullptr};
  torch::nn::Conv2d spatial_{nullptr};
};
TORCH_MODULE(Dawe);

/// conv3x3 (C -> C/2) ReLU conv3x3 ReLU | conv3x3 ReLU conv3x3 (C/2 -> C).
/// Every conv accepts a low-rank adapter.
class AutoEncoderImpl : public torch::nn::Module {
 public:
  explicit AutoEncoderImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  std::vector<layers::LoraConv2d> convs() const { return {enc1_, enc2_, dec1_, dec2_}; }

 private:
  layers::LoraConv2d enc1_{nullptr}, enc2_{nullptr}, dec1_{nullptr}, dec2_{nullptr};
};
TORCH_MODULE(AutoEncoder);

/// Re-masked reconstruction: branch j feeds (F_c + F_h) * m_j to the shared
/// auto-encoder and the branch outputs are mixed with softmax weights.
class RmkdImpl : public torch::nn::Module {
 public:
  RmkdImpl(int channels, int branches);

  /// With no re-masks the input goes through the auto-encoder once. With one
  /// re-mask that single branch is returned. Otherwise the re-mask count must
  /// equal the branch count. `ae_mask` (N x 1 x h x w), when defined, gates
  /// the shared input before branch masking.
  torch::Tensor forward(const torch::Tensor& conv_features, const torch::Tensor& high_features,
                        const std::vector<torch::Tensor>& remasks = {}, const torch::Tensor& ae_mask = {});

  [[nodiscard]] torch::Tensor branch_weights() const { return torch::softmax(branch_logits_, 0); }
  AutoEncoder& autoencoder() { return ae_; }
  [[nodiscard]] int branches() const { return branches_; }

 private:
  int branches_;
  AutoEncoder ae_{nullptr};
  torch::Tensor branch_logits_;
};
TORCH_MODULE(Rmkd);

}  // namespace precipx::comwe
