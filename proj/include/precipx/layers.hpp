// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace precipx::layers {

/// conv3x3 -> ReLU -> conv3x3 -> ReLU, spatial size preserved.
class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(DoubleConv);

/// 2D convolution whose weight can carry a low-rank bypass:
///   W_eff = W + scale * (B @ A).view_as(W),  A: r x (in*kh*kw), B: out x r.
/// B starts at zero, so attaching an adapter leaves the output bit-identical.
class LoraConv2dImpl : public torch::nn::Module {
 public:
  LoraConv2dImpl(int in_channels, int out_channels, int kernel_size);

  torch::Tensor forward(const torch::Tensor& x);

  /// Throws ContractError if rank exceeds min(out, in*kh*kw).
  void attach_lora(int rank, double scale);
  [[nodiscard]] bool has_lora() const { return lora_a_.defined(); }
  [[nodiscard]] int rank() const { return rank_; }
  [[nodiscard]] torch::Tensor effective_weight() const;

  torch::Tensor& weight() { return weight_; }
  torch::Tensor& bias() { return bias_; }
  torch::Tensor& lora_a() { return lora_a_; }
  torch::Tensor& lora_b() { return lora_b_; }

 private:
  int padding_;
  int rank_ = 0;
  double scale_ = 1.0;
  torch::Tensor weight_, bias_, lora_a_, lora_b_;
};
TORCH_MODULE(LoraConv2d);

/// Reflect-pads the last two dims up to the next multiple of `multiple`
/// (bottom/right only). Falls back to replicate padding when the tensor is
/// too small to reflect.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple);
torch::Tensor crop_to(const torch::Tensor& x, std::int64_t height, std::int64_t width);

}  // namespace precipx::layers
