// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/layers.hpp"

#include <algorithm>
#include <cmath>

#include "precipx/errors.hpp"

namespace precipx::layers {

namespace F = torch::nn::functional;

DoubleConvImpl::DoubleConvImpl(int in_channels, int out_channels) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) {
  return torch::relu(conv2_(torch::relu(conv1_(x))));
}

LoraConv2dImpl::LoraConv2dImpl(int in_channels, int out_channels, int kernel_size) : padding_(kernel_size / 2) {
  weight_ = register_parameter("weight", torch::empty({out_channels, in_channels, kernel_size, kernel_size}));
  bias_ = register_parameter("bias", torch::empty({out_channels}));
  // Same initialisation as torch::nn::Conv2d.
  torch::NoGradGuard no_grad;
  torch::nn::init::kaiming_uniform_(weight_, std::sqrt(5.0));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel_size * kernel_size));
  torch::nn::init::uniform_(bias_, -bound, bound);
}

void LoraConv2dImpl::attach_lora(int rank, double scale) {
  if (has_lora()) throw ContractError("LoRA adapter already attached");
  const auto out = weight_.size(0);
  const auto fan_in = weight_.numel() / out;
  if (rank < 1 || rank > std::min<std::int64_t>(out, fan_in))
    throw ContractError("LoRA rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                        std::to_string(std::min<std::int64_t>(out, fan_in)));
  rank_ = rank;
  scale_ = scale;
  const auto opts = weight_.options();
  lora_a_ = register_parameter("lora_a", torch::empty({rank, fan_in}, opts));
  lora_b_ = register_parameter("lora_b", torch::zeros({out, rank}, opts));
  torch::NoGradGuard no_grad;
  torch::nn::init::kaiming_uniform_(lora_a_, std::sqrt(5.0));
}

torch::Tensor LoraConv2dImpl::effective_weight() const {
  if (!has_lora()) return weight_;
  return weight_ + scale_ * torch::mm(lora_b_, lora_a_).view(weight_.sizes());
}

torch::Tensor LoraConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, effective_weight(), F::Conv2dFuncOptions().bias(bias_).padding(padding_));
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple) {
  if (multiple <= 1) return x;
  const auto h = x.size(-2);
  const auto w = x.size(-1);
  const auto ph = (multiple - h % multiple) % multiple;
  const auto pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return x;
  const bool can_reflect = ph < h && pw < w;
  auto opts = F::PadFuncOptions({0, pw, 0, ph});
  if (can_reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(x, opts);
}

torch::Tensor crop_to(const torch::Tensor& x, std::int64_t height, std::int64_t width) {
  using torch::indexing::Slice;
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return x.index({"...", Slice(0, height), Slice(0, width)});
}

}  // namespace precipx::layers
