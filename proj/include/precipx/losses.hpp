// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include <torch/torch.h>

#include "precipx/nets.hpp"

namespace precipx::losses {

/// Probabilities are clamped to [eps, 1 - eps] before the log.
inline constexpr double kProbEps = 1e-6;

struct TaskLoss {
  torch::Tensor mean;  // scalar
  torch::Tensor map;   // unreduced, same shape as pred
};

/// Binary cross-entropy for classification, squared error for regression.
/// `pixel_weights`, when defined, scales the map before averaging. Throws
/// NumericError on non-finite inputs.
TaskLoss task_loss(const torch::Tensor& pred, const torch::Tensor& target, nets::Task task,
                   const torch::Tensor& pixel_weights = {});

/// KL(teacher || student) between per-channel spatial softmaxes, averaged over
/// batch and channels.
torch::Tensor feat_loss(const torch::Tensor& student, const torch::Tensor& teacher);

/// Mean over levels of the per-level MSE. Throws ContractError when the level
/// counts or shapes differ.
torch::Tensor rec_loss(const std::vector<torch::Tensor>& student, const std::vector<torch::Tensor>& teacher);

}  // namespace precipx::losses
