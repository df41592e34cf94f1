// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/losses.hpp"

#include "precipx/errors.hpp"

namespace precipx::losses {

TaskLoss task_loss(const torch::Tensor& pred, const torch::Tensor& target, nets::Task task,
                   const torch::Tensor& pixel_weights) {
  if (!pred.sizes().equals(target.sizes())) throw ContractError("task_loss: prediction and target shapes differ");
  if (!torch::isfinite(pred).all().item<bool>() || !torch::isfinite(target).all().item<bool>())
    throw NumericError("task_loss: non-finite prediction or target");
  TaskLoss out;
  if (task == nets::Task::classification) {
    auto p = torch::clamp(pred, kProbEps, 1.0 - kProbEps);
    out.map = -(target * torch::log(p) + (1.0 - target) * torch::log(1.0 - p));
  } else {
    out.map = torch::square(pred - target);
  }
  out.mean = pixel_weights.defined() ? (out.map * pixel_weights).mean() : out.map.mean();
  return out;
}

torch::Tensor feat_loss(const torch::Tensor& student, const torch::Tensor& teacher) {
  if (!student.sizes().equals(teacher.sizes())) throw ContractError("feat_loss: feature shapes differ");
  auto ls = torch::log_softmax(student.flatten(2), -1);
  auto lt = torch::log_softmax(teacher.flatten(2), -1);
  return (lt.exp() * (lt - ls)).sum(-1).mean();
}

torch::Tensor rec_loss(const std::vector<torch::Tensor>& student, const std::vector<torch::Tensor>& teacher) {
  if (student.size() != teacher.size() || student.empty())
    throw ContractError("rec_loss: level counts differ (" + std::to_string(student.size()) + " vs " +
                        std::to_string(teacher.size()) + ")");
  torch::Tensor total;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (!student[i].sizes().equals(teacher[i].sizes()))
      throw ContractError("rec_loss: shape mismatch at level " + std::to_string(i + 1));
    auto l = torch::mse_loss(student[i], teacher[i]);
    total = total.defined() ? total + l : l;
  }
  return total / static_cast<double>(student.size());
}

}  // namespace precipx::losses
