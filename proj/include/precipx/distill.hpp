// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Swath-stage training: multimodal teacher, then the IR-only student trained
// against task + lambda * feat + gamma * rec with the teacher frozen.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipx/dataset.hpp"
#include "precipx/metrics.hpp"
#include "precipx/nets.hpp"
#include "precipx/store.hpp"

namespace precipx::distill {

/// Optimiser schedule shared by every trainer (RMSprop, step decay).
struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double lr = 1e-3;
  int lr_decay_every = 6;
  double lr_decay_factor = 0.5;
  std::uint64_t seed = 1;
  /// Classification only: weight rain and dry pixels so each class carries
  /// half of the loss over the training set.
  bool balance_classes = true;

  void validate() const;
  [[nodiscard]] double lr_at(int epoch) const;  // epoch is 1-based
  [[nodiscard]] nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TeacherConfig {
  nets::ModelConfig model;  // in_channels 3, geo_channels 3 expected
  TrainConfig train;
  dataset::Modalities modalities;
  [[nodiscard]] nlohmann::json to_json() const;
};

enum class KdMode { none, vanilla_kd, comwe };
KdMode parse_kd_mode(const std::string& s);
std::string to_string(KdMode m);

struct DistillConfig {
  nets::ModelConfig model;  // student
  TrainConfig train;
  double lambda = 0.2;
  double gamma = 50.0;
  double alpha = 0.25;
  int n = 3;
  KdMode kd_mode = KdMode::comwe;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct LossReport {
  int epoch = 0;
  int step = 0;
  double task = 0, feat = 0, rec = 0, total = 0;
};

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  metrics::Score val_csi;
};

struct TrainResult {
  store::Checkpoint checkpoint;  // best on validation
  std::vector<LossReport> steps;
  std::vector<EpochSummary> epochs;
  int best_epoch = 0;
};

/// Selection score: CSI for classification (higher is better), negative
/// validation loss for regression.
double selection_score(const EpochSummary& e, nets::Task task);

/// Per-pixel class weights 0.5 / p for rain and 0.5 / (1 - p) for dry, p the
/// rain fraction of `target`. All ones when either class is absent.
struct ClassWeights {
  double rain = 1.0, dry = 1.0;
  static ClassWeights from_target(const torch::Tensor& binary_target);
  [[nodiscard]] torch::Tensor map(const torch::Tensor& binary_target) const;
};

/// Pooled CSI of (prob >= 0.5) against (precip >= 0.1).
metrics::Score tensor_csi(const torch::Tensor& prob, const torch::Tensor& precip);

/// Batched no-grad forward passes; outputs N x 1 x H x W.
torch::Tensor predict(nets::UNet& model, const torch::Tensor& x, const torch::Tensor& geo, int batch_size = 8);
torch::Tensor predict(nets::PRENet& model, const torch::Tensor& x, int batch_size = 8);

/// Models rebuilt from checkpoints (kind checked).
nets::UNet load_teacher(const store::Checkpoint& ckpt);
nets::PRENet load_student(const store::Checkpoint& ckpt);

/// Random masks for every CoMWE level of a batch.
nets::StudentMasks sample_masks(const nets::PRENetImpl& model, std::int64_t batch, int height, int width,
                                double alpha, int n, std::uint64_t seed);

TrainResult train_teacher(const dataset::SwathSplit& train, const dataset::SwathSplit& val,
                          const TeacherConfig& config);

/// `teacher` may be null only when kd_mode is none.
TrainResult train_student_distill(const dataset::SwathSplit& train, const dataset::SwathSplit& val,
                                  const store::Checkpoint* teacher, const DistillConfig& config);

namespace detail {
/// Shuffled mini-batch index lists for one epoch.
std::vector<std::vector<std::int64_t>> batches(std::int64_t n, int batch_size, std::uint64_t seed);
void check_finite(double loss, int epoch, int step);
void set_lr(torch::optim::RMSprop& opt, double lr);
/// Pixel weights for the training targets, undefined when not balancing.
torch::Tensor train_weights(const TrainConfig& tc, nets::Task task, const torch::Tensor& target);
/// take() that passes undefined tensors through.
torch::Tensor take_opt(const torch::Tensor& t, const std::vector<std::int64_t>& index);

/// Tracks the best validation epoch and keeps a snapshot of its parameters.
struct BestKeeper {
  nets::Task task;
  std::optional<double> best;
  int best_epoch = 0;
  store::Checkpoint checkpoint;

  void offer(const EpochSummary& e, torch::nn::Module& m, store::CheckpointHeader header);
};
}  // namespace detail

}  // namespace precipx::distill
