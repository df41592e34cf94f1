// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Teacher / baseline U-Net and the IR-only student.
//
// Both share the decoder and predictor head. Encoder level 1 runs at full
// resolution with base_channels; level i (i >= 2) at H / 2^(i-1) with
// base_channels * 2^(i-1). Inputs are reflect-padded at the bottom/right to
// pad_multiple() and predictions cropped back.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipx/comwe.hpp"
#include "precipx/grid.hpp"
#include "precipx/store.hpp"

namespace precipx::nets {

enum class Task { classification, regression };
Task parse_task(const std::string& s);
std::string to_string(Task t);

struct ModelConfig {
  int stages = 4;
  int base_channels = 32;
  int in_channels = 1;
  int geo_channels = 0;
  Task task = Task::classification;
  int grid_size = 256;
  // Student only.
  int mask_patch = 8;
  int branches = 3;
  bool use_rmkd = true;
  bool use_dawe = true;
  int lora_rank = 0;  // 0: no adapters
  double lora_scale = 1.0;

  void validate() const;
  [[nodiscard]] int channels(int level) const { return base_channels << (level - 1); }
  /// Mask patch side at CoMWE level i (feature resolution H / 2^i).
  [[nodiscard]] int patch_at(int level) const;
  /// Smallest multiple every layer can divide evenly.
  [[nodiscard]] int pad_multiple() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-level features, finest first; level count equals stages.
using FeaturePyramid = std::vector<torch::Tensor>;

struct Output {
  FeaturePyramid pyramid;  // at padded resolution
  torch::Tensor prediction;  // N x 1 x H x W, sigmoid applied for classification
};

/// 1x1 conv to a single channel, sigmoid iff classification.
class PredictorHeadImpl : public torch::nn::Module {
 public:
  PredictorHeadImpl(int channels, Task task);
  torch::Tensor forward(const torch::Tensor& features);
  torch::nn::Conv2d& conv() { return conv_; }

 private:
  Task task_;
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(PredictorHead);

/// Up-convolution + skip concatenation + double conv per level. `top_extra`
/// channels (geo) are concatenated into the input of the last block.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int stages, int base_channels, int top_extra = 0);
  torch::Tensor forward(const FeaturePyramid& pyramid, const torch::Tensor& top_extra = {});

 private:
  int stages_;
  int top_extra_;
  std::vector<torch::nn::ConvTranspose2d> ups_;
  std::vector<layers::DoubleConv> blocks_;
};
TORCH_MODULE(Decoder);

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(ModelConfig config);
  /// x: N x in_channels x H x W; geo: N x geo_channels x H x W or undefined.
  Output forward(const torch::Tensor& x, const torch::Tensor& geo = {});
  [[nodiscard]] const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  std::vector<layers::DoubleConv> encoders_;
  Decoder decoder_{nullptr};
  PredictorHead head_{nullptr};
};
TORCH_MODULE(UNet);

enum class StudentMode { train_masked, inference };

/// Masks for the student's CoMWE levels, index 0 = level 1.
struct StudentMasks {
  std::vector<comwe::LevelMasks> levels;
  /// Optional per-level gate on the auto-encoder input (N x 1 x h x w).
  std::vector<torch::Tensor> ae;
};

class PRENetImpl : public torch::nn::Module {
 public:
  explicit PRENetImpl(ModelConfig config);
  /// x: N x 1 x H x W normalised IR. train_masked requires one LevelMasks per
  /// CoMWE level; inference forbids them. AE gates are allowed in both modes.
  Output forward(const torch::Tensor& x, StudentMode mode = StudentMode::inference, const StudentMasks& masks = {});
  [[nodiscard]] const ModelConfig& config() const { return config_; }

  /// Attaches adapters to every auto-encoder conv and freezes everything except
  /// the adapters, decoder and head.
  void inject_lora(int rank, double scale);
  std::vector<comwe::AutoEncoder> autoencoders();
  [[nodiscard]] int comwe_levels() const { return config_.stages - 1; }
  /// Padded feature size (h, w) at CoMWE level `level` for an H x W input.
  [[nodiscard]] std::pair<int, int> level_shape(int level, int height, int width) const;

 private:
  ModelConfig config_;
  layers::DoubleConv stem_{nullptr};
  torch::nn::Conv2d embed_{nullptr};
  std::vector<comwe::MaskedConv> masked_;
  std::vector<comwe::Dawe> dawe_;
  std::vector<comwe::Rmkd> rmkd_;
  Decoder decoder_{nullptr};
  PredictorHead head_{nullptr};
};
TORCH_MODULE(PRENet);

inline constexpr const char* kKindTeacher = "teacher";
inline constexpr const char* kKindStudent = "student";
inline constexpr const char* kKindStudentLora = "student_lora";
inline constexpr const char* kKindScratch = "scratch";

/// Grid-level wrappers (batch of one).
struct GridPrediction {
  FeaturePyramid pyramid;
  FloatGrid prediction;
};
GridPrediction teacher_forward(UNet& model, const FloatGrid& ir, const FloatGrid& pmw, const FloatGrid& pr,
                               const std::vector<FloatGrid>& geo);
GridPrediction student_forward(PRENet& model, const FloatGrid& ir, StudentMode mode = StudentMode::inference,
                               const std::optional<std::vector<comwe::MaskSet>>& masks = std::nullopt);

/// rate = max(reg, 0) where cls >= 0.5, else 0.
torch::Tensor fuse_predictions(const torch::Tensor& cls, const torch::Tensor& reg);
PrecipGrid fuse_predictions(const FloatGrid& cls, const FloatGrid& reg);

torch::Tensor grid_to_tensor(const FloatGrid& g);
FloatGrid tensor_to_grid(const torch::Tensor& t);

std::int64_t count_parameters(torch::nn::Module& m, bool trainable_only = false);

// ---------------------------------------------------------------- checkpoints

std::vector<store::NamedTensor> export_params(torch::nn::Module& m);
store::ShapeSet shape_set(torch::nn::Module& m);
/// Verifies names and shapes, then copies values in.
void load_params(torch::nn::Module& m, const store::Checkpoint& ckpt);
/// SHA-256 over a parameter's float32 bytes.
std::string tensor_hash(const torch::Tensor& t);

}  // namespace precipx::nets
