// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/nets.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "precipx/errors.hpp"
#include "precipx/hash.hpp"

namespace precipx::nets {

namespace F = torch::nn::functional;
using nlohmann::json;

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw ValidationError("unknown task '" + s + "' (expected classification or regression)");
}

std::string to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

void ModelConfig::validate() const {
  if (stages < 2) throw ValidationError("stages must be >= 2");
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (in_channels < 1) throw ValidationError("in_channels must be >= 1");
  if (geo_channels < 0) throw ValidationError("geo_channels must be >= 0");
  if (grid_size < 1) throw ValidationError("grid_size must be >= 1");
  if (mask_patch < 1) throw ValidationError("mask_patch must be >= 1");
  if (branches < 1) throw ValidationError("branches must be >= 1");
  if (lora_rank < 0) throw ValidationError("lora_rank must be >= 0");
}

int ModelConfig::patch_at(int level) const { return std::max(1, mask_patch >> (level - 1)); }

int ModelConfig::pad_multiple() const {
  int m = 1 << (stages - 1);
  for (int i = 1; i < stages; ++i) m = std::max(m, (1 << i) * patch_at(i));
  return m;
}

json ModelConfig::to_json() const {
  return {{"stages", stages},         {"base_channels", base_channels}, {"in_channels", in_channels},
          {"geo_channels", geo_channels}, {"task", to_string(task)},     {"grid_size", grid_size},
          {"mask_patch", mask_patch}, {"branches", branches},           {"use_rmkd", use_rmkd},
          {"use_dawe", use_dawe},     {"lora_rank", lora_rank},         {"lora_scale", lora_scale}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "stages") c.stages = v.get<int>();
    else if (key == "base_channels") c.base_channels = v.get<int>();
    else if (key == "in_channels") c.in_channels = v.get<int>();
    else if (key == "geo_channels") c.geo_channels = v.get<int>();
    else if (key == "task") c.task = parse_task(v.get<std::string>());
    else if (key == "grid_size") c.grid_size = v.get<int>();
    else if (key == "mask_patch") c.mask_patch = v.get<int>();
    else if (key == "branches") c.branches = v.get<int>();
    else if (key == "use_rmkd") c.use_rmkd = v.get<bool>();
    else if (key == "use_dawe") c.use_dawe = v.get<bool>();
    else if (key == "lora_rank") c.lora_rank = v.get<int>();
    else if (key == "lora_scale") c.lora_scale = v.get<double>();
    else throw ValidationError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- head / decoder

PredictorHeadImpl::PredictorHeadImpl(int channels, Task task) : task_(task) {
  conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 1, 1)));
}

torch::Tensor PredictorHeadImpl::forward(const torch::Tensor& features) {
  auto y = conv_(features);
  return task_ == Task::classification ? torch::sigmoid(y) : y;
}

DecoderImpl::DecoderImpl(int stages, int base_channels, int top_extra) : stages_(stages), top_extra_(top_extra) {
  ups_.resize(stages - 1, nullptr);
  blocks_.resize(stages - 1, nullptr);
  for (int j = stages - 2; j >= 0; --j) {
    const int fine = base_channels << j;
    ups_[j] = register_module("up" + std::to_string(j),
                              torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(2 * fine, fine, 2).stride(2)));
    blocks_[j] = register_module("block" + std::to_string(j),
                                 layers::DoubleConv(2 * fine + (j == 0 ? top_extra : 0), fine));
  }
}

torch::Tensor DecoderImpl::forward(const FeaturePyramid& pyramid, const torch::Tensor& top_extra) {
  if (static_cast<int>(pyramid.size()) != stages_)
    throw ContractError("decoder expects " + std::to_string(stages_) + " levels, got " +
                        std::to_string(pyramid.size()));
  if ((top_extra_ > 0) != top_extra.defined()) throw ContractError("decoder: geo input presence does not match config");
  auto x = pyramid.back();
  for (int j = stages_ - 2; j >= 0; --j) {
    std::vector<torch::Tensor> parts{ups_[j]->forward(x), pyramid[j]};
    if (j == 0 && top_extra.defined()) parts.push_back(top_extra);
    x = blocks_[j]->forward(torch::cat(parts, 1));
  }
  return x;
}

// ---------------------------------------------------------------- U-Net

UNetImpl::UNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  for (int i = 0; i < config_.stages; ++i) {
    const int in = i == 0 ? config_.in_channels : config_.channels(i);
    encoders_.push_back(register_module("enc" + std::to_string(i), layers::DoubleConv(in, config_.channels(i + 1))));
  }
  decoder_ = register_module("decoder", Decoder(config_.stages, config_.base_channels, config_.geo_channels));
  head_ = register_module("head", PredictorHead(config_.base_channels, config_.task));
}

Output UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& geo) {
  if (x.dim() != 4 || x.size(1) != config_.in_channels)
    throw ValidationError("teacher input must be N x " + std::to_string(config_.in_channels) + " x H x W");
  const auto h = x.size(2);
  const auto w = x.size(3);
  torch::Tensor geo_p;
  if (config_.geo_channels > 0) {
    if (!geo.defined() || geo.size(1) != config_.geo_channels || geo.size(2) != h || geo.size(3) != w ||
        geo.size(0) != x.size(0))
      throw ValidationError("geo input must be N x " + std::to_string(config_.geo_channels) +
                            " x H x W matching the modalities");
    geo_p = layers::pad_to_multiple(geo, config_.pad_multiple());
  } else if (geo.defined()) {
    throw ValidationError("model was built without geo channels");
  }
  auto f = layers::pad_to_multiple(x, config_.pad_multiple());
  Output out;
  for (int i = 0; i < config_.stages; ++i) {
    if (i > 0) f = F::max_pool2d(f, F::MaxPool2dFuncOptions(2));
    f = encoders_[i]->forward(f);
    out.pyramid.push_back(f);
  }
  out.prediction = layers::crop_to(head_(decoder_(out.pyramid, geo_p)), h, w);
  return out;
}

// ---------------------------------------------------------------- PRE-Net

PRENetImpl::PRENetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.in_channels != 1) throw ValidationError("the student takes a single IR channel");
  if (config_.geo_channels != 0) throw ValidationError("the student takes no geo channels");
  const int c = config_.base_channels;
  stem_ = register_module("stem", layers::DoubleConv(1, c));
  if (config_.use_dawe) embed_ = register_module("embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, c, 3).padding(1)));
  for (int i = 1; i < config_.stages; ++i) {
    const auto suffix = std::to_string(i);
    masked_.push_back(register_module("masked" + suffix, comwe::MaskedConv(config_.channels(i), config_.channels(i + 1))));
    if (config_.use_dawe) dawe_.push_back(register_module("dawe" + suffix, comwe::Dawe(i, c, config_.channels(i + 1))));
    if (config_.use_rmkd)
      rmkd_.push_back(register_module("rmkd" + suffix, comwe::Rmkd(config_.channels(i + 1), config_.branches)));
  }
  decoder_ = register_module("decoder", Decoder(config_.stages, c, 0));
  head_ = register_module("head", PredictorHead(c, config_.task));
  if (config_.lora_rank > 0) {
    const int rank = config_.lora_rank;
    config_.lora_rank = 0;
    inject_lora(rank, config_.lora_scale);
  }
}

std::pair<int, int> PRENetImpl::level_shape(int level, int height, int width) const {
  const int m = config_.pad_multiple();
  const int hp = (height + m - 1) / m * m;
  const int wp = (width + m - 1) / m * m;
  return {hp >> level, wp >> level};
}

Output PRENetImpl::forward(const torch::Tensor& x, StudentMode mode, const StudentMasks& masks) {
  if (x.dim() != 4 || x.size(1) != 1) throw ValidationError("student input must be N x 1 x H x W");
  const int levels = comwe_levels();
  if (mode == StudentMode::inference && !masks.levels.empty())
    throw ContractError("masks supplied in inference mode");
  if (mode == StudentMode::train_masked && static_cast<int>(masks.levels.size()) != levels)
    throw ContractError("train_masked needs one mask set per CoMWE level (" + std::to_string(levels) + "), got " +
                        std::to_string(masks.levels.size()));
  if (!masks.ae.empty() && static_cast<int>(masks.ae.size()) != levels)
    throw ContractError("AE gates must cover every CoMWE level");

  const auto h = x.size(2);
  const auto w = x.size(3);
  auto xp = layers::pad_to_multiple(x, config_.pad_multiple());
  Output out;
  auto prev = stem_(xp);
  out.pyramid.push_back(prev);
  torch::Tensor embedded;
  if (config_.use_dawe) embedded = embed_(xp);
  static const std::vector<torch::Tensor> kNoRemasks;
  for (int i = 1; i <= levels; ++i) {
    const bool masked = mode == StudentMode::train_masked;
    auto fc = masked_[i - 1]->forward(prev, masked ? masks.levels[i - 1].conv : torch::Tensor());
    torch::Tensor fh;
    if (config_.use_dawe) fh = dawe_[i - 1]->forward(embedded);
    const torch::Tensor ae_mask = masks.ae.empty() ? torch::Tensor() : masks.ae[i - 1];
    torch::Tensor fr;
    if (config_.use_rmkd) {
      fr = rmkd_[i - 1]->forward(fc, fh, masked ? masks.levels[i - 1].remasks : kNoRemasks, ae_mask);
    } else {
      fr = fh.defined() ? fc + fh : fc;
    }
    out.pyramid.push_back(fr);
    prev = fr;
  }
  out.prediction = layers::crop_to(head_(decoder_(out.pyramid)), h, w);
  return out;
}

std::vector<comwe::AutoEncoder> PRENetImpl::autoencoders() {
  std::vector<comwe::AutoEncoder> out;
  for (auto& r : rmkd_) out.push_back(r->autoencoder());
  return out;
}

void PRENetImpl::inject_lora(int rank, double scale) {
  if (config_.lora_rank > 0) throw ContractError("adapters already attached");
  if (rmkd_.empty()) throw ContractError("student has no auto-encoders to adapt");
  for (auto& ae : autoencoders())
    for (auto conv : ae->convs()) conv->attach_lora(rank, scale);
  config_.lora_rank = rank;
  config_.lora_scale = scale;
  for (auto& p : parameters()) p.set_requires_grad(false);
  for (auto& ae : autoencoders())
    for (auto conv : ae->convs()) {
      conv->lora_a().set_requires_grad(true);
      conv->lora_b().set_requires_grad(true);
    }
  for (auto& p : decoder_->parameters()) p.set_requires_grad(true);
  for (auto& p : head_->parameters()) p.set_requires_grad(true);
}

// ---------------------------------------------------------------- grid wrappers

torch::Tensor grid_to_tensor(const FloatGrid& g) {
  auto t = torch::empty({1, 1, g.height, g.width}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), g.values.data(), g.values.size() * sizeof(float));
  return t;
}

FloatGrid tensor_to_grid(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  if (c.numel() != c.size(-1) * c.size(-2)) throw ContractError("tensor_to_grid expects a single 2D map");
  FloatGrid g(static_cast<int>(c.size(-2)), static_cast<int>(c.size(-1)));
  std::memcpy(g.values.data(), c.data_ptr<float>(), g.values.size() * sizeof(float));
  return g;
}

GridPrediction teacher_forward(UNet& model, const FloatGrid& ir, const FloatGrid& pmw, const FloatGrid& pr,
                               const std::vector<FloatGrid>& geo) {
  require_same_shape(ir, pmw, "teacher_forward");
  require_same_shape(ir, pr, "teacher_forward");
  for (const auto& g : geo) require_same_shape(ir, g, "teacher_forward geo");
  const auto dtype = model->parameters().front().scalar_type();
  auto x = torch::cat({grid_to_tensor(ir), grid_to_tensor(pmw), grid_to_tensor(pr)}, 1).to(dtype);
  torch::Tensor geo_t;
  if (!geo.empty()) {
    std::vector<torch::Tensor> parts;
    for (const auto& g : geo) parts.push_back(grid_to_tensor(g));
    geo_t = torch::cat(parts, 1).to(dtype);
  }
  torch::NoGradGuard no_grad;
  auto out = model->forward(x, geo_t);
  return {out.pyramid, tensor_to_grid(out.prediction)};
}

GridPrediction student_forward(PRENet& model, const FloatGrid& ir, StudentMode mode,
                               const std::optional<std::vector<comwe::MaskSet>>& masks) {
  if (mode == StudentMode::inference && masks) throw ContractError("masks supplied in inference mode");
  const auto dtype = model->parameters().front().scalar_type();
  StudentMasks sm;
  if (masks)
    for (const auto& ms : *masks) sm.levels.push_back(comwe::stack_masks({ms}, dtype));
  torch::NoGradGuard no_grad;
  auto out = model->forward(grid_to_tensor(ir).to(dtype), mode, sm);
  return {out.pyramid, tensor_to_grid(out.prediction)};
}

torch::Tensor fuse_predictions(const torch::Tensor& cls, const torch::Tensor& reg) {
  if (!cls.sizes().equals(reg.sizes())) throw ValidationError("fuse_predictions: shape mismatch");
  return torch::where(cls >= 0.5, torch::clamp_min(reg, 0.0), torch::zeros_like(reg));
}

PrecipGrid fuse_predictions(const FloatGrid& cls, const FloatGrid& reg) {
  require_same_shape(cls, reg, "fuse_predictions");
  PrecipGrid out(cls.height, cls.width, 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values[i] = cls.values[i] >= 0.5f ? std::max(reg.values[i], 0.0f) : 0.0f;
  return out;
}

std::int64_t count_parameters(torch::nn::Module& m, bool trainable_only) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters())
    if (!trainable_only || p.requires_grad()) n += p.numel();
  return n;
}

// ---------------------------------------------------------------- checkpoints

std::vector<store::NamedTensor> export_params(torch::nn::Module& m) {
  std::vector<store::NamedTensor> out;
  for (const auto& item : m.named_parameters()) {
    auto t = item.value().detach().to(torch::kFloat32).contiguous();
    store::NamedTensor nt;
    nt.name = item.key();
    nt.shape.assign(t.sizes().begin(), t.sizes().end());
    nt.data.resize(t.numel());
    std::memcpy(nt.data.data(), t.data_ptr<float>(), nt.data.size() * sizeof(float));
    out.push_back(std::move(nt));
  }
  return out;
}

store::ShapeSet shape_set(torch::nn::Module& m) {
  store::ShapeSet out;
  for (const auto& item : m.named_parameters())
    out.emplace_back(item.key(), std::vector<std::int64_t>(item.value().sizes().begin(), item.value().sizes().end()));
  return out;
}

void load_params(torch::nn::Module& m, const store::Checkpoint& ckpt) {
  store::verify_param_set(ckpt, shape_set(m));
  torch::NoGradGuard no_grad;
  for (auto& item : m.named_parameters()) {
    const auto* nt = ckpt.find(item.key());
    auto src = torch::from_blob(const_cast<float*>(nt->data.data()), item.value().sizes(), torch::kFloat32);
    item.value().copy_(src.to(item.value().scalar_type()));
  }
}

std::string tensor_hash(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  return sha256_hex(std::span<const std::byte>(reinterpret_cast<const std::byte*>(c.data_ptr<float>()),
                                               static_cast<std::size_t>(c.numel()) * sizeof(float)));
}

}  // namespace precipx::nets
