// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/adapt.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "precipx/errors.hpp"
#include "precipx/hash.hpp"
#include "precipx/layers.hpp"
#include "precipx/losses.hpp"

namespace precipx::adapt {

namespace F = torch::nn::functional;
using nlohmann::json;

namespace {
constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kRandMaskTag = 0x524d;
constexpr std::uint64_t kLoraTag = 0x4c52;
}  // namespace

TuneMode parse_tune_mode(const std::string& s) {
  if (s == "self") return TuneMode::self;
  if (s == "rand") return TuneMode::rand;
  if (s == "non") return TuneMode::non;
  throw ValidationError("unknown tune_mode '" + s + "' (expected self, rand or non)");
}

std::string to_string(TuneMode m) {
  switch (m) {
    case TuneMode::self: return "self";
    case TuneMode::rand: return "rand";
    case TuneMode::non: return "non";
  }
  return "?";
}

void AdaptConfig::validate() const {
  train.validate();
  if (K < 0) throw ValidationError("K must be >= 0");
  if (!(rho >= 0 && rho <= 1)) throw ValidationError("rho must lie in [0, 1]");
  if (rank < 1) throw ValidationError("rank must be >= 1");
}

json AdaptConfig::to_json() const {
  return {{"train", train.to_json()}, {"K", K},         {"rho", rho},
          {"rank", rank},             {"scale", scale}, {"tune_mode", to_string(mode)}};
}

// ---------------------------------------------------------------- error memory

ErrorMemory::ErrorMemory(std::int64_t samples, std::vector<std::pair<int, int>> level_shapes, int pad_multiple)
    : shapes_(std::move(level_shapes)),
      pad_multiple_(pad_multiple),
      current_(samples, std::vector<torch::Tensor>(shapes_.size())),
      pending_(samples, std::vector<torch::Tensor>(shapes_.size())) {}

torch::Tensor ErrorMemory::pool(const torch::Tensor& pixel_loss, int level) const {
  auto x = pixel_loss.dim() == 2 ? pixel_loss.unsqueeze(0).unsqueeze(0) : pixel_loss;
  x = layers::pad_to_multiple(x, pad_multiple_);
  const int k = 1 << level;
  return F::avg_pool2d(x, F::AvgPool2dFuncOptions(k).stride(k));
}

void ErrorMemory::store(const std::vector<std::int64_t>& samples, const torch::Tensor& pixel_loss) {
  if (pixel_loss.size(0) != static_cast<std::int64_t>(samples.size()))
    throw ContractError("ErrorMemory::store: batch size does not match the sample list");
  auto loss = pixel_loss.detach();
  for (std::size_t l = 0; l < shapes_.size(); ++l) {
    auto pooled = pool(loss, static_cast<int>(l) + 1);
    if (pooled.size(2) != shapes_[l].first || pooled.size(3) != shapes_[l].second)
      throw ContractError("ErrorMemory: pooled map does not match level " + std::to_string(l + 1));
    for (std::size_t b = 0; b < samples.size(); ++b) pending_[samples[b]][l] = pooled[b][0].clone();
  }
}

void ErrorMemory::commit() {
  for (std::size_t s = 0; s < pending_.size(); ++s)
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      if (!pending_[s][l].defined()) throw ContractError("ErrorMemory::commit: sample " + std::to_string(s) +
                                                         " was not refreshed this epoch");
      current_[s][l] = pending_[s][l];
      pending_[s][l] = torch::Tensor();
    }
  ready_ = true;
}

const torch::Tensor& ErrorMemory::region(std::int64_t sample, int level) const {
  if (!ready_) throw ContractError("ErrorMemory read before the first refresh");
  return current_.at(sample).at(level - 1);
}

double compute_pmax(const torch::Tensor& region, double rho) { return rho * region.max().item<double>(); }

torch::Tensor build_self_mask(const torch::Tensor& region, double pmax) {
  return (region >= pmax).to(torch::kFloat32);
}

torch::Tensor build_rand_mask(int height, int width, std::int64_t ones, std::uint64_t seed) {
  const std::int64_t total = static_cast<std::int64_t>(height) * width;
  if (ones < 0 || ones > total) throw ContractError("build_rand_mask: ones out of range");
  std::vector<std::int64_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto m = torch::zeros({height, width}, torch::kFloat32);
  auto* p = m.data_ptr<float>();
  for (std::int64_t i = 0; i < ones; ++i) p[order[i]] = 1.0f;
  return m;
}

// ---------------------------------------------------------------- training

nets::PRENet inject_lora(const store::Checkpoint& student, int rank, double scale) {
  if (student.header.model_kind != nets::kKindStudent)
    throw IncompatibleError("adaptation needs a stage-I student checkpoint, got '" + student.header.model_kind + "'");
  auto model = distill::load_student(student);
  model->inject_lora(rank, scale);
  return model;
}

AdaptResult train_full_disc(const dataset::FullDiscSplit& train, const dataset::FullDiscSplit& val,
                            const store::Checkpoint& student, const AdaptConfig& config) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("train_full_disc: empty split");
  const auto& tc = config.train;
  torch::manual_seed(derive_seed(tc.seed, kLoraTag));
  auto model = inject_lora(student, config.rank, config.scale);
  const auto task = model->config().task;
  const int levels = model->comwe_levels();

  std::vector<torch::Tensor> trainable;
  for (auto& p : model->parameters())
    if (p.requires_grad()) trainable.push_back(p);
  torch::optim::RMSprop opt(trainable, torch::optim::RMSpropOptions(tc.lr));

  const auto x_train = train.student_input();
  const auto y_train = dataset::make_target(train.precip, task);
  const auto w_train = distill::detail::train_weights(tc, task, y_train);
  const auto x_val = val.student_input();
  const auto y_val = dataset::make_target(val.precip, task);
  const int height = static_cast<int>(x_train.size(2));
  const int width = static_cast<int>(x_train.size(3));

  std::vector<std::pair<int, int>> shapes;
  for (int l = 1; l <= levels; ++l) shapes.push_back(model->level_shape(l, height, width));
  ErrorMemory memory(train.size(), shapes, model->config().pad_multiple());

  store::CheckpointHeader header;
  header.model_kind = nets::kKindStudentLora;
  header.model_config = model->config().to_json();
  header.config_echo = config.to_json();
  header.stage = "adapt";
  header.seed = tc.seed;
  header.parent_hash = store::checkpoint_hash(student);

  AdaptResult out;
  distill::detail::BestKeeper keeper{task};
  int step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    distill::detail::set_lr(opt, tc.lr_at(epoch));
    model->train();
    const bool masking = config.mode != TuneMode::non && epoch > config.K && memory.ready();
    double sum = 0;
    int count = 0;
    for (const auto& idx :
         distill::detail::batches(train.size(), tc.batch_size, derive_seed(tc.seed, kShuffleTag, epoch))) {
      ++step;
      nets::StudentMasks masks;
      if (masking) {
        for (int l = 1; l <= levels; ++l) {
          std::vector<torch::Tensor> per_sample;
          for (std::int64_t s : idx) {
            const auto& region = memory.region(s, l);
            auto m = build_self_mask(region, compute_pmax(region, config.rho));
            const auto ones = m.sum().item<std::int64_t>();
            if (config.mode == TuneMode::rand)
              m = build_rand_mask(shapes[l - 1].first, shapes[l - 1].second, ones,
                                  derive_seed(tc.seed, kRandMaskTag, derive_seed(epoch, step), derive_seed(s, l)));
            out.masks.push_back({epoch, step, l, s, ones, m.numel()});
            per_sample.push_back(m.unsqueeze(0).unsqueeze(0));
          }
          masks.ae.push_back(torch::cat(per_sample, 0));
        }
      }
      auto pred = model->forward(dataset::take(x_train, idx), nets::StudentMode::inference, masks).prediction;
      auto tl = losses::task_loss(pred, dataset::take(y_train, idx), task, distill::detail::take_opt(w_train, idx));
      memory.store(idx, tl.map);
      const double v = tl.mean.item<double>();
      distill::detail::check_finite(v, epoch, step);
      opt.zero_grad();
      tl.mean.backward();
      opt.step();
      out.result.steps.push_back({epoch, step, v, 0, 0, v});
      sum += v;
      ++count;
    }
    memory.commit();
    model->eval();
    auto pred = distill::predict(model, x_val, tc.batch_size);
    distill::EpochSummary e;
    e.epoch = epoch;
    e.train_loss = sum / count;
    e.val_loss = losses::task_loss(pred, y_val, task).mean.item<double>();
    if (task == nets::Task::classification) e.val_csi = distill::tensor_csi(pred, val.precip);
    out.result.epochs.push_back(e);
    keeper.offer(e, *model, header);
  }
  out.result.checkpoint = std::move(keeper.checkpoint);
  out.result.best_epoch = keeper.best_epoch;
  return out;
}

distill::TrainResult train_scratch(const dataset::FullDiscSplit& train, const dataset::FullDiscSplit& val,
                                   const nets::ModelConfig& model_config, const distill::TrainConfig& tc) {
  tc.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("train_scratch: empty split");
  auto cfg = model_config;
  cfg.in_channels = 1;
  cfg.geo_channels = 0;
  const auto task = cfg.task;
  torch::manual_seed(tc.seed);
  nets::UNet model(cfg);
  torch::optim::RMSprop opt(model->parameters(), torch::optim::RMSpropOptions(tc.lr));

  const auto x_train = train.student_input();
  const auto y_train = dataset::make_target(train.precip, task);
  const auto w_train = distill::detail::train_weights(tc, task, y_train);
  const auto x_val = val.student_input();
  const auto y_val = dataset::make_target(val.precip, task);

  store::CheckpointHeader header;
  header.model_kind = nets::kKindScratch;
  header.model_config = cfg.to_json();
  header.config_echo = {{"model", cfg.to_json()}, {"train", tc.to_json()}};
  header.stage = "scratch";
  header.seed = tc.seed;

  distill::TrainResult result;
  distill::detail::BestKeeper keeper{task};
  int step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    distill::detail::set_lr(opt, tc.lr_at(epoch));
    model->train();
    double sum = 0;
    int count = 0;
    for (const auto& idx :
         distill::detail::batches(train.size(), tc.batch_size, derive_seed(tc.seed, kShuffleTag, epoch))) {
      ++step;
      auto pred = model->forward(dataset::take(x_train, idx)).prediction;
      auto loss = losses::task_loss(pred, dataset::take(y_train, idx), task, distill::detail::take_opt(w_train, idx)).mean;
      const double v = loss.item<double>();
      distill::detail::check_finite(v, epoch, step);
      opt.zero_grad();
      loss.backward();
      opt.step();
      result.steps.push_back({epoch, step, v, 0, 0, v});
      sum += v;
      ++count;
    }
    model->eval();
    auto pred = distill::predict(model, x_val, torch::Tensor(), tc.batch_size);
    distill::EpochSummary e;
    e.epoch = epoch;
    e.train_loss = sum / count;
    e.val_loss = losses::task_loss(pred, y_val, task).mean.item<double>();
    if (task == nets::Task::classification) e.val_csi = distill::tensor_csi(pred, val.precip);
    result.epochs.push_back(e);
    keeper.offer(e, *model, header);
  }
  result.checkpoint = std::move(keeper.checkpoint);
  result.best_epoch = keeper.best_epoch;
  return result;
}

}  // namespace precipx::adapt
