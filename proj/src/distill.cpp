// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "precipx/errors.hpp"
#include "precipx/hash.hpp"
#include "precipx/losses.hpp"

namespace precipx::distill {

using nlohmann::json;

namespace {
constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kMaskTag = 0x4d41;
}  // namespace

// ---------------------------------------------------------------- configs

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0)) throw ValidationError("lr must be > 0");
  if (lr_decay_every < 1) throw ValidationError("lr_decay_every must be >= 1");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) throw ValidationError("lr_decay_factor must lie in (0, 1]");
}

double TrainConfig::lr_at(int epoch) const {
  return lr * std::pow(lr_decay_factor, static_cast<double>((epoch - 1) / lr_decay_every));
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_decay_every", lr_decay_every},
          {"lr_decay_factor", lr_decay_factor},
          {"seed", seed},
          {"balance_classes", balance_classes}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "lr_decay_every") c.lr_decay_every = v.get<int>();
    else if (key == "lr_decay_factor") c.lr_decay_factor = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "balance_classes") c.balance_classes = v.get<bool>();
    else throw ValidationError("unknown training key '" + key + "'");
  }
  c.validate();
  return c;
}

json TeacherConfig::to_json() const {
  return {{"model", model.to_json()},
          {"train", train.to_json()},
          {"modalities", {{"ir", modalities.ir}, {"pmw", modalities.pmw}, {"pr", modalities.pr}}}};
}

KdMode parse_kd_mode(const std::string& s) {
  if (s == "none") return KdMode::none;
  if (s == "vanilla_kd") return KdMode::vanilla_kd;
  if (s == "comwe") return KdMode::comwe;
  throw ValidationError("unknown kd_mode '" + s + "' (expected none, vanilla_kd or comwe)");
}

std::string to_string(KdMode m) {
  switch (m) {
    case KdMode::none: return "none";
    case KdMode::vanilla_kd: return "vanilla_kd";
    case KdMode::comwe: return "comwe";
  }
  return "?";
}

void DistillConfig::validate() const {
  model.validate();
  train.validate();
  if (lambda < 0 || gamma < 0) throw ValidationError("lambda and gamma must be >= 0");
  if (!(alpha >= 0 && alpha < 1)) throw ValidationError("alpha must lie in [0, 1)");
  if (n < 1) throw ValidationError("n must be >= 1");
  if (kd_mode == KdMode::comwe && model.use_rmkd && n != 1 && n != model.branches)
    throw ValidationError("re-mask count n must be 1 or equal the branch count");
}

json DistillConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"lambda", lambda}, {"gamma", gamma},
          {"alpha", alpha},           {"n", n},                   {"kd_mode", to_string(kd_mode)}};
}

// ---------------------------------------------------------------- helpers

double selection_score(const EpochSummary& e, nets::Task task) {
  if (task == nets::Task::classification) return e.val_csi.value_or(-1.0);
  return -e.val_loss;
}

ClassWeights ClassWeights::from_target(const torch::Tensor& binary_target) {
  const double p = binary_target.mean().item<double>();
  if (!(p > 0 && p < 1)) return {};
  return {0.5 / p, 0.5 / (1 - p)};
}

torch::Tensor ClassWeights::map(const torch::Tensor& binary_target) const {
  return binary_target * (rain - dry) + dry;
}

metrics::Score tensor_csi(const torch::Tensor& prob, const torch::Tensor& precip) {
  auto p = prob >= 0.5;
  auto t = precip >= metrics::kRainThreshold;
  const auto hits = (p & t).sum().item<std::int64_t>();
  const auto misses = (~p & t).sum().item<std::int64_t>();
  const auto fa = (p & ~t).sum().item<std::int64_t>();
  const auto denom = hits + misses + fa;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

torch::Tensor predict(nets::UNet& model, const torch::Tensor& x, const torch::Tensor& geo, int batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(x.size(0), i + batch_size);
    auto g = geo.defined() ? geo.slice(0, i, end) : torch::Tensor();
    parts.push_back(model->forward(x.slice(0, i, end), g).prediction);
  }
  return torch::cat(parts, 0);
}

torch::Tensor predict(nets::PRENet& model, const torch::Tensor& x, int batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += batch_size)
    parts.push_back(model->forward(x.slice(0, i, std::min<std::int64_t>(x.size(0), i + batch_size))).prediction);
  return torch::cat(parts, 0);
}

nets::UNet load_teacher(const store::Checkpoint& ckpt) {
  const auto& kind = ckpt.header.model_kind;
  if (kind != nets::kKindTeacher && kind != nets::kKindScratch)
    throw IncompatibleError("expected a teacher or scratch checkpoint, got '" + kind + "'");
  nets::UNet model(nets::ModelConfig::from_json(ckpt.header.model_config));
  nets::load_params(*model, ckpt);
  return model;
}

nets::PRENet load_student(const store::Checkpoint& ckpt) {
  const auto& kind = ckpt.header.model_kind;
  if (kind != nets::kKindStudent && kind != nets::kKindStudentLora)
    throw IncompatibleError("expected a student checkpoint, got '" + kind + "'");
  nets::PRENet model(nets::ModelConfig::from_json(ckpt.header.model_config));
  nets::load_params(*model, ckpt);
  return model;
}

nets::StudentMasks sample_masks(const nets::PRENetImpl& model, std::int64_t batch, int height, int width,
                                double alpha, int n, std::uint64_t seed) {
  nets::StudentMasks out;
  for (int level = 1; level <= model.comwe_levels(); ++level) {
    const auto [h, w] = model.level_shape(level, height, width);
    std::vector<comwe::MaskSet> sets;
    for (std::int64_t s = 0; s < batch; ++s)
      sets.push_back(comwe::build_maskset(level, h, w, alpha, n, model.config().patch_at(level),
                                          derive_seed(seed, static_cast<std::uint64_t>(s), level)));
    out.levels.push_back(comwe::stack_masks(sets));
  }
  return out;
}

namespace detail {

std::vector<std::vector<std::int64_t>> batches(std::int64_t n, int batch_size, std::uint64_t seed) {
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::int64_t>> out;
  for (std::int64_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + i, order.begin() + std::min<std::int64_t>(n, i + batch_size));
  return out;
}

void check_finite(double loss, int epoch, int step) {
  if (!std::isfinite(loss))
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
}

}  // namespace detail

namespace detail {

void set_lr(torch::optim::RMSprop& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::RMSpropOptions&>(group.options()).lr(lr);
}

torch::Tensor train_weights(const TrainConfig& tc, nets::Task task, const torch::Tensor& target) {
  if (!tc.balance_classes || task != nets::Task::classification) return {};
  return ClassWeights::from_target(target).map(target);
}

torch::Tensor take_opt(const torch::Tensor& t, const std::vector<std::int64_t>& index) {
  return t.defined() ? dataset::take(t, index) : torch::Tensor();
}

void BestKeeper::offer(const EpochSummary& e, torch::nn::Module& m, store::CheckpointHeader header) {
  const double score = selection_score(e, task);
  if (best && !(score > *best)) return;
  best = score;
  best_epoch = e.epoch;
  header.epoch = e.epoch;
  checkpoint.header = std::move(header);
  checkpoint.params = nets::export_params(m);
}

}  // namespace detail

namespace {

using detail::BestKeeper;
using detail::set_lr;

dataset::Modalities modalities_from(const store::Checkpoint& teacher) {
  dataset::Modalities m;
  const auto& echo = teacher.header.config_echo;
  if (echo.contains("modalities")) {
    const auto& j = echo.at("modalities");
    m.ir = j.value("ir", true);
    m.pmw = j.value("pmw", true);
    m.pr = j.value("pr", true);
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------- teacher

TrainResult train_teacher(const dataset::SwathSplit& train, const dataset::SwathSplit& val,
                          const TeacherConfig& config) {
  config.train.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("train_teacher: empty split");
  const auto task = config.model.task;
  const auto& tc = config.train;

  torch::manual_seed(tc.seed);
  nets::UNet model(config.model);
  torch::optim::RMSprop opt(model->parameters(), torch::optim::RMSpropOptions(tc.lr));

  const auto x_train = train.teacher_input(config.modalities);
  const auto y_train = dataset::make_target(train.precip, task);
  const auto w_train = detail::train_weights(tc, task, y_train);
  const auto x_val = val.teacher_input(config.modalities);
  const auto y_val = dataset::make_target(val.precip, task);
  const bool geo = config.model.geo_channels > 0;

  store::CheckpointHeader header;
  header.model_kind = nets::kKindTeacher;
  header.model_config = config.model.to_json();
  header.config_echo = config.to_json();
  header.stage = "teacher";
  header.seed = tc.seed;

  TrainResult result;
  BestKeeper keeper{task};
  int step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    set_lr(opt, tc.lr_at(epoch));
    model->train();
    double sum = 0;
    int count = 0;
    for (const auto& idx : detail::batches(train.size(), tc.batch_size, derive_seed(tc.seed, kShuffleTag, epoch))) {
      ++step;
      auto out = model->forward(dataset::take(x_train, idx), geo ? dataset::take(train.geo, idx) : torch::Tensor());
      auto loss = losses::task_loss(out.prediction, dataset::take(y_train, idx), task, detail::take_opt(w_train, idx)).mean;
      const double v = loss.item<double>();
      detail::check_finite(v, epoch, step);
      opt.zero_grad();
      loss.backward();
      opt.step();
      result.steps.push_back({epoch, step, v, 0, 0, v});
      sum += v;
      ++count;
    }
    model->eval();
    auto pred = predict(model, x_val, geo ? val.geo : torch::Tensor(), tc.batch_size);
    EpochSummary e;
    e.epoch = epoch;
    e.train_loss = sum / count;
    e.val_loss = losses::task_loss(pred, y_val, task).mean.item<double>();
    if (task == nets::Task::classification) e.val_csi = tensor_csi(pred, val.precip);
    result.epochs.push_back(e);
    keeper.offer(e, *model, header);
  }
  result.checkpoint = std::move(keeper.checkpoint);
  result.best_epoch = keeper.best_epoch;
  return result;
}

// ---------------------------------------------------------------- student

TrainResult train_student_distill(const dataset::SwathSplit& train, const dataset::SwathSplit& val,
                                  const store::Checkpoint* teacher_ckpt, const DistillConfig& config) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("train_student_distill: empty split");
  const bool kd = config.kd_mode != KdMode::none;
  if (kd && teacher_ckpt == nullptr) throw MissingPrerequisite("distillation needs a teacher checkpoint");
  const auto task = config.model.task;
  const auto& tc = config.train;

  torch::manual_seed(tc.seed);
  nets::PRENet student(config.model);
  const int levels = student->comwe_levels();

  std::vector<torch::Tensor> params = student->parameters();
  torch::nn::ModuleList projections;
  std::vector<std::vector<torch::Tensor>> teacher_levels;  // [level][sample batch]
  if (kd) {
    auto teacher = load_teacher(*teacher_ckpt);
    const auto& tcfg = teacher->config();
    if (tcfg.stages != config.model.stages)
      throw IncompatibleError("teacher has " + std::to_string(tcfg.stages) + " stages, student " +
                              std::to_string(config.model.stages));
    if (tcfg.task != task) throw IncompatibleError("teacher and student tasks differ");
    for (int i = 1; i <= levels; ++i)
      projections->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(config.model.channels(i + 1), tcfg.channels(i + 1), 1)));
    for (auto& p : projections->parameters()) params.push_back(p);
    // The teacher is frozen, so its pyramid over the training set is fixed.
    for (auto& p : teacher->parameters()) p.set_requires_grad(false);
    teacher->eval();
    torch::NoGradGuard no_grad;
    const auto tx = train.teacher_input(modalities_from(*teacher_ckpt));
    const bool geo = tcfg.geo_channels > 0;
    teacher_levels.assign(levels, {});
    for (std::int64_t i = 0; i < train.size(); i += tc.batch_size) {
      const auto end = std::min<std::int64_t>(train.size(), i + tc.batch_size);
      auto out = teacher->forward(tx.slice(0, i, end), geo ? train.geo.slice(0, i, end) : torch::Tensor());
      for (int l = 0; l < levels; ++l) teacher_levels[l].push_back(out.pyramid[l + 1]);
    }
  }
  // Teacher features are standardised per channel over the training set.
  std::vector<torch::Tensor> teacher_stack;
  for (auto& parts : teacher_levels) {
    auto t = torch::cat(parts, 0);
    auto mean = t.mean({0, 2, 3}, true);
    auto std = t.std({0, 2, 3}, false, true).clamp_min(1e-6);
    teacher_stack.push_back((t - mean) / std);
  }

  torch::optim::RMSprop opt(params, torch::optim::RMSpropOptions(tc.lr));
  const auto x_train = train.student_input();
  const auto y_train = dataset::make_target(train.precip, task);
  const auto w_train = detail::train_weights(tc, task, y_train);
  const auto x_val = val.student_input();
  const auto y_val = dataset::make_target(val.precip, task);
  const int height = static_cast<int>(x_train.size(2));
  const int width = static_cast<int>(x_train.size(3));
  const bool masked = config.kd_mode == KdMode::comwe && config.model.use_rmkd;

  store::CheckpointHeader header;
  header.model_kind = nets::kKindStudent;
  header.model_config = config.model.to_json();
  header.config_echo = config.to_json();
  header.stage = "distill";
  header.seed = tc.seed;
  if (teacher_ckpt && config.kd_mode != KdMode::none) header.parent_hash = store::checkpoint_hash(*teacher_ckpt);

  TrainResult result;
  BestKeeper keeper{task};
  int step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    set_lr(opt, tc.lr_at(epoch));
    student->train();
    double sum = 0;
    int count = 0;
    for (const auto& idx : detail::batches(train.size(), tc.batch_size, derive_seed(tc.seed, kShuffleTag, epoch))) {
      ++step;
      const auto batch = static_cast<std::int64_t>(idx.size());
      nets::Output out;
      if (masked) {
        auto masks = sample_masks(*student, batch, height, width, config.alpha, config.n,
                                  derive_seed(tc.seed, kMaskTag, epoch, step));
        out = student->forward(dataset::take(x_train, idx), nets::StudentMode::train_masked, masks);
      } else {
        out = student->forward(dataset::take(x_train, idx));
      }
      auto task_l = losses::task_loss(out.prediction, dataset::take(y_train, idx), task, detail::take_opt(w_train, idx)).mean;
      auto total = task_l;
      LossReport r{epoch, step, task_l.item<double>(), 0, 0, 0};
      if (kd) {
        std::vector<torch::Tensor> s_proj, t_feat;
        for (int l = 0; l < levels; ++l) {
          s_proj.push_back(projections[l]->as<torch::nn::Conv2d>()->forward(out.pyramid[l + 1]));
          t_feat.push_back(dataset::take(teacher_stack[l], idx));
        }
        auto feat = losses::feat_loss(s_proj.back(), t_feat.back());
        r.feat = feat.item<double>();
        total = total + config.lambda * feat;
        if (masked) {
          auto rec = losses::rec_loss(s_proj, t_feat);
          r.rec = rec.item<double>();
          total = total + config.gamma * rec;
        }
      }
      r.total = total.item<double>();
      detail::check_finite(r.total, epoch, step);
      opt.zero_grad();
      total.backward();
      opt.step();
      result.steps.push_back(r);
      sum += r.task;
      ++count;
    }
    student->eval();
    auto pred = predict(student, x_val, tc.batch_size);
    EpochSummary e;
    e.epoch = epoch;
    e.train_loss = sum / count;
    e.val_loss = losses::task_loss(pred, y_val, task).mean.item<double>();
    if (task == nets::Task::classification) e.val_csi = tensor_csi(pred, val.precip);
    result.epochs.push_back(e);
    keeper.offer(e, *student, header);
  }
  result.checkpoint = std::move(keeper.checkpoint);
  result.best_epoch = keeper.best_epoch;
  return result;
}

}  // namespace precipx::distill
