// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/dataset.hpp"

#include "precipx/errors.hpp"
#include "precipx/metrics.hpp"
#include "precipx/store.hpp"

namespace precipx::dataset {

torch::Tensor normalize_ir(const torch::Tensor& kelvin) {
  return (kelvin - datagen::kIrClearSkyK) / datagen::kIrScaleK;
}

torch::Tensor make_target(const torch::Tensor& precip, nets::Task task) {
  if (task == nets::Task::classification) return (precip >= metrics::kRainThreshold).to(precip.scalar_type());
  return torch::log1p(torch::clamp_min(precip, 0.0));
}

torch::Tensor invert_regression(const torch::Tensor& y) { return torch::clamp_min(torch::expm1(y), 0.0); }

std::string Modalities::name() const {
  std::string s;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += n;
  };
  add(ir, "ir");
  add(pmw, "pmw");
  add(pr, "pr");
  return s.empty() ? "none" : s;
}

torch::Tensor SwathSplit::teacher_input(const Modalities& m) const {
  auto zero_unless = [](const torch::Tensor& t, bool on) { return on ? t : torch::zeros_like(t); };
  return torch::cat({zero_unless(normalize_ir(ir_k), m.ir), zero_unless(pmw, m.pmw), zero_unless(pr, m.pr)}, 1);
}

namespace {

torch::Tensor stack_var(const std::vector<store::GridPack>& packs, const std::string& name) {
  std::vector<torch::Tensor> parts;
  parts.reserve(packs.size());
  for (const auto& p : packs) parts.push_back(nets::grid_to_tensor(p.grid(name)));
  return torch::cat(parts, 0);
}

std::vector<const datagen::ManifestEntry*> entries_or_throw(const datagen::DatasetManifest& manifest,
                                                            const std::string& partition) {
  auto entries = manifest.partition(partition);
  if (entries.empty()) throw ValidationError("dataset has no scenes in partition '" + partition + "'");
  return entries;
}

}  // namespace

SwathSplit load_swath(const datagen::DatasetManifest& manifest, const std::string& partition) {
  std::vector<store::GridPack> packs;
  SwathSplit s;
  for (const auto* e : entries_or_throw(manifest, partition)) {
    packs.push_back(store::read_gridpack(manifest.root / e->swath_path));
    if (store::gridpack_hash(manifest.root / e->swath_path) != e->swath_hash)
      throw IntegrityError("swath pack for scene " + e->scene_id + " does not match the dataset manifest");
    s.scene_ids.push_back(e->scene_id);
  }
  s.ir_k = stack_var(packs, "ir");
  s.pmw = stack_var(packs, "pmw");
  s.pr = stack_var(packs, "pr");
  s.geo = torch::cat({stack_var(packs, "elev"), stack_var(packs, "lat"), stack_var(packs, "lon")}, 1);
  s.precip = stack_var(packs, "precip");
  return s;
}

FullDiscSplit load_fulldisc(const datagen::DatasetManifest& manifest, const std::string& partition) {
  std::vector<store::GridPack> packs;
  FullDiscSplit s;
  for (const auto* e : entries_or_throw(manifest, partition)) {
    packs.push_back(store::read_gridpack(manifest.root / e->fulldisc_path));
    if (store::gridpack_hash(manifest.root / e->fulldisc_path) != e->fulldisc_hash)
      throw IntegrityError("full-disc pack for scene " + e->scene_id + " does not match the dataset manifest");
    s.scene_ids.push_back(e->scene_id);
  }
  s.ir_k = stack_var(packs, "ir");
  s.precip = stack_var(packs, "precip");
  return s;
}

torch::Tensor take(const torch::Tensor& t, const std::vector<std::int64_t>& index) {
  auto idx = torch::tensor(index, torch::kLong);
  return t.index_select(0, idx);
}

}  // namespace precipx::dataset
