// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include <torch/torch.h>

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "precipx/config.hpp"
#include "precipx/errors.hpp"
#include "precipx/harness.hpp"

namespace {

using precipx::config::RunConfig;
namespace harness = precipx::harness;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run_id;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file merged over the defaults");
  sub->add_option("--set", c.sets, "Override a key, e.g. --set distill.lambda=0.1")->take_all();
  sub->add_option("--run-id", c.run_id, "Run identifier (runs/<run-id>/)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig() : RunConfig::load(c.config);
  for (const auto& s : c.sets) cfg.set(s);
  if (!c.run_id.empty()) cfg.set("run_id=\"" + c.run_id + "\"");
  torch::set_num_threads(cfg.doc().at("threads").get<int>());
  return cfg;
}

void print_hashes(const std::string& what, const std::vector<std::string>& hashes) {
  for (const auto& h : hashes) std::cout << what << " " << h << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Precipitation retrieval: data, teacher, distillation, adaptation and evaluation"};
  app.require_subcommand(1);
  Common common;
  int table = 0;
  std::string protocol;
  std::vector<std::string> rows;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* teacher = app.add_subcommand("train-teacher", "Train the multi-modal teacher");
  auto* dist = app.add_subcommand("distill", "Distill the IR-only student");
  auto* ad = app.add_subcommand("adapt", "Adapt the student to full-disc IR");
  auto* ev = app.add_subcommand("evaluate", "Evaluate the run's checkpoints");
  auto* rep = app.add_subcommand("report", "Write report.md/json and maps");
  auto* abl = app.add_subcommand("ablate", "Run an ablation table");
  for (auto* s : {gen, teacher, dist, ad, ev, rep, abl}) add_common(s, common);
  auto* tab = abl->add_option("--table", table, "Table number (2, 3, 4, 7, 8)");
  abl->add_option("--protocol", protocol, "comwe_components | kd_modes | finetune_modes | modality | noise")
      ->excludes(tab);
  abl->add_option("--rows", rows, "Only these rows")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(common);
    if (gen->parsed()) {
      std::cout << "dataset " << harness::gen_data(cfg) << "\n";
    } else if (teacher->parsed()) {
      print_hashes("teacher", harness::train_teacher(cfg));
    } else if (dist->parsed()) {
      print_hashes("student", harness::distill(cfg));
    } else if (ad->parsed()) {
      print_hashes("adapted", harness::adapt(cfg));
    } else if (ev->parsed()) {
      for (const auto& r : harness::evaluate(cfg)) {
        std::cout << r.model << " " << r.split;
        for (const auto& [name, v] : r.report.named())
          std::cout << " " << name << "=" << precipx::store::format_metric_value(v);
        std::cout << "\n";
      }
    } else if (rep->parsed()) {
      std::cout << harness::report(cfg).string() << "\n";
    } else if (abl->parsed()) {
      if (table == 0 && protocol.empty()) throw precipx::ConfigError("ablate needs --table or --protocol");
      const auto p = protocol.empty() ? harness::protocol_for_table(table) : harness::parse_protocol(protocol);
      std::cout << harness::run_ablation(p, cfg, rows).markdown();
    }
  } catch (const precipx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const precipx::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
