#pragma once

// Run configuration: a strict sectioned key=value text format covering data
// generation, model architecture, training, and evaluation. Unknown sections
// or keys are rejected with every offender listed; parse -> serialize ->
// parse is a fixed point. Seed keys have no defaults and must be provided
// (in the file or by a CLI flag) before validate() passes.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcthfr/data.hpp"
#include "mcthfr/model.hpp"
#include "mcthfr/trainer.hpp"

namespace mcthfr {

struct EvalSpec {
  std::vector<double> rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int mask_seeds = 5;
  std::optional<std::uint64_t> mask_seed_base;  // seed-bearing: no default
};

struct RunConfig {
  GenConfig data;
  std::optional<std::uint64_t> data_seed;
  int gen_n = 2500;

  ModelConfig model;

  TrainPlan train;
  std::optional<std::uint64_t> train_seed;

  EvalSpec eval;

  // Parses text; throws std::invalid_argument listing every unknown section,
  // unknown key, and malformed value.
  static RunConfig parse(const std::string& text);
  static RunConfig parse_file(const std::string& path);

  // Canonical rendering: fixed section/key order, shortest-round-trip floats.
  std::string serialize() const;

  // Checks cross-field invariants and that all seed keys are present; resolves
  // the seeds into data.seed / train.seed / eval.mask_seed_base.
  void validate();
};

}  // namespace mcthfr
