#pragma once

// Training strategies and loop: conventional complete training, one-to-one
// training at a fixed missing rate, and dynamic incomplete training with the
// linear curriculum ramp. Early stopping on validation total loss; the
// best-validation parameters are returned.

#include <cstdint>
#include <string>
#include <vector>

#include "mcthfr/data.hpp"
#include "mcthfr/hfr.hpp"
#include "mcthfr/model.hpp"
#include "mcthfr/optim.hpp"

namespace mcthfr {

enum class Strategy { Complete, OneToOne, Dynamic };

Strategy parse_strategy(const std::string& name);
const char* strategy_name(Strategy s);

struct TrainPlan {
  Strategy strategy = Strategy::Dynamic;
  double one_to_one_rate = 0.2;  // masking rate for the one-to-one strategy
  double p_miss = 0.2;           // Bernoulli step-masking rate under dynamic
  double alpha = 0.4;            // weight of L_GFA
  double beta = 0.6;             // weight of L_LFI
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch = 32;
  int max_epochs = 40;
  int patience = 8;
  int ramp_epochs = 5;  // epochs over which the incomplete fraction ramps 0 -> 1
  double val_fraction = 0.2;
  bool hfr = true;  // false trains the pure task branch (plain MCT)
  GfaMetric gfa_metric = GfaMetric::Cmd;
  int cmd_order = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Fraction of each batch masked under dynamic incomplete training; 1-indexed
// epochs, linear from 0 at epoch 1 to 1 at epoch ramp_epochs, clamped after.
double ramp_proportion(int epoch, int ramp_epochs = 5);

struct EpochLog {
  int epoch = 0;
  double train_ce = 0, train_gfa = 0, train_lfi = 0, train_total = 0;
  double val_ce = 0, val_gfa = 0, val_lfi = 0, val_total = 0;
  double val_ua = 0, val_wa = 0, val_uf1 = 0, val_wf1 = 0;
  double wall_sec = 0;
  std::vector<int> batch_incomplete_counts;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;     // 1-indexed epoch with minimum validation total loss
  int stopped_epoch = 0;  // last epoch that actually ran
  bool early_stopped = false;
};

struct TrainResult {
  MCTParams<float> mct;
  HFRParams<float> hfr;  // meaningful only when plan.hfr
  TrainLog log;
};

TrainResult train(const TrainPlan& plan, const ModelConfig& cfg, const std::vector<MultimodalSample>& train_set,
                  const std::vector<MultimodalSample>& val_set);

// Deterministic prefix/suffix split used by the CLI: the first
// (1 - val_fraction) of the file order trains, the rest validates.
std::pair<std::vector<MultimodalSample>, std::vector<MultimodalSample>> split_train_val(
    const std::vector<MultimodalSample>& all, double val_fraction);

// Line-delimited text log (one line per epoch) and a JSON summary.
void write_train_log(const std::string& path, const TrainLog& log);
void write_train_summary_json(const std::string& path, const TrainLog& log, const TrainPlan& plan,
                              const ModelConfig& cfg, const std::string& checkpoint_path);

}  // namespace mcthfr
