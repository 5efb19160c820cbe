#pragma once

// Classification metrics, missing-rate sweeps with AUILC, analytic
// parameter/MAC counters, and the finite-difference gradient checker.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcthfr/data.hpp"
#include "mcthfr/hfr.hpp"
#include "mcthfr/model.hpp"

namespace mcthfr {

struct MetricsRecord {
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][pred]
  double ua = 0;   // macro recall over classes with support
  double wa = 0;   // overall accuracy
  double uf1 = 0;  // macro F1 over classes with support
  double wf1 = 0;  // support-weighted F1
};

// Classes with zero support are excluded from the macro averages.
MetricsRecord compute_metrics(const std::vector<int>& preds, const std::vector<int>& truth, int classes);

// Trapezoid-rule area under the score curve over strictly increasing rates.
double auilc(const std::vector<double>& scores, const std::vector<double>& rates);

struct SweepPoint {
  double rate = 0;
  std::uint64_t mask_seed = 0;
  MetricsRecord metrics;
};

struct RateSummary {
  double rate = 0;
  double ua = 0, wa = 0, uf1 = 0, wf1 = 0;  // means over mask seeds
};

struct SweepReport {
  std::vector<double> rates;
  std::vector<SweepPoint> points;      // rates x mask seeds, rate-major
  std::vector<RateSummary> per_rate;   // mean over mask seeds
  bool has_auilc = false;              // needs >= 2 rates
  double auilc_ua = 0, auilc_wa = 0, auilc_uf1 = 0, auilc_wf1 = 0;
  int mask_seed_count = 0;
  std::uint64_t mask_seed_base = 0;
};

struct SweepOptions {
  std::vector<double> rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int mask_seeds = 5;
  std::uint64_t mask_seed_base = 0;
  std::array<int, kNumModalities> eval_max_len = {0, 0, 0};  // 0 = use cfg.max_len
  int threads = 0;                                           // 0 = hardware choice
};

// Masks the evaluation set at each rate, runs the task branch only, and
// averages metrics over mask seeds. Deterministic regardless of threading.
SweepReport sweep(const MCTParams<float>& params, const ModelConfig& cfg,
                  const std::vector<MultimodalSample>& eval_set, const SweepOptions& opts);

// Plain predictions on an unmasked set (rate-0 shortcut used by tests).
std::vector<int> predict(const MCTParams<float>& params, const ModelConfig& cfg,
                         const std::vector<MultimodalSample>& eval_set,
                         const std::array<int, kNumModalities>& max_len);

void write_sweep_csv(const std::string& path, const SweepReport& report);
void write_sweep_json(const std::string& path, const SweepReport& report, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// complexity counters

enum class LayerKind { Mrau, PairwiseReference };

struct CountReport {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

// One fusion layer. The pairwise reference models a directional-pairwise
// design: M(M-1) cross-attention blocks with independent projections, each
// with the same output/LN/FFN structure as one MRAU reinforcement.
CountReport count_layer(const ModelConfig& cfg, LayerKind kind, const std::array<int, kNumModalities>& lengths);

// Whole model; training mode includes the reconstruction branch, inference
// mode omits it.
CountReport count_model(const ModelConfig& cfg, bool training_mode, bool hfr_enabled,
                        const std::array<int, kNumModalities>& lengths);

// Exact parameter total by enumerating allocated tensors (oracle for the
// analytic formulas).
std::int64_t enumerate_params(const ModelConfig& cfg, bool include_hfr);

// ---------------------------------------------------------------------------
// gradient check

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0;
  std::string worst_group;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

struct GradCheckOptions {
  GfaMetric metric = GfaMetric::Cmd;
  double alpha = 0.4;
  double beta = 0.6;
  int cmd_order = 5;
  double step = 1e-5;
  std::string fault_group;   // test hook: scales one group's analytic gradient
  double fault_scale = 1.0;
};

// Tiny-config default used by the CLI and the acceptance suite.
ModelConfig gradcheck_config();

// Compares analytic gradients of the composite training loss against central
// finite differences at 64-bit on a tiny synthetic batch.
GradCheckReport gradcheck(const ModelConfig& cfg, const GradCheckOptions& opts);

}  // namespace mcthfr
