// Command-line frontend: dataset generation, training, missing-rate sweeps,
// gradient checking, and complexity reports.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mcthfr/checkpoint.hpp"
#include "mcthfr/config.hpp"
#include "mcthfr/data.hpp"
#include "mcthfr/evalkit.hpp"
#include "mcthfr/trainer.hpp"

namespace fs = std::filesystem;
using namespace mcthfr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

int cmd_gen_data(const std::string& config_path, const std::string& out_path, std::optional<int> n_override,
                 std::optional<std::uint64_t> seed_override) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  if (n_override) cfg.gen_n = *n_override;
  if (seed_override) cfg.data_seed = *seed_override;
  if (cfg.gen_n < 1) {
    std::cerr << "gen-data: sample count must be >= 1 (got " << cfg.gen_n << ")\n";
    return kExitUsage;
  }
  cfg.validate();

  auto samples = generate_dataset(cfg.data, cfg.gen_n);
  DatasetMeta meta;
  meta.classes = cfg.data.classes;
  meta.feat_dim = cfg.data.feat_dim;
  save_dataset(out_path, samples, meta);

  std::map<int, int> hist;
  for (const auto& s : samples) ++hist[s.label];
  std::cout << "wrote " << samples.size() << " samples to " << out_path << "\n";
  for (const auto& [label, count] : hist) std::cout << "class " << label << ": " << count << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& out_dir,
              const std::optional<std::string>& strategy, std::optional<double> miss_rate,
              std::optional<double> alpha, std::optional<double> beta, std::optional<std::uint64_t> seed,
              bool no_hfr, std::optional<double> lr, std::optional<int> max_epochs,
              const std::optional<std::string>& gfa_metric) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  if (strategy) cfg.train.strategy = parse_strategy(*strategy);
  if (miss_rate) {
    if (cfg.train.strategy == Strategy::Complete) {
      std::cerr << "train: --miss-rate conflicts with --strategy complete (complete training never masks)\n";
      return kExitUsage;
    }
    cfg.train.p_miss = *miss_rate;
    cfg.train.one_to_one_rate = *miss_rate;
  }
  if (alpha) cfg.train.alpha = *alpha;
  if (beta) cfg.train.beta = *beta;
  if (seed) cfg.train_seed = *seed;
  if (no_hfr) cfg.train.hfr = false;
  if (lr) cfg.train.lr = *lr;
  if (max_epochs) cfg.train.max_epochs = *max_epochs;
  if (gfa_metric) cfg.train.gfa_metric = parse_gfa_metric(*gfa_metric);
  cfg.validate();

  DatasetMeta meta;
  auto samples = load_dataset(data_path, &meta);
  cfg.model.classes = meta.classes;
  cfg.model.feat_dim = meta.feat_dim;
  cfg.model.validate();

  fs::create_directories(out_dir);
  auto [train_set, val_set] = split_train_val(samples, cfg.train.val_fraction);
  auto result = train(cfg.train, cfg.model, train_set, val_set);

  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.mctp").string();
  Checkpoint ckpt;
  ckpt.config = cfg.model;
  ckpt.has_hfr = cfg.train.hfr;
  ckpt.mct = result.mct;
  ckpt.hfr = result.hfr;
  save_checkpoint(ckpt_path, ckpt);

  write_train_log((fs::path(out_dir) / "train_log.txt").string(), result.log);
  write_train_summary_json((fs::path(out_dir) / "summary.json").string(), result.log, cfg.train, cfg.model, ckpt_path);
  std::ofstream snap((fs::path(out_dir) / "config_resolved.cfg").string(), std::ios::binary);
  snap << cfg.serialize();

  const auto& last = result.log.epochs.back();
  std::cout << "trained " << result.log.stopped_epoch << " epochs (best " << result.log.best_epoch
            << "), final val UA " << last.val_ua << ", checkpoint " << ckpt_path << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_path, const std::string& out_json,
              const std::string& out_csv, const std::string& rates_text, int mask_seeds,
              std::uint64_t mask_seed_base, int threads) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  DatasetMeta meta;
  auto samples = load_dataset(data_path, &meta);
  if (meta.classes != ckpt.config.classes || meta.feat_dim != ckpt.config.feat_dim) {
    std::cerr << "sweep: checkpoint/dataset mismatch: checkpoint expects classes=" << ckpt.config.classes << " dims=("
              << ckpt.config.feat_dim[0] << "," << ckpt.config.feat_dim[1] << "," << ckpt.config.feat_dim[2]
              << "), dataset has classes=" << meta.classes << " dims=(" << meta.feat_dim[0] << "," << meta.feat_dim[1]
              << "," << meta.feat_dim[2] << ")\n";
    return kExitUsage;
  }

  SweepOptions opts;
  opts.mask_seeds = mask_seeds;
  opts.mask_seed_base = mask_seed_base;
  opts.threads = threads;
  if (!rates_text.empty()) {
    opts.rates.clear();
    std::size_t pos = 0;
    while (pos <= rates_text.size()) {
      const auto comma = rates_text.find(',', pos);
      const std::string item = rates_text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      opts.rates.push_back(std::stod(item));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  auto report = sweep(ckpt.mct, ckpt.config, samples, opts);
  write_sweep_json(out_json, report, ckpt.config);
  if (!out_csv.empty()) write_sweep_csv(out_csv, report);

  for (const auto& s : report.per_rate)
    std::printf("rate %.2f: UA %.4f WA %.4f UF1 %.4f WF1 %.4f\n", s.rate, s.ua, s.wa, s.uf1, s.wf1);
  if (report.has_auilc)
    std::printf("AUILC: UA %.4f WA %.4f UF1 %.4f WF1 %.4f\n", report.auilc_ua, report.auilc_wa, report.auilc_uf1,
                report.auilc_wf1);
  else
    std::printf("AUILC: absent (needs at least two rate points)\n");
  return kExitOk;
}

int cmd_gradcheck(const std::optional<std::string>& config_path, double tol, const std::string& metric_filter,
                  const std::string& fault_group, double fault_scale) {
  ModelConfig cfg = gradcheck_config();
  if (config_path) {
    RunConfig rc = RunConfig::parse_file(*config_path);
    cfg = rc.model;
    cfg.feat_dim = rc.data.feat_dim;
    cfg.classes = rc.data.classes;
  }

  std::vector<GfaMetric> metrics;
  if (metric_filter.empty() || metric_filter == "all")
    metrics = {GfaMetric::Cmd, GfaMetric::Cosine, GfaMetric::Jsd, GfaMetric::SmoothL1};
  else
    metrics = {parse_gfa_metric(metric_filter)};

  bool ok = true;
  for (GfaMetric metric : metrics) {
    GradCheckOptions opts;
    opts.metric = metric;
    opts.fault_group = fault_group;
    opts.fault_scale = fault_scale;
    auto rep = gradcheck(cfg, opts);
    std::printf("metric %-9s max rel err %.3e (tol %.1e) -> %s\n", gfa_metric_name(metric), rep.max_rel_err, tol,
                rep.passed(tol) ? "ok" : "FAIL");
    std::printf("  %-22s %-12s %-14s %-14s\n", "group", "max_rel_err", "analytic", "numeric");
    for (const auto& g : rep.groups)
      std::printf("  %-22s %-12.3e %-14.6e %-14.6e\n", g.name.c_str(), g.max_rel_err, g.analytic_at_worst,
                  g.numeric_at_worst);
    if (!rep.passed(tol)) {
      std::printf("  worst group: %s\n", rep.worst_group.c_str());
      ok = false;
    }
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_params(const std::string& config_path) {
  RunConfig rc = RunConfig::parse_file(config_path);
  ModelConfig cfg = rc.model;
  cfg.feat_dim = rc.data.feat_dim;
  cfg.classes = rc.data.classes;
  cfg.validate();
  const auto lengths = cfg.max_len;

  const auto mrau = count_layer(cfg, LayerKind::Mrau, lengths);
  const auto pairwise = count_layer(cfg, LayerKind::PairwiseReference, lengths);
  const auto train_mode = count_model(cfg, /*training_mode=*/true, /*hfr_enabled=*/true, lengths);
  const auto infer_mode = count_model(cfg, /*training_mode=*/false, /*hfr_enabled=*/true, lengths);
  const std::int64_t enumerated = enumerate_params(cfg, /*include_hfr=*/true);
  const std::int64_t enumerated_mct = enumerate_params(cfg, /*include_hfr=*/false);

  std::printf("lengths = %d,%d,%d\n", lengths[0], lengths[1], lengths[2]);
  std::printf("layer.mrau.params = %lld\n", static_cast<long long>(mrau.params));
  std::printf("layer.mrau.macs = %lld\n", static_cast<long long>(mrau.macs));
  std::printf("layer.pairwise_reference.params = %lld\n", static_cast<long long>(pairwise.params));
  std::printf("layer.pairwise_reference.macs = %lld\n", static_cast<long long>(pairwise.macs));
  std::printf("model.training.params = %lld\n", static_cast<long long>(train_mode.params));
  std::printf("model.training.macs = %lld\n", static_cast<long long>(train_mode.macs));
  std::printf("model.inference.params = %lld\n", static_cast<long long>(infer_mode.params));
  std::printf("model.inference.macs = %lld\n", static_cast<long long>(infer_mode.macs));
  std::printf("model.enumerated.params = %lld\n", static_cast<long long>(enumerated));
  std::printf("model.enumerated.inference_params = %lld\n", static_cast<long long>(enumerated_mct));
  const bool match = enumerated == train_mode.params && enumerated_mct == infer_mode.params;
  std::printf("check.params_match_enumeration = %s\n", match ? "true" : "false");
  return match ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCT-HFR: modality-collaborative transformer with hybrid feature reconstruction"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multimodal dataset (MMT1)");
  std::string gen_config, gen_out;
  std::optional<int> gen_n;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "run configuration file")->required();
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--n", gen_n, "sample count (overrides config)");
  gen->add_option("--seed", gen_seed, "data seed (overrides config)");

  // train
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  std::string tr_config, tr_data, tr_out;
  std::optional<std::string> tr_strategy, tr_metric;
  std::optional<double> tr_miss, tr_alpha, tr_beta, tr_lr;
  std::optional<int> tr_epochs;
  std::optional<std::uint64_t> tr_seed;
  bool tr_no_hfr = false;
  tr->add_option("--config", tr_config, "run configuration file")->required();
  tr->add_option("--data", tr_data, "training dataset (MMT1)")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--strategy", tr_strategy, "complete | one-to-one | dynamic");
  tr->add_option("--miss-rate", tr_miss, "masking rate (dynamic p_miss / one-to-one rate)");
  tr->add_option("--alpha", tr_alpha, "L_GFA weight");
  tr->add_option("--beta", tr_beta, "L_LFI weight");
  tr->add_option("--seed", tr_seed, "training seed (overrides config)");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--max-epochs", tr_epochs, "epoch cap");
  tr->add_option("--gfa-metric", tr_metric, "cmd | cosine | jsd | smooth_l1");
  tr->add_flag("--no-hfr", tr_no_hfr, "disable the reconstruction branch (plain MCT)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "evaluate a checkpoint over missing rates");
  std::string sw_ckpt, sw_data, sw_json = "sweep.json", sw_csv, sw_rates;
  int sw_seeds = 5, sw_threads = 0;
  std::uint64_t sw_base = 0;
  sw->add_option("--checkpoint", sw_ckpt, "MCTP checkpoint")->required();
  sw->add_option("--data", sw_data, "evaluation dataset (MMT1)")->required();
  sw->add_option("--out", sw_json, "JSON report path");
  sw->add_option("--csv", sw_csv, "CSV report path");
  sw->add_option("--rates", sw_rates, "comma-separated missing rates (default 0.0..0.9)");
  sw->add_option("--mask-seeds", sw_seeds, "mask seeds per rate");
  sw->add_option("--mask-seed-base", sw_base, "first mask seed");
  sw->add_option("--threads", sw_threads, "worker threads (0 = auto)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check on a tiny model");
  std::optional<std::string> gc_config;
  double gc_tol = 1e-4, gc_fault_scale = 1.0;
  std::string gc_metric = "all", gc_fault;
  gc->add_option("--config", gc_config, "run configuration (default: built-in tiny config)");
  gc->add_option("--tol", gc_tol, "max relative error tolerance");
  gc->add_option("--metric", gc_metric, "cmd | cosine | jsd | smooth_l1 | all");
  gc->add_option("--inject-fault", gc_fault, "test hook: parameter group to corrupt")->group("");
  gc->add_option("--inject-scale", gc_fault_scale, "test hook: corruption factor")->group("");

  // params
  auto* pr = app.add_subcommand("params", "parameter and MAC report");
  std::string pr_config;
  pr->add_option("--config", pr_config, "run configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_n, gen_seed);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_strategy, tr_miss, tr_alpha, tr_beta, tr_seed, tr_no_hfr, tr_lr,
                       tr_epochs, tr_metric);
    if (sw->parsed()) return cmd_sweep(sw_ckpt, sw_data, sw_json, sw_csv, sw_rates, sw_seeds, sw_base, sw_threads);
    if (gc->parsed()) return cmd_gradcheck(gc_config, gc_tol, gc_metric, gc_fault, gc_fault_scale);
    if (pr->parsed()) return cmd_params(pr_config);
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
