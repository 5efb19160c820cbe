#include "mcthfr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "mcthfr/evalkit.hpp"
#include "mcthfr/rng.hpp"

namespace mcthfr {

namespace {

enum : std::uint64_t {
  kTagShuffle = 0x53485546ull,
  kTagSelect = 0x53454c43ull,
  kTagDynMask = 0x44594e4dull,
  kTagO2oMask = 0x4f324f4dull,
  kTagValMask = 0x56414c4dull,
};

CompositeLoss<float> batch_loss(const Batch& batch, const MCTParams<float>& mct, const HFRParams<float>& hfr,
                                const ModelConfig& cfg, const TrainPlan& plan) {
  return composite_loss(batch, mct, hfr, plan.hfr, cfg, plan.gfa_metric, plan.cmd_order, plan.alpha, plan.beta);
}

// Chunks [0, n) into batches of plan.batch; a trailing single sample is
// merged into the previous batch so distribution-level losses always see at
// least two samples.
std::vector<std::pair<int, int>> batch_ranges(int n, int batch) {
  std::vector<std::pair<int, int>> r;
  for (int s = 0; s < n; s += batch) r.emplace_back(s, std::min(n, s + batch));
  if (r.size() >= 2 && r.back().second - r.back().first == 1) {
    r[r.size() - 2].second = r.back().second;
    r.pop_back();
  }
  return r;
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "complete") return Strategy::Complete;
  if (name == "one_to_one" || name == "one-to-one") return Strategy::OneToOne;
  if (name == "dynamic") return Strategy::Dynamic;
  throw std::invalid_argument("train: unknown strategy '" + name + "' (expected complete|one-to-one|dynamic)");
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Complete: return "complete";
    case Strategy::OneToOne: return "one_to_one";
    default: return "dynamic";
  }
}

void TrainPlan::validate() const {
  if (alpha < 0 || beta < 0) throw std::invalid_argument("train: alpha and beta must be >= 0");
  if (p_miss < 0 || p_miss > 1) throw std::invalid_argument("train: miss rate must be in [0,1]");
  if (one_to_one_rate < 0 || one_to_one_rate > 1) throw std::invalid_argument("train: one-to-one rate must be in [0,1]");
  if (batch < 1 || max_epochs < 1 || patience < 1 || ramp_epochs < 1)
    throw std::invalid_argument("train: batch/max_epochs/patience/ramp_epochs must be positive");
  if (val_fraction <= 0 || val_fraction >= 1) throw std::invalid_argument("train: val_fraction must be in (0,1)");
  if (lr <= 0) throw std::invalid_argument("train: lr must be positive");
}

double ramp_proportion(int epoch, int ramp_epochs) {
  if (epoch < 1) throw std::invalid_argument("ramp: epoch is 1-indexed");
  if (ramp_epochs <= 1) return 1.0;
  return std::min(1.0, static_cast<double>(epoch - 1) / (ramp_epochs - 1));
}

std::pair<std::vector<MultimodalSample>, std::vector<MultimodalSample>> split_train_val(
    const std::vector<MultimodalSample>& all, double val_fraction) {
  const int n = static_cast<int>(all.size());
  const int n_val = std::max(1, static_cast<int>(std::lround(n * val_fraction)));
  if (n_val >= n) throw std::invalid_argument("split: validation fraction leaves no training data");
  std::vector<MultimodalSample> tr(all.begin(), all.end() - n_val);
  std::vector<MultimodalSample> va(all.end() - n_val, all.end());
  return {std::move(tr), std::move(va)};
}

TrainResult train(const TrainPlan& plan, const ModelConfig& cfg, const std::vector<MultimodalSample>& train_set,
                  const std::vector<MultimodalSample>& val_set) {
  plan.validate();
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: empty train or validation split");

  TrainResult res;
  res.mct = MCTParams<float>::init_random(cfg, plan.seed);
  res.hfr = HFRParams<float>::init_random(cfg, plan.seed);

  ParamRegistry<float> reg;
  res.mct.register_into(reg);
  if (plan.hfr) res.hfr.register_into(reg);

  AdamWSettings opt_settings;
  opt_settings.lr = plan.lr;
  opt_settings.weight_decay = plan.weight_decay;
  AdamW<float> opt(opt_settings);
  opt.register_params(reg.entries);

  // Pre-built validation batches; masks fixed across epochs so the early
  // stopping signal is not re-randomized every epoch.
  const double val_rate = plan.strategy == Strategy::Complete ? 0.0
                          : plan.strategy == Strategy::OneToOne ? plan.one_to_one_rate
                                                                : plan.p_miss;
  std::vector<Batch> val_batches;
  {
    const auto ranges = batch_ranges(static_cast<int>(val_set.size()), plan.batch);
    for (const auto& [b0, b1] : ranges) {
      std::vector<MultimodalSample> complete(val_set.begin() + b0, val_set.begin() + b1);
      std::vector<MultimodalSample> masked;
      std::vector<MaskSet> masks;
      for (int i = b0; i < b1; ++i) {
        auto [ms, mk] = apply_masking(val_set[i], val_rate, Rng::derive({plan.seed, kTagValMask}),
                                      static_cast<std::uint64_t>(i));
        masked.push_back(std::move(ms));
        masks.push_back(std::move(mk));
      }
      val_batches.push_back(collate(complete, masked, masks, cfg.max_len));
    }
  }

  std::vector<std::vector<float>> best_snapshot;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_best = 0;
  std::int64_t global_step = 0;

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= plan.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog el;
    el.epoch = epoch;

    Rng shuffle_rng(Rng::derive({plan.seed, kTagShuffle, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    const auto ranges = batch_ranges(static_cast<int>(order.size()), plan.batch);
    double sum_ce = 0, sum_gfa = 0, sum_lfi = 0, sum_total = 0;
    for (std::size_t step = 0; step < ranges.size(); ++step) {
      const auto [b0, b1] = ranges[step];
      const int B = b1 - b0;

      // pick which samples in the batch are incomplete this step
      std::vector<int> slots(B);
      std::iota(slots.begin(), slots.end(), 0);
      int n_inc = 0;
      double rate = 0.0;
      std::uint64_t mask_stream = 0;
      if (plan.strategy == Strategy::Dynamic) {
        Rng sel(Rng::derive({plan.seed, kTagSelect, static_cast<std::uint64_t>(epoch), step}));
        sel.shuffle(slots);
        n_inc = static_cast<int>(std::floor(ramp_proportion(epoch, plan.ramp_epochs) * B));
        rate = plan.p_miss;
        mask_stream = Rng::derive({plan.seed, kTagDynMask, static_cast<std::uint64_t>(epoch), step});
      } else if (plan.strategy == Strategy::OneToOne) {
        n_inc = B;  // every sample, fresh masks each epoch
        rate = plan.one_to_one_rate;
        mask_stream = Rng::derive({plan.seed, kTagO2oMask, static_cast<std::uint64_t>(epoch)});
      }

      std::vector<MultimodalSample> complete, masked;
      std::vector<MaskSet> masks;
      std::vector<bool> incomplete(B, false);
      for (int i = 0; i < n_inc; ++i) incomplete[slots[i]] = true;
      for (int i = 0; i < B; ++i) {
        const int idx = order[b0 + i];
        complete.push_back(train_set[idx]);
        if (incomplete[i]) {
          auto [ms, mk] = apply_masking(train_set[idx], rate, mask_stream, static_cast<std::uint64_t>(idx));
          masked.push_back(std::move(ms));
          masks.push_back(std::move(mk));
        } else {
          masked.push_back(train_set[idx]);
          MaskSet zero;
          for (int m = 0; m < kNumModalities; ++m)
            zero.on[m].assign(static_cast<std::size_t>(train_set[idx].length(m)), 0);
          masks.push_back(std::move(zero));
        }
      }
      Batch batch = collate(complete, masked, masks, cfg.max_len);
      for (int i = 0; i < B; ++i) batch.items[i].incomplete = incomplete[i];
      el.batch_incomplete_counts.push_back(n_inc);

      ++global_step;
      try {
        auto loss = batch_loss(batch, res.mct, res.hfr, cfg, plan);
        if (!std::isfinite(loss.total->values[0])) throw std::runtime_error("train: non-finite loss");
        opt.zero_grad();
        backward(loss.total);
        opt.step();
        sum_ce += loss.ce->values[0];
        sum_gfa += loss.gfa->values[0];
        sum_lfi += loss.lfi->values[0];
        sum_total += loss.total->values[0];
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(global_step) + " (epoch " +
                                 std::to_string(epoch) + ")");
      } catch (const std::domain_error& e) {
        // numeric blow-ups inside the forward pass count as divergence too
        throw std::runtime_error("train: diverged (" + std::string(e.what()) + ") at step " +
                                 std::to_string(global_step) + " (epoch " + std::to_string(epoch) + ")");
      }
    }
    const double nb = static_cast<double>(ranges.size());
    el.train_ce = sum_ce / nb;
    el.train_gfa = sum_gfa / nb;
    el.train_lfi = sum_lfi / nb;
    el.train_total = sum_total / nb;

    // validation pass (forward only)
    {
      double v_ce = 0, v_gfa = 0, v_lfi = 0, v_total = 0;
      std::vector<int> preds, truth;
      for (const auto& vb : val_batches) {
        auto loss = batch_loss(vb, res.mct, res.hfr, cfg, plan);
        v_ce += loss.ce->values[0];
        v_gfa += loss.gfa->values[0];
        v_lfi += loss.lfi->values[0];
        v_total += loss.total->values[0];
        for (std::size_t i = 0; i < loss.preds.size(); ++i) {
          preds.push_back(loss.preds[i]);
          truth.push_back(vb.items[i].label);
        }
      }
      const double nvb = static_cast<double>(val_batches.size());
      el.val_ce = v_ce / nvb;
      el.val_gfa = v_gfa / nvb;
      el.val_lfi = v_lfi / nvb;
      el.val_total = v_total / nvb;
      const auto mr = compute_metrics(preds, truth, cfg.classes);
      el.val_ua = mr.ua;
      el.val_wa = mr.wa;
      el.val_uf1 = mr.uf1;
      el.val_wf1 = mr.wf1;
    }

    el.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(el);
    res.log.stopped_epoch = epoch;

    if (el.val_total < best_val) {
      best_val = el.val_total;
      best_epoch = epoch;
      since_best = 0;
      best_snapshot.clear();
      for (const auto& [_, t] : reg.entries) best_snapshot.push_back(t->values);
    } else {
      ++since_best;
      if (since_best >= plan.patience) {
        res.log.early_stopped = true;
        break;
      }
    }
  }

  res.log.best_epoch = best_epoch;
  if (!best_snapshot.empty())
    for (std::size_t i = 0; i < reg.entries.size(); ++i) reg.entries[i].second->values = best_snapshot[i];
  return res;
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("train: cannot open '" + path + "' for writing");
  for (const auto& e : log.epochs) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "epoch=%d train_ce=%.6f train_gfa=%.6f train_lfi=%.6f train_total=%.6f "
                  "val_ce=%.6f val_gfa=%.6f val_lfi=%.6f val_total=%.6f "
                  "val_ua=%.4f val_wa=%.4f val_uf1=%.4f val_wf1=%.4f wall_sec=%.2f",
                  e.epoch, e.train_ce, e.train_gfa, e.train_lfi, e.train_total, e.val_ce, e.val_gfa, e.val_lfi,
                  e.val_total, e.val_ua, e.val_wa, e.val_uf1, e.val_wf1, e.wall_sec);
    f << buf << '\n';
  }
  f << "best_epoch=" << log.best_epoch << " stopped_epoch=" << log.stopped_epoch
    << " early_stopped=" << (log.early_stopped ? "true" : "false") << '\n';
}

void write_train_summary_json(const std::string& path, const TrainLog& log, const TrainPlan& plan,
                              const ModelConfig& cfg, const std::string& checkpoint_path) {
  nlohmann::ordered_json j;
  j["strategy"] = strategy_name(plan.strategy);
  j["alpha"] = plan.alpha;
  j["beta"] = plan.beta;
  j["miss_rate"] = plan.p_miss;
  j["one_to_one_rate"] = plan.one_to_one_rate;
  j["lr"] = plan.lr;
  j["batch"] = plan.batch;
  j["seed"] = plan.seed;
  j["hfr"] = plan.hfr;
  j["gfa_metric"] = gfa_metric_name(plan.gfa_metric);
  j["model"] = {{"hidden", cfg.hidden}, {"layers", cfg.layers}, {"heads", cfg.heads}, {"classes", cfg.classes}};
  j["best_epoch"] = log.best_epoch;
  j["stopped_epoch"] = log.stopped_epoch;
  j["early_stopped"] = log.early_stopped;
  j["checkpoint"] = checkpoint_path;
  auto& eps = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : log.epochs)
    eps.push_back({{"epoch", e.epoch},
                   {"train", {{"ce", e.train_ce}, {"gfa", e.train_gfa}, {"lfi", e.train_lfi}, {"total", e.train_total}}},
                   {"val",
                    {{"ce", e.val_ce},
                     {"gfa", e.val_gfa},
                     {"lfi", e.val_lfi},
                     {"total", e.val_total},
                     {"ua", e.val_ua},
                     {"wa", e.val_wa},
                     {"uf1", e.val_uf1},
                     {"wf1", e.val_wf1}}},
                   {"wall_sec", e.wall_sec}});
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("train: cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
}

}  // namespace mcthfr
