#include "mcthfr/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "mcthfr/rng.hpp"

namespace mcthfr {

namespace {
enum : std::uint64_t { kTagEvalMask = 0x45564d4bull, kTagGradData = 0x47434454ull };
}

// ---------------------------------------------------------------------------
// metrics

MetricsRecord compute_metrics(const std::vector<int>& preds, const std::vector<int>& truth, int classes) {
  if (preds.empty() || preds.size() != truth.size())
    throw std::invalid_argument("metrics: empty or mismatched prediction/truth lists");
  MetricsRecord r;
  r.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || preds[i] < 0 || preds[i] >= classes)
      throw std::invalid_argument("metrics: label outside [0, classes)");
    ++r.confusion[truth[i]][preds[i]];
  }
  const double total = static_cast<double>(preds.size());
  double trace = 0, recall_sum = 0, f1_sum = 0, wf1_sum = 0;
  int supported = 0;
  for (int c = 0; c < classes; ++c) {
    std::int64_t tp = r.confusion[c][c], fn = 0, fp = 0;
    for (int o = 0; o < classes; ++o)
      if (o != c) {
        fn += r.confusion[c][o];
        fp += r.confusion[o][c];
      }
    trace += static_cast<double>(tp);
    const std::int64_t support = tp + fn;
    if (support == 0) continue;  // zero-support classes are skipped in macro averages
    ++supported;
    const double recall = static_cast<double>(tp) / static_cast<double>(support);
    const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    recall_sum += recall;
    f1_sum += f1;
    wf1_sum += f1 * static_cast<double>(support);
  }
  r.wa = trace / total;
  r.ua = supported > 0 ? recall_sum / supported : 0.0;
  r.uf1 = supported > 0 ? f1_sum / supported : 0.0;
  r.wf1 = wf1_sum / total;
  return r;
}

double auilc(const std::vector<double>& scores, const std::vector<double>& rates) {
  if (scores.size() != rates.size() || scores.size() < 2)
    throw std::invalid_argument("auilc: need at least two (score, rate) points");
  for (std::size_t i = 1; i < rates.size(); ++i)
    if (rates[i] <= rates[i - 1]) throw std::invalid_argument("auilc: rates must be strictly increasing");
  double area = 0;
  for (std::size_t i = 0; i + 1 < rates.size(); ++i)
    area += 0.5 * (scores[i + 1] + scores[i]) * (rates[i + 1] - rates[i]);
  return area;
}

// ---------------------------------------------------------------------------
// sweep

namespace {

std::vector<int> predict_masked(const MCTParams<float>& params, const ModelConfig& cfg,
                                const std::vector<MultimodalSample>& eval_set, double rate, std::uint64_t mask_seed,
                                const std::array<int, kNumModalities>& max_len) {
  std::vector<int> preds;
  preds.reserve(eval_set.size());
  const std::uint64_t stream = Rng::derive({mask_seed, kTagEvalMask});
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    auto [masked, mask] = apply_masking(eval_set[i], rate, stream, static_cast<std::uint64_t>(i));
    Batch b = collate({eval_set[i]}, {masked}, {mask}, max_len);
    auto tr = mct_forward_item(b.items[0], /*complete_view=*/false, params, cfg);
    int best = 0;
    for (int j = 1; j < tr.probs->cols(); ++j)
      if (tr.probs->values[j] > tr.probs->values[best]) best = j;
    preds.push_back(best);
  }
  return preds;
}

}  // namespace

std::vector<int> predict(const MCTParams<float>& params, const ModelConfig& cfg,
                         const std::vector<MultimodalSample>& eval_set,
                         const std::array<int, kNumModalities>& max_len) {
  return predict_masked(params, cfg, eval_set, 0.0, 0, max_len);
}

SweepReport sweep(const MCTParams<float>& params, const ModelConfig& cfg,
                  const std::vector<MultimodalSample>& eval_set, const SweepOptions& opts) {
  if (eval_set.empty()) throw std::invalid_argument("sweep: empty evaluation set");
  if (opts.rates.empty() || opts.mask_seeds < 1) throw std::invalid_argument("sweep: need rates and mask seeds");
  for (std::size_t i = 1; i < opts.rates.size(); ++i)
    if (opts.rates[i] <= opts.rates[i - 1]) throw std::invalid_argument("sweep: rates must be strictly increasing");

  std::array<int, kNumModalities> max_len = cfg.max_len;
  for (int m = 0; m < kNumModalities; ++m)
    if (opts.eval_max_len[m] > 0) max_len[m] = opts.eval_max_len[m];

  std::vector<int> truth;
  truth.reserve(eval_set.size());
  for (const auto& s : eval_set) truth.push_back(s.label);

  SweepReport rep;
  rep.rates = opts.rates;
  rep.mask_seed_count = opts.mask_seeds;
  rep.mask_seed_base = opts.mask_seed_base;
  rep.points.resize(opts.rates.size() * static_cast<std::size_t>(opts.mask_seeds));

  // rate x seed jobs sharded over threads; every job writes only its own slot
  std::atomic<std::size_t> next{0};
  const std::size_t total_jobs = rep.points.size();
  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total_jobs) return;
      const std::size_t ri = job / opts.mask_seeds;
      const std::size_t si = job % opts.mask_seeds;
      SweepPoint& pt = rep.points[job];
      pt.rate = opts.rates[ri];
      pt.mask_seed = opts.mask_seed_base + si;
      auto preds = predict_masked(params, cfg, eval_set, pt.rate, pt.mask_seed, max_len);
      pt.metrics = compute_metrics(preds, truth, cfg.classes);
    }
  };
  int nthreads = opts.threads > 0 ? opts.threads : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min<int>(nthreads, static_cast<int>(total_jobs)));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<double> ua, wa, uf1, wf1;
  for (std::size_t ri = 0; ri < opts.rates.size(); ++ri) {
    RateSummary s;
    s.rate = opts.rates[ri];
    for (int si = 0; si < opts.mask_seeds; ++si) {
      const auto& m = rep.points[ri * opts.mask_seeds + si].metrics;
      s.ua += m.ua;
      s.wa += m.wa;
      s.uf1 += m.uf1;
      s.wf1 += m.wf1;
    }
    s.ua /= opts.mask_seeds;
    s.wa /= opts.mask_seeds;
    s.uf1 /= opts.mask_seeds;
    s.wf1 /= opts.mask_seeds;
    rep.per_rate.push_back(s);
    ua.push_back(s.ua);
    wa.push_back(s.wa);
    uf1.push_back(s.uf1);
    wf1.push_back(s.wf1);
  }
  if (rep.rates.size() >= 2) {
    rep.has_auilc = true;
    rep.auilc_ua = auilc(ua, rep.rates);
    rep.auilc_wa = auilc(wa, rep.rates);
    rep.auilc_uf1 = auilc(uf1, rep.rates);
    rep.auilc_wf1 = auilc(wf1, rep.rates);
  }
  return rep;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_sweep_csv(const std::string& path, const SweepReport& report) {
  std::ofstream f(path, std::ios::binary);  // binary keeps line endings byte-stable
  if (!f) throw std::runtime_error("sweep: cannot open '" + path + "' for writing");
  f << "rate,seed,UA,WA,UF1,WF1\n";
  for (const auto& pt : report.points)
    f << fmt_double(pt.rate) << ',' << pt.mask_seed << ',' << fmt_metric(pt.metrics.ua) << ','
      << fmt_metric(pt.metrics.wa) << ',' << fmt_metric(pt.metrics.uf1) << ',' << fmt_metric(pt.metrics.wf1) << '\n';
}

void write_sweep_json(const std::string& path, const SweepReport& report, const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["rates"] = report.rates;
  j["mask_seed_base"] = report.mask_seed_base;
  j["mask_seed_count"] = report.mask_seed_count;
  j["model"] = {{"hidden", cfg.hidden},   {"layers", cfg.layers},           {"heads", cfg.heads},
                {"head_dim", cfg.head_dim}, {"classes", cfg.classes},
                {"use_gamma_b", cfg.use_gamma_b}, {"use_gamma_e", cfg.use_gamma_e}};
  auto& per_rate = j["per_rate"] = nlohmann::ordered_json::array();
  for (const auto& s : report.per_rate)
    per_rate.push_back({{"rate", s.rate}, {"UA", s.ua}, {"WA", s.wa}, {"UF1", s.uf1}, {"WF1", s.wf1}});
  auto& pts = j["points"] = nlohmann::ordered_json::array();
  for (const auto& pt : report.points)
    pts.push_back({{"rate", pt.rate},
                   {"seed", pt.mask_seed},
                   {"UA", pt.metrics.ua},
                   {"WA", pt.metrics.wa},
                   {"UF1", pt.metrics.uf1},
                   {"WF1", pt.metrics.wf1}});
  if (report.has_auilc) {
    j["auilc"] = {{"UA", report.auilc_ua}, {"WA", report.auilc_wa}, {"UF1", report.auilc_uf1}, {"WF1", report.auilc_wf1}};
  } else {
    j["auilc"] = nullptr;  // undefined below two rate points
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("sweep: cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// complexity counters
//
// MAC convention: one multiply-accumulate per matmul/conv inner step;
// softmax, layer norm, activations, and the parameter-free key re-scaling are
// excluded (dominant-term counting).

namespace {

std::int64_t affine_params(std::int64_t in, std::int64_t out) { return in * out + out; }

struct BlockCounts {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

// Output projection + two LNs + FFN shared by every reinforcement block.
BlockCounts reinforcement_tail(const ModelConfig& cfg, std::int64_t tq) {
  const std::int64_t d = cfg.hidden, f = cfg.ffn();
  BlockCounts b;
  b.params = affine_params(d, d) + 4 * d + affine_params(d, f) + affine_params(f, d);
  b.macs = tq * d * d + 2 * tq * d * f;
  return b;
}

}  // namespace

CountReport count_layer(const ModelConfig& cfg, LayerKind kind, const std::array<int, kNumModalities>& lengths) {
  cfg.validate();
  const std::int64_t d = cfg.hidden;
  CountReport r;
  if (kind == LayerKind::Mrau) {
    std::int64_t tc = 0;
    for (int m = 0; m < kNumModalities; ++m) tc += lengths[m];
    for (int m = 0; m < kNumModalities; ++m) {
      const std::int64_t tm = lengths[m];
      r.params += 3 * d * d;           // Q/K/V projected once per modality
      r.macs += 3 * tm * d * d;
      r.macs += 2 * tm * tc * d;       // scores + attention-weighted values, all heads
      const auto tail = reinforcement_tail(cfg, tm);
      r.params += tail.params;
      r.macs += tail.macs;
    }
  } else {
    // M(M-1) directional blocks, each with its own Q/K/V projections.
    for (int t = 0; t < kNumModalities; ++t)
      for (int s = 0; s < kNumModalities; ++s) {
        if (t == s) continue;
        const std::int64_t tt = lengths[t], ts = lengths[s];
        r.params += 3 * d * d;
        r.macs += tt * d * d + 2 * ts * d * d;
        r.macs += 2 * tt * ts * d;
        const auto tail = reinforcement_tail(cfg, tt);
        r.params += tail.params;
        r.macs += tail.macs;
      }
  }
  return r;
}

CountReport count_model(const ModelConfig& cfg, bool training_mode, bool hfr_enabled,
                        const std::array<int, kNumModalities>& lengths) {
  cfg.validate();
  const std::int64_t d = cfg.hidden;
  CountReport r;
  // unimodal encoders
  for (int m = 0; m < kNumModalities; ++m) {
    r.params += static_cast<std::int64_t>(cfg.kernel[m]) * cfg.feat_dim[m] * d + d;
    r.macs += static_cast<std::int64_t>(lengths[m]) * cfg.kernel[m] * cfg.feat_dim[m] * d;
  }
  const auto layer = count_layer(cfg, LayerKind::Mrau, lengths);
  r.params += cfg.layers * layer.params;
  r.macs += cfg.layers * layer.macs;
  // pooling and classifier
  std::int64_t head_macs = 0, head_params = 0;
  for (int m = 0; m < kNumModalities; ++m) {
    head_params += d;
    head_macs += 2 * static_cast<std::int64_t>(lengths[m]) * d;
  }
  std::int64_t in = 3 * d;
  for (int layer_i = 0; layer_i < cfg.classifier_depth; ++layer_i) {
    const std::int64_t out = layer_i + 1 == cfg.classifier_depth ? cfg.classes : 3 * d;
    head_params += affine_params(in, out);
    head_macs += in * out;
    in = out;
  }
  r.params += head_params;
  r.macs += head_macs;

  if (hfr_enabled && training_mode) {
    // second (complete-view) forward through the shared task branch
    r.macs += r.macs;
    // decoders
    for (int m = 0; m < kNumModalities; ++m) {
      const std::int64_t dm = cfg.feat_dim[m], tm = lengths[m];
      r.params += affine_params(dm, d) + 6 * d * d + affine_params(d, dm);
      r.macs += tm * dm * d;               // input projection
      r.macs += 3 * tm * d * d + 2 * tm * tm * d;  // SAU
      r.macs += 3 * tm * d * d + 2 * tm * tm * d;  // CAU
      r.macs += tm * d * dm;               // output projection
    }
    // alignment map theta_p
    r.params += affine_params(3 * d, 3 * d);
    r.macs += 3 * d * 3 * d;
  }
  return r;
}

std::int64_t enumerate_params(const ModelConfig& cfg, bool include_hfr) {
  auto mct = MCTParams<float>::init_random(cfg, 1);
  ParamRegistry<float> reg;
  mct.register_into(reg);
  if (include_hfr) {
    auto hfr = HFRParams<float>::init_random(cfg, 1);
    hfr.register_into(reg);
  }
  return reg.total_size();
}

// ---------------------------------------------------------------------------
// gradient check

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.kernel = {3, 3, 1};
  cfg.max_len = {6, 4, 5};
  cfg.classes = 3;
  cfg.ffn_hidden = 0;
  cfg.feat_dim = {5, 4, 3};
  return cfg;
}

GradCheckReport gradcheck(const ModelConfig& cfg, const GradCheckOptions& opts) {
  cfg.validate();
  GenConfig gen;
  gen.classes = cfg.classes;
  gen.feat_dim = cfg.feat_dim;
  gen.len = {LengthRange{4, cfg.max_len[0]}, LengthRange{2, cfg.max_len[1]}, LengthRange{3, cfg.max_len[2]}};
  gen.seed = Rng::derive({kTagGradData});
  auto samples = generate_dataset(gen, 3);

  std::vector<MultimodalSample> masked;
  std::vector<MaskSet> masks;
  std::int64_t masked_steps = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [ms, mk] = apply_masking(samples[i], 0.35, gen.seed, static_cast<std::uint64_t>(i));
    masked_steps += mk.count_masked_steps();
    masked.push_back(std::move(ms));
    masks.push_back(std::move(mk));
  }
  if (masked_steps == 0) throw std::logic_error("gradcheck: probe batch has no masked steps");
  Batch batch = collate(samples, masked, masks, cfg.max_len);

  auto mct = MCTParams<double>::init_random(cfg, 7);
  auto hfr = HFRParams<double>::init_random(cfg, 7);
  ParamRegistry<double> reg;
  mct.register_into(reg);
  hfr.register_into(reg);

  auto loss_value = [&]() {
    auto l = composite_loss<double>(batch, mct, hfr, /*use_hfr=*/true, cfg, opts.metric, opts.cmd_order, opts.alpha,
                                    opts.beta);
    return l.total;
  };

  for (auto& [_, t] : reg.entries) t->zero_grad();
  backward(loss_value());

  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : reg.entries) {
    analytic.push_back(t->grad);
    if (!opts.fault_group.empty() && name == opts.fault_group)
      for (auto& g : analytic.back()) g *= opts.fault_scale;
  }

  GradCheckReport rep;
  const double h = opts.step;
  for (std::size_t pi = 0; pi < reg.entries.size(); ++pi) {
    auto& t = reg.entries[pi].second;
    GradCheckGroup grp;
    grp.name = reg.entries[pi].first;
    for (std::size_t i = 0; i < t->values.size(); ++i) {
      const double saved = t->values[i];
      t->values[i] = saved + h;
      const double lp = loss_value()->values[0];
      t->values[i] = saved - h;
      const double lm = loss_value()->values[0];
      t->values[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > grp.max_rel_err) {
        grp.max_rel_err = rel;
        grp.analytic_at_worst = a;
        grp.numeric_at_worst = numeric;
      }
    }
    if (grp.max_rel_err > rep.max_rel_err) {
      rep.max_rel_err = grp.max_rel_err;
      rep.worst_group = grp.name;
    }
    rep.groups.push_back(std::move(grp));
  }
  return rep;
}

}  // namespace mcthfr
