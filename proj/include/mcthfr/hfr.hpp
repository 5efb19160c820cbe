#pragma once

// Hybrid feature reconstruction: per-modality local feature imagination
// decoders trained with a masked smooth-L1 loss, and global feature alignment
// between the incomplete and complete pooled representations via central
// moment discrepancy (cosine / JSD / smooth-L1 available for ablations).

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcthfr/model.hpp"

namespace mcthfr {

enum class GfaMetric { Cmd, Cosine, Jsd, SmoothL1 };

inline GfaMetric parse_gfa_metric(const std::string& name) {
  if (name == "cmd") return GfaMetric::Cmd;
  if (name == "cosine") return GfaMetric::Cosine;
  if (name == "jsd") return GfaMetric::Jsd;
  if (name == "smooth_l1") return GfaMetric::SmoothL1;
  throw std::invalid_argument("gfa: unknown distance metric '" + name + "' (expected cmd|cosine|jsd|smooth_l1)");
}

inline const char* gfa_metric_name(GfaMetric m) {
  switch (m) {
    case GfaMetric::Cmd: return "cmd";
    case GfaMetric::Cosine: return "cosine";
    case GfaMetric::Jsd: return "jsd";
    default: return "smooth_l1";
  }
}

template <class Real>
struct DecoderParams {
  TensorPtr<Real> in_w, in_b;                    // d_m -> d
  TensorPtr<Real> sau_wq, sau_wk, sau_wv;        // [d x d]
  TensorPtr<Real> cau_wq, cau_wk, cau_wv;        // [d x d]
  TensorPtr<Real> out_w, out_b;                  // d -> d_m
};

template <class Real>
struct HFRParams {
  std::array<DecoderParams<Real>, kNumModalities> dec;
  TensorPtr<Real> align_w, align_b;  // theta_p: 3d -> 3d

  static HFRParams init_random(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(Rng::derive({seed, 0x484652ull}));
    HFRParams p;
    const int d = cfg.hidden;
    for (int m = 0; m < kNumModalities; ++m) {
      const int dm = cfg.feat_dim[m];
      auto& dp = p.dec[m];
      dp.in_w = init::projection<Real>({dm, d}, dm, d, rng);
      dp.in_b = init::zeros<Real>({1, d});
      dp.sau_wq = init::projection<Real>({d, d}, d, d, rng);
      dp.sau_wk = init::projection<Real>({d, d}, d, d, rng);
      dp.sau_wv = init::projection<Real>({d, d}, d, d, rng);
      dp.cau_wq = init::projection<Real>({d, d}, d, d, rng);
      dp.cau_wk = init::projection<Real>({d, d}, d, d, rng);
      dp.cau_wv = init::projection<Real>({d, d}, d, d, rng);
      dp.out_w = init::projection<Real>({d, dm}, d, dm, rng);
      dp.out_b = init::zeros<Real>({1, dm});
    }
    p.align_w = init::projection<Real>({3 * cfg.hidden, 3 * cfg.hidden}, 3 * cfg.hidden, 3 * cfg.hidden, rng);
    p.align_b = init::zeros<Real>({1, 3 * cfg.hidden});
    return p;
  }

  void register_into(ParamRegistry<Real>& reg) const {
    static const char* mod[] = {"a", "v", "l"};
    for (int m = 0; m < kNumModalities; ++m) {
      const std::string pre = std::string("decoder.") + mod[m] + ".";
      reg.add(pre + "in_w", dec[m].in_w);
      reg.add(pre + "in_b", dec[m].in_b);
      reg.add(pre + "sau_wq", dec[m].sau_wq);
      reg.add(pre + "sau_wk", dec[m].sau_wk);
      reg.add(pre + "sau_wv", dec[m].sau_wv);
      reg.add(pre + "cau_wq", dec[m].cau_wq);
      reg.add(pre + "cau_wk", dec[m].cau_wk);
      reg.add(pre + "cau_wv", dec[m].cau_wv);
      reg.add(pre + "out_w", dec[m].out_w);
      reg.add(pre + "out_b", dec[m].out_b);
    }
    reg.add("align.w", align_w);
    reg.add("align.b", align_b);
  }
};

namespace detail_attn {

// Bare scaled dot-product attention (no residual/LN), padding-masked keys.
template <class Real>
TensorPtr<Real> bare_attention(const TensorPtr<Real>& queries_src, const TensorPtr<Real>& kv_src, int kv_valid_len,
                               const TensorPtr<Real>& wq, const TensorPtr<Real>& wk, const TensorPtr<Real>& wv) {
  const int d = queries_src->cols();
  auto q = matmul(queries_src, wq);
  auto k = matmul(kv_src, wk);
  auto v = matmul(kv_src, wv);
  auto scores = scale(matmul_nt(q, k), static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d))));
  auto mask = padding_mask_row<Real>({kv_src->rows()}, {kv_valid_len});
  return matmul(softmax_rows(add_rowvec(scores, mask)), v);
}

}  // namespace detail_attn

// Imagines the complete sequence of one modality: project the masked input to
// width d, self-attend, cross-attend into the reinforced features E_m, and
// project back to the raw feature width.
template <class Real>
TensorPtr<Real> lfi_decode(const TensorPtr<Real>& reinforced, const TensorPtr<Real>& masked_input, int true_len,
                           const DecoderParams<Real>& dp) {
  if (reinforced->rows() != masked_input->rows())
    throw std::invalid_argument("lfi: reinforced/input length mismatch");
  auto p = affine(masked_input, dp.in_w, dp.in_b);
  auto s = detail_attn::bare_attention(p, p, true_len, dp.sau_wq, dp.sau_wk, dp.sau_wv);
  auto u = detail_attn::bare_attention(s, reinforced, true_len, dp.cau_wq, dp.cau_wk, dp.cau_wv);
  return affine(u, dp.out_w, dp.out_b);
}

// Sum over masked elements of smooth_l1(target - decoded); caller divides by
// the global masked-element count. Unmasked and padded entries contribute
// exactly zero and receive no gradient.
template <class Real>
TensorPtr<Real> lfi_masked_sum(const TensorPtr<Real>& decoded, const TensorPtr<Real>& complete_target,
                               const std::vector<std::uint8_t>& step_mask) {
  if (decoded->shape != complete_target->shape) throw std::invalid_argument("lfi: decoded/target shape mismatch");
  const int T = decoded->rows(), d = decoded->cols();
  auto elem_mask = make_tensor<Real>({T, d});
  for (int t = 0; t < T && t < static_cast<int>(step_mask.size()); ++t)
    if (step_mask[t])
      for (int j = 0; j < d; ++j) elem_mask->values[static_cast<std::size_t>(t) * d + j] = Real(1);
  return sum_all(smooth_l1(mul(sub(complete_target, decoded), elem_mask)));
}

// ---------------------------------------------------------------------------
// distance metrics over [B x D] stacks of pooled vectors

// Central moment discrepancy: L2 gap of the means plus L2 gaps of the
// coordinate-wise central moments of orders 2..K, over the batch axis.
template <class Real>
TensorPtr<Real> cmd(const TensorPtr<Real>& x1, const TensorPtr<Real>& x2, int order) {
  if (x1->shape.size() != 2 || x2->shape.size() != 2 || x1->cols() != x2->cols())
    throw std::invalid_argument("cmd: expected [B x D] inputs with equal D");
  if (x1->rows() < 2 || x2->rows() < 2) throw std::invalid_argument("cmd: batch size must be >= 2");
  if (order < 1) throw std::invalid_argument("cmd: order must be >= 1");
  auto l2 = [](const TensorPtr<Real>& row) {
    return sqrt_guard(sum_all(square(row)), static_cast<Real>(1e-30));
  };
  auto m1 = mean_rows(x1);
  auto m2 = mean_rows(x2);
  auto total = l2(sub(m1, m2));
  if (order >= 2) {
    auto c1 = sub_rowvec(x1, m1);
    auto c2 = sub_rowvec(x2, m2);
    for (int k = 2; k <= order; ++k)
      total = add(total, l2(sub(mean_rows(pow_int(c1, k)), mean_rows(pow_int(c2, k)))));
  }
  return total;
}

namespace detail_metric {

template <class Real>
TensorPtr<Real> row(const TensorPtr<Real>& x, int i) {
  const int d = x->cols();
  std::vector<TensorPtr<Real>> parts;
  // slice_cols on the transposed view would copy twice; pick a contiguous row
  auto r = detail::make_node<Real>({1, d}, {x}, [x, i, d](Tensor<Real>& nd) {
    for (int j = 0; j < d; ++j) x->grad[static_cast<std::size_t>(i) * d + j] += nd.grad[j];
  });
  for (int j = 0; j < d; ++j) r->values[j] = x->values[static_cast<std::size_t>(i) * d + j];
  return r;
}

template <class Real>
TensorPtr<Real> cosine_distance_row(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  auto dot = sum_all(mul(a, b));
  auto na = sqrt_guard(sum_all(square(a)), static_cast<Real>(1e-30));
  auto nb = sqrt_guard(sum_all(square(b)), static_cast<Real>(1e-30));
  auto cosv = div(dot, mul(na, nb));
  return sub(make_scalar<Real>(1), cosv);
}

// Jensen-Shannon divergence with base-2 logs between softmax-normalized rows.
template <class Real>
TensorPtr<Real> jsd_row(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  const Real inv_ln2 = static_cast<Real>(1.4426950408889634074);
  auto p = softmax_rows(a);
  auto q = softmax_rows(b);
  auto mid = scale(add(p, q), static_cast<Real>(0.5));
  auto kl = [&](const TensorPtr<Real>& u) {
    auto lg = sub(log_guard(u, static_cast<Real>(kProbFloor)), log_guard(mid, static_cast<Real>(kProbFloor)));
    return scale(sum_all(mul(u, lg)), inv_ln2);
  };
  return scale(add(kl(p), kl(q)), static_cast<Real>(0.5));
}

}  // namespace detail_metric

// Distance term of GFA between projected incomplete and complete stacks.
// CMD compares the two batch distributions; the other metrics average a
// per-sample row distance.
template <class Real>
TensorPtr<Real> gfa_distance(const TensorPtr<Real>& projected, const TensorPtr<Real>& complete, GfaMetric metric,
                             int cmd_order) {
  if (projected->shape != complete->shape) throw std::invalid_argument("gfa: stack shape mismatch");
  switch (metric) {
    case GfaMetric::Cmd:
      return cmd(projected, complete, cmd_order);
    case GfaMetric::SmoothL1:
      return scale(sum_all(smooth_l1(sub(projected, complete))), static_cast<Real>(1.0 / projected->size()));
    case GfaMetric::Cosine: {
      TensorPtr<Real> acc = make_scalar<Real>(0);
      for (int i = 0; i < projected->rows(); ++i)
        acc = add(acc, detail_metric::cosine_distance_row(detail_metric::row(projected, i),
                                                          detail_metric::row(complete, i)));
      return scale(acc, static_cast<Real>(1.0 / projected->rows()));
    }
    case GfaMetric::Jsd: {
      TensorPtr<Real> acc = make_scalar<Real>(0);
      for (int i = 0; i < projected->rows(); ++i)
        acc = add(acc, detail_metric::jsd_row(detail_metric::row(projected, i), detail_metric::row(complete, i)));
      return scale(acc, static_cast<Real>(1.0 / projected->rows()));
    }
  }
  throw std::logic_error("gfa: unreachable metric");
}

template <class Real>
struct ReconTrace {
  std::vector<ForwardTrace<Real>> incomplete;  // per batch item, masked view
  std::vector<ForwardTrace<Real>> complete;    // per batch item, complete view
  std::vector<std::array<TensorPtr<Real>, kNumModalities>> decoded;  // D_m
  TensorPtr<Real> lfi_loss;       // scalar
  TensorPtr<Real> gfa_loss;       // scalar: complete-view CE + distance term
  TensorPtr<Real> distance_term;  // the metric component of gfa_loss
};

// Runs both views with shared weights, decodes the masked sequences, and
// assembles L_LFI and L_GFA for the whole batch.
template <class Real>
ReconTrace<Real> hfr_forward(const Batch& batch, const MCTParams<Real>& mct, const HFRParams<Real>& hfr,
                             const ModelConfig& cfg, GfaMetric metric, int cmd_order) {
  ReconTrace<Real> tr;
  const int B = batch.size();
  if (B < 1) throw std::invalid_argument("hfr: empty batch");

  TensorPtr<Real> lfi_sum = make_scalar<Real>(0);
  std::int64_t masked_elems = 0;
  std::vector<TensorPtr<Real>> inc_rows, com_rows;
  TensorPtr<Real> com_ce = make_scalar<Real>(0);

  for (const auto& item : batch.items) {
    std::array<TensorPtr<Real>, kNumModalities> x_masked, x_complete;
    for (int m = 0; m < kNumModalities; ++m) {
      x_masked[m] = to_tensor<Real>(item.seq[m]);
      x_complete[m] = to_tensor<Real>(item.complete_seq[m]);
    }
    auto inc = mct_forward_sample(x_masked, item.true_len, mct, cfg);
    auto com = mct_forward_sample(x_complete, item.true_len, mct, cfg);

    std::array<TensorPtr<Real>, kNumModalities> dec;
    for (int m = 0; m < kNumModalities; ++m) {
      dec[m] = lfi_decode(inc.reinforced[m], x_masked[m], item.true_len[m], hfr.dec[m]);
      std::int64_t steps = 0;
      for (auto b : item.mask[m]) steps += b;
      if (steps > 0) {
        lfi_sum = add(lfi_sum, lfi_masked_sum(dec[m], x_complete[m], item.mask[m]));
        masked_elems += steps * cfg.feat_dim[m];
      }
    }
    inc_rows.push_back(inc.fused);
    com_rows.push_back(com.fused);
    com_ce = add(com_ce, ce_loss(com.probs, item.label));

    tr.incomplete.push_back(std::move(inc));
    tr.complete.push_back(std::move(com));
    tr.decoded.push_back(std::move(dec));
  }

  tr.lfi_loss = masked_elems > 0 ? scale(lfi_sum, static_cast<Real>(1.0 / static_cast<double>(masked_elems)))
                                 : scale(lfi_sum, Real(0));
  auto h_inc = concat_rows(inc_rows);
  auto h_com = concat_rows(com_rows);
  tr.distance_term = gfa_distance(affine(h_inc, hfr.align_w, hfr.align_b), h_com, metric, cmd_order);
  tr.gfa_loss = add(scale(com_ce, static_cast<Real>(1.0 / B)), tr.distance_term);
  return tr;
}

// L = L_CE + alpha * L_GFA + beta * L_LFI
template <class Real>
TensorPtr<Real> total_loss(const TensorPtr<Real>& ce, const TensorPtr<Real>& gfa, const TensorPtr<Real>& lfi,
                           double alpha, double beta) {
  return add(ce, add(scale(gfa, static_cast<Real>(alpha)), scale(lfi, static_cast<Real>(beta))));
}

template <class Real>
struct CompositeLoss {
  TensorPtr<Real> ce, gfa, lfi, total;
  std::vector<int> preds;  // argmax of the masked-view probabilities
};

// The full training objective for one batch. With use_hfr false the
// reconstruction terms are exact zeros and only the task branch runs.
template <class Real>
CompositeLoss<Real> composite_loss(const Batch& batch, const MCTParams<Real>& mct, const HFRParams<Real>& hfr,
                                   bool use_hfr, const ModelConfig& cfg, GfaMetric metric, int cmd_order,
                                   double alpha, double beta) {
  CompositeLoss<Real> out;
  const int B = batch.size();
  if (B < 1) throw std::invalid_argument("loss: empty batch");
  auto argmax = [](const TensorPtr<Real>& probs) {
    int best = 0;
    for (int j = 1; j < probs->cols(); ++j)
      if (probs->values[j] > probs->values[best]) best = j;
    return best;
  };
  TensorPtr<Real> ce = make_scalar<Real>(0);
  if (use_hfr) {
    auto tr = hfr_forward(batch, mct, hfr, cfg, metric, cmd_order);
    for (int i = 0; i < B; ++i) {
      ce = add(ce, ce_loss(tr.incomplete[i].probs, batch.items[i].label));
      out.preds.push_back(argmax(tr.incomplete[i].probs));
    }
    out.gfa = tr.gfa_loss;
    out.lfi = tr.lfi_loss;
  } else {
    for (const auto& item : batch.items) {
      auto tr = mct_forward_item(item, /*complete_view=*/false, mct, cfg);
      ce = add(ce, ce_loss(tr.probs, item.label));
      out.preds.push_back(argmax(tr.probs));
    }
    out.gfa = make_scalar<Real>(0);
    out.lfi = make_scalar<Real>(0);
  }
  out.ce = scale(ce, static_cast<Real>(1.0 / B));
  out.total = total_loss(out.ce, out.gfa, out.lfi, alpha, beta);
  return out;
}

}  // namespace mcthfr
