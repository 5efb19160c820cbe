#pragma once

// Modality-collaborative transformer: per-modality Conv1D + sinusoidal
// position encoding, N stacked multimodal re-scaled attention units (MRAU),
// attention pooling, and the softmax classifier.
//
// The forward pass works on one sample at a time; batches are loops over
// samples whose pooled vectors get stacked where a batch-level quantity is
// needed. Padded rows carry zero attention mass and zero pooling weight, so
// the padded width of a collated batch never changes the outputs.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcthfr/data.hpp"
#include "mcthfr/rng.hpp"
#include "mcthfr/tensor.hpp"

namespace mcthfr {

struct ModelConfig {
  int hidden = 128;   // shared width d
  int layers = 4;     // stacked MRAU count N (0 = encoder-only degenerate)
  int heads = 4;
  int head_dim = 32;  // d_k; heads * head_dim must equal hidden
  std::array<int, kNumModalities> kernel = {3, 3, 1};
  std::array<int, kNumModalities> max_len = {400, 40, 50};
  int classes = 4;
  int ffn_hidden = 0;        // 0 means 2 * hidden
  int classifier_depth = 1;  // affine layers in the classifier head
  bool use_gamma_b = true;   // attention balance factor 1/sqrt(T_m)
  bool use_gamma_e = true;   // attention extrapolation factor log ratio
  std::array<int, kNumModalities> feat_dim = {10, 6, 8};  // dataset input dims

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 2 * hidden; }

  void validate() const {
    if (hidden < 1 || layers < 0 || classes < 2) throw std::invalid_argument("model: bad hidden/layers/classes");
    if (heads < 1 || head_dim < 1 || heads * head_dim != hidden)
      throw std::invalid_argument("model: heads*head_dim must equal hidden (" + std::to_string(heads) + "*" +
                                  std::to_string(head_dim) + " != " + std::to_string(hidden) + ")");
    for (int m = 0; m < kNumModalities; ++m) {
      if (kernel[m] < 1 || kernel[m] % 2 == 0) throw std::invalid_argument("model: kernel sizes must be odd");
      if (max_len[m] < 1 || feat_dim[m] < 1) throw std::invalid_argument("model: bad max_len/feat_dim");
    }
    if (classifier_depth < 1) throw std::invalid_argument("model: classifier_depth must be >= 1");
  }
};

// Re-scaling factors for the hyper-modality keys, computed from true lengths.
struct RescaleFactors {
  std::array<double, kNumModalities> gamma_b = {1.0, 1.0, 1.0};
  double gamma_e = 1.0;
};

inline RescaleFactors rescale_factors(const std::array<int, kNumModalities>& true_lens,
                                      const std::array<int, kNumModalities>& max_lens) {
  RescaleFactors f;
  int sum = 0, sum_max = 0;
  for (int m = 0; m < kNumModalities; ++m) {
    if (true_lens[m] < 1) throw std::invalid_argument("rescale: zero-length modality " + std::to_string(m));
    f.gamma_b[m] = 1.0 / std::sqrt(static_cast<double>(true_lens[m]));
    sum += true_lens[m];
    sum_max += max_lens[m];
  }
  // natural-log ratio form of log_{sum_max}(sum); argument clamped to >= 2
  f.gamma_e = std::log(static_cast<double>(std::max(sum, 2))) / std::log(static_cast<double>(std::max(sum_max, 2)));
  return f;
}

// Sinusoidal position embedding rows: PE(t, 2i) = sin(t / 10000^(2i/d)),
// PE(t, 2i+1) = cos with the same argument.
template <class Real>
TensorPtr<Real> positional_encoding(int T, int d) {
  auto pe = make_tensor<Real>({T, d});
  for (int t = 0; t < T; ++t)
    for (int i = 0; 2 * i < d; ++i) {
      const double angle = t / std::pow(10000.0, (2.0 * i) / d);
      pe->values[static_cast<std::size_t>(t) * d + 2 * i] = static_cast<Real>(std::sin(angle));
      if (2 * i + 1 < d) pe->values[static_cast<std::size_t>(t) * d + 2 * i + 1] = static_cast<Real>(std::cos(angle));
    }
  return pe;
}

// ---------------------------------------------------------------------------
// parameters

template <class Real>
struct ParamRegistry {
  std::vector<std::pair<std::string, TensorPtr<Real>>> entries;

  void add(const std::string& name, const TensorPtr<Real>& t) { entries.emplace_back(name, t); }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries) n += static_cast<std::int64_t>(t->size());
    return n;
  }
};

namespace init {

// Uniform +-sqrt(6/(fan_in+fan_out)); biases zero; LN gain one.
template <class Real>
TensorPtr<Real> projection(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  auto t = make_tensor<Real>(std::move(shape), true);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t->values) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

template <class Real>
TensorPtr<Real> zeros(std::vector<int> shape) {
  return make_tensor<Real>(std::move(shape), true);
}

template <class Real>
TensorPtr<Real> ones(std::vector<int> shape) {
  auto t = make_tensor<Real>(std::move(shape), true);
  for (auto& v : t->values) v = Real(1);
  return t;
}

}  // namespace init

template <class Real>
struct MrauLayerParams {
  // per modality
  std::array<TensorPtr<Real>, kNumModalities> wq, wk, wv;      // [d x d]
  std::array<TensorPtr<Real>, kNumModalities> wo, bo;          // [d x d], [1 x d]
  std::array<TensorPtr<Real>, kNumModalities> ln1_g, ln1_b;    // [1 x d]
  std::array<TensorPtr<Real>, kNumModalities> ln2_g, ln2_b;
  std::array<TensorPtr<Real>, kNumModalities> ffn_w1, ffn_b1;  // [d x f], [1 x f]
  std::array<TensorPtr<Real>, kNumModalities> ffn_w2, ffn_b2;  // [f x d], [1 x d]
};

template <class Real>
struct MCTParams {
  std::array<TensorPtr<Real>, kNumModalities> conv_w;  // [k x d_m x d]
  std::array<TensorPtr<Real>, kNumModalities> conv_b;  // [1 x d]
  std::vector<MrauLayerParams<Real>> layers;
  std::array<TensorPtr<Real>, kNumModalities> pool_query;  // [d x 1]
  std::vector<TensorPtr<Real>> cls_w;  // classifier stack, last maps to classes
  std::vector<TensorPtr<Real>> cls_b;

  static MCTParams init_random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::derive({seed, 0x4d4354ull}));  // independent of data streams
    MCTParams p;
    const int d = cfg.hidden, f = cfg.ffn();
    for (int m = 0; m < kNumModalities; ++m) {
      const int dm = cfg.feat_dim[m], k = cfg.kernel[m];
      p.conv_w[m] = init::projection<Real>({k, dm, d}, k * dm, d, rng);
      p.conv_b[m] = init::zeros<Real>({1, d});
    }
    p.layers.resize(cfg.layers);
    for (auto& L : p.layers)
      for (int m = 0; m < kNumModalities; ++m) {
        L.wq[m] = init::projection<Real>({d, d}, d, d, rng);
        L.wk[m] = init::projection<Real>({d, d}, d, d, rng);
        L.wv[m] = init::projection<Real>({d, d}, d, d, rng);
        L.wo[m] = init::projection<Real>({d, d}, d, d, rng);
        L.bo[m] = init::zeros<Real>({1, d});
        L.ln1_g[m] = init::ones<Real>({1, d});
        L.ln1_b[m] = init::zeros<Real>({1, d});
        L.ln2_g[m] = init::ones<Real>({1, d});
        L.ln2_b[m] = init::zeros<Real>({1, d});
        L.ffn_w1[m] = init::projection<Real>({d, f}, d, f, rng);
        L.ffn_b1[m] = init::zeros<Real>({1, f});
        L.ffn_w2[m] = init::projection<Real>({f, d}, f, d, rng);
        L.ffn_b2[m] = init::zeros<Real>({1, d});
      }
    for (int m = 0; m < kNumModalities; ++m) p.pool_query[m] = init::zeros<Real>({d, 1});
    int in = 3 * d;
    for (int layer = 0; layer < cfg.classifier_depth; ++layer) {
      const int outw = layer + 1 == cfg.classifier_depth ? cfg.classes : 3 * d;
      p.cls_w.push_back(init::projection<Real>({in, outw}, in, outw, rng));
      p.cls_b.push_back(init::zeros<Real>({1, outw}));
      in = outw;
    }
    return p;
  }

  void register_into(ParamRegistry<Real>& reg) const {
    static const char* mod[] = {"a", "v", "l"};
    for (int m = 0; m < kNumModalities; ++m) {
      reg.add(std::string("encoder.conv_w.") + mod[m], conv_w[m]);
      reg.add(std::string("encoder.conv_b.") + mod[m], conv_b[m]);
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string pre = "mrau." + std::to_string(i) + ".";
      for (int m = 0; m < kNumModalities; ++m) {
        const std::string mm = std::string(".") + mod[m];
        reg.add(pre + "wq" + mm, layers[i].wq[m]);
        reg.add(pre + "wk" + mm, layers[i].wk[m]);
        reg.add(pre + "wv" + mm, layers[i].wv[m]);
        reg.add(pre + "wo" + mm, layers[i].wo[m]);
        reg.add(pre + "bo" + mm, layers[i].bo[m]);
        reg.add(pre + "ln1_g" + mm, layers[i].ln1_g[m]);
        reg.add(pre + "ln1_b" + mm, layers[i].ln1_b[m]);
        reg.add(pre + "ln2_g" + mm, layers[i].ln2_g[m]);
        reg.add(pre + "ln2_b" + mm, layers[i].ln2_b[m]);
        reg.add(pre + "ffn_w1" + mm, layers[i].ffn_w1[m]);
        reg.add(pre + "ffn_b1" + mm, layers[i].ffn_b1[m]);
        reg.add(pre + "ffn_w2" + mm, layers[i].ffn_w2[m]);
        reg.add(pre + "ffn_b2" + mm, layers[i].ffn_b2[m]);
      }
    }
    for (int m = 0; m < kNumModalities; ++m) reg.add(std::string("pool.query.") + mod[m], pool_query[m]);
    for (std::size_t i = 0; i < cls_w.size(); ++i) {
      reg.add("classifier.w" + std::to_string(i), cls_w[i]);
      reg.add("classifier.b" + std::to_string(i), cls_b[i]);
    }
  }
};

// ---------------------------------------------------------------------------
// forward pieces

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbFloor = 1e-12;

template <class Real>
TensorPtr<Real> affine(const TensorPtr<Real>& x, const TensorPtr<Real>& w, const TensorPtr<Real>& b) {
  return add_rowvec(matmul(x, w), b);
}

// Conv1D over time plus position encoding; padded rows re-zeroed so they stay
// inert through the rest of the network.
template <class Real>
TensorPtr<Real> unimodal_encode(const TensorPtr<Real>& x, int true_len, int modality, const MCTParams<Real>& p) {
  auto h = conv1d_temporal(x, p.conv_w[modality], p.conv_b[modality]);
  auto pe = positional_encoding<Real>(h->rows(), h->cols());
  h = add(h, pe);
  if (true_len < h->rows()) {
    std::vector<Real> keep(static_cast<std::size_t>(h->rows()), Real(0));
    for (int t = 0; t < true_len; ++t) keep[t] = Real(1);
    h = scale_rows(h, std::move(keep));
  }
  return h;
}

// Optional per-layer inspection hook for tests.
template <class Real>
struct MrauProbe {
  // attention weight matrices, one per (modality, head), rows sum to 1 over the
  // unpadded key span
  std::array<std::vector<TensorPtr<Real>>, kNumModalities> attn_weights;
  // multi-head attention sublayer output after the output projection
  std::array<TensorPtr<Real>, kNumModalities> attn_out;
};

// One MRAU layer: per-modality Q/K/V projected once, keys re-scaled and
// concatenated into the hyper-modality, each modality reinforced by
// multi-head cross-attention, then residual + LN and FFN + LN.
template <class Real>
std::array<TensorPtr<Real>, kNumModalities> mrau_forward(const std::array<TensorPtr<Real>, kNumModalities>& h,
                                                         const std::array<int, kNumModalities>& true_lens,
                                                         const MrauLayerParams<Real>& L, const ModelConfig& cfg,
                                                         MrauProbe<Real>* probe = nullptr) {
  const int d = cfg.hidden, dk = cfg.head_dim, heads = cfg.heads;
  for (int m = 0; m < kNumModalities; ++m)
    if (h[m]->cols() != d) throw std::invalid_argument("mrau: input width != hidden");

  const RescaleFactors rf = rescale_factors(true_lens, cfg.max_len);

  std::array<TensorPtr<Real>, kNumModalities> q, k, v;
  std::vector<TensorPtr<Real>> k_parts, v_parts;
  std::vector<int> seg_lens, valid_lens;
  for (int m = 0; m < kNumModalities; ++m) {
    q[m] = matmul(h[m], L.wq[m]);
    k[m] = matmul(h[m], L.wk[m]);
    v[m] = matmul(h[m], L.wv[m]);
    double g = 1.0;
    if (cfg.use_gamma_b) g *= rf.gamma_b[m];
    if (cfg.use_gamma_e) g *= rf.gamma_e;
    k_parts.push_back(g == 1.0 ? k[m] : scale(k[m], static_cast<Real>(g)));
    v_parts.push_back(v[m]);
    seg_lens.push_back(h[m]->rows());
    valid_lens.push_back(true_lens[m]);
  }
  auto kc = concat_rows(k_parts);
  auto vc = concat_rows(v_parts);
  auto mask = padding_mask_row<Real>(seg_lens, valid_lens);

  const Real inv_sqrt_dk = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::array<TensorPtr<Real>, kNumModalities> out;
  for (int m = 0; m < kNumModalities; ++m) {
    std::vector<TensorPtr<Real>> head_outs;
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = slice_cols(q[m], hd * dk, dk);
      auto kh = slice_cols(kc, hd * dk, dk);
      auto vh = slice_cols(vc, hd * dk, dk);
      auto scores = add_rowvec(scale(matmul_nt(qh, kh), inv_sqrt_dk), mask);
      auto attn = softmax_rows(scores);
      if (probe) probe->attn_weights[m].push_back(attn);
      head_outs.push_back(matmul(attn, vh));
    }
    auto merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    auto projected = affine(merged, L.wo[m], L.bo[m]);
    if (probe) probe->attn_out[m] = projected;
    auto res1 = layer_norm(add(projected, h[m]), L.ln1_g[m], L.ln1_b[m], static_cast<Real>(kLayerNormEps));
    auto ff = affine(relu(affine(res1, L.ffn_w1[m], L.ffn_b1[m])), L.ffn_w2[m], L.ffn_b2[m]);
    out[m] = layer_norm(add(ff, res1), L.ln2_g[m], L.ln2_b[m], static_cast<Real>(kLayerNormEps));
  }
  return out;
}

// Learned-query softmax pooling over the unpadded span.
template <class Real>
TensorPtr<Real> attention_pool(const TensorPtr<Real>& e, int true_len, const TensorPtr<Real>& query) {
  if (true_len < 1) throw std::invalid_argument("pool: true_len must be >= 1");
  const int d = e->cols();
  auto scores = scale(transpose(matmul(e, query)), static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d))));
  auto mask = padding_mask_row<Real>({e->rows()}, {true_len});
  auto alpha = softmax_rows(add_rowvec(scores, mask));
  return matmul(alpha, e);  // [1 x d]
}

template <class Real>
TensorPtr<Real> classify(const TensorPtr<Real>& fused, const MCTParams<Real>& p) {
  auto x = fused;
  for (std::size_t i = 0; i < p.cls_w.size(); ++i) {
    x = affine(x, p.cls_w[i], p.cls_b[i]);
    if (i + 1 < p.cls_w.size()) x = relu(x);
  }
  return softmax_rows(x);
}

// -log(probs[label]) with a floor guard on the probability.
template <class Real>
TensorPtr<Real> ce_loss(const TensorPtr<Real>& probs, int label) {
  if (label < 0 || label >= probs->cols()) throw std::invalid_argument("ce_loss: label out of range");
  return neg(log_guard(pick(probs, static_cast<std::size_t>(label)), static_cast<Real>(kProbFloor)));
}

template <class Real>
struct ForwardTrace {
  std::array<TensorPtr<Real>, kNumModalities> encoded;     // H_m
  std::array<TensorPtr<Real>, kNumModalities> reinforced;  // E_m after the last layer
  std::array<TensorPtr<Real>, kNumModalities> pooled;      // h_m
  TensorPtr<Real> fused;                                   // [1 x 3d]
  TensorPtr<Real> probs;                                   // [1 x C]
};

template <class Real>
TensorPtr<Real> to_tensor(const Mat& m, bool requires_grad = false) {
  auto t = make_tensor<Real>({m.rows, m.cols}, requires_grad);
  for (std::size_t i = 0; i < m.v.size(); ++i) t->values[i] = static_cast<Real>(m.v[i]);
  return t;
}

// Full task branch on one collated item's (possibly masked) view.
template <class Real>
ForwardTrace<Real> mct_forward_sample(const std::array<TensorPtr<Real>, kNumModalities>& x,
                                      const std::array<int, kNumModalities>& true_lens, const MCTParams<Real>& p,
                                      const ModelConfig& cfg) {
  ForwardTrace<Real> tr;
  for (int m = 0; m < kNumModalities; ++m) {
    if (x[m]->cols() != cfg.feat_dim[m])
      throw std::invalid_argument("forward: modality " + std::to_string(m) + " feature dim " +
                                  std::to_string(x[m]->cols()) + " != configured " + std::to_string(cfg.feat_dim[m]));
    tr.encoded[m] = unimodal_encode(x[m], true_lens[m], m, p);
  }
  auto cur = tr.encoded;
  for (const auto& L : p.layers) cur = mrau_forward(cur, true_lens, L, cfg);
  tr.reinforced = cur;
  for (int m = 0; m < kNumModalities; ++m) tr.pooled[m] = attention_pool(cur[m], true_lens[m], p.pool_query[m]);
  tr.fused = concat_cols(std::vector<TensorPtr<Real>>{tr.pooled[0], tr.pooled[1], tr.pooled[2]});
  tr.probs = classify(tr.fused, p);
  return tr;
}

template <class Real>
ForwardTrace<Real> mct_forward_item(const BatchItem& item, bool complete_view, const MCTParams<Real>& p,
                                    const ModelConfig& cfg) {
  std::array<TensorPtr<Real>, kNumModalities> x;
  for (int m = 0; m < kNumModalities; ++m) x[m] = to_tensor<Real>(complete_view ? item.complete_seq[m] : item.seq[m]);
  return mct_forward_sample(x, item.true_len, p, cfg);
}

}  // namespace mcthfr
