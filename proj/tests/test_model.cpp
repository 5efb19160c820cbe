#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "mcthfr/model.hpp"
#include "mcthfr/rng.hpp"

using namespace mcthfr;

namespace {

ModelConfig tiny_cfg(int heads = 2, int head_dim = 4) {
  ModelConfig cfg;
  cfg.hidden = heads * head_dim;
  cfg.layers = 1;
  cfg.heads = heads;
  cfg.head_dim = head_dim;
  cfg.kernel = {3, 3, 1};
  cfg.max_len = {8, 6, 7};
  cfg.classes = 3;
  cfg.feat_dim = {5, 4, 3};
  return cfg;
}

template <class Real>
std::array<TensorPtr<Real>, kNumModalities> random_hidden(const ModelConfig& cfg,
                                                          const std::array<int, kNumModalities>& lens, Rng& rng) {
  std::array<TensorPtr<Real>, kNumModalities> h;
  for (int m = 0; m < kNumModalities; ++m) {
    h[m] = make_tensor<Real>({lens[m], cfg.hidden});
    for (auto& v : h[m]->values) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
  }
  return h;
}

MultimodalSample random_sample(const ModelConfig& cfg, const std::array<int, kNumModalities>& lens, int label,
                               Rng& rng) {
  MultimodalSample s;
  s.label = label;
  for (int m = 0; m < kNumModalities; ++m) {
    s.seq[m] = Mat(lens[m], cfg.feat_dim[m]);
    for (auto& v : s.seq[m].v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return s;
}

}  // namespace

TEST_CASE("position encoding: first row alternates 0/1 and all values stay in [-1,1]") {
  auto pe = positional_encoding<double>(400, 128);
  for (int i = 0; i < 128; ++i) CHECK(pe->values[i] == (i % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe->values) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("rescale factors: trivial identities and the log-ratio oracle") {
  auto at_max = rescale_factors({400, 40, 50}, {400, 40, 50});
  CHECK(at_max.gamma_e == doctest::Approx(1.0).epsilon(1e-15));

  auto quarter = rescale_factors({4, 1, 1}, {400, 40, 50});
  CHECK(quarter.gamma_b[0] == doctest::Approx(0.5).epsilon(1e-15));

  auto mid = rescale_factors({100, 10, 12}, {400, 40, 50});
  CHECK(mid.gamma_e == doctest::Approx(std::log(122.0) / std::log(490.0)).epsilon(1e-14));
  CHECK(mid.gamma_e == doctest::Approx(0.77554).epsilon(1e-4));

  CHECK_THROWS_AS(rescale_factors({0, 4, 5}, {400, 40, 50}), std::invalid_argument);
}

TEST_CASE("rescale factors: gamma_e grows with total length, gamma_b shrinks with modality length") {
  double prev = 0;
  for (int t = 10; t <= 400; t += 30) {
    auto f = rescale_factors({t, 20, 20}, {400, 40, 50});
    CHECK(f.gamma_e > prev);
    prev = f.gamma_e;
  }
  double prev_b = 2;
  for (int t = 1; t <= 300; t += 25) {
    auto f = rescale_factors({t, 20, 20}, {400, 40, 50});
    CHECK(f.gamma_b[0] < prev_b);
    prev_b = f.gamma_b[0];
  }
}

TEST_CASE("mrau keeps shapes, so layers stack") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<double>::init_random(cfg, 3);
  Rng rng(21);
  const std::array<int, kNumModalities> lens = {7, 5, 6};
  auto h = random_hidden<double>(cfg, lens, rng);
  auto e1 = mrau_forward(h, lens, params.layers[0], cfg);
  for (int m = 0; m < kNumModalities; ++m) CHECK(e1[m]->shape == h[m]->shape);
  auto e2 = mrau_forward(e1, lens, params.layers[0], cfg);
  for (int m = 0; m < kNumModalities; ++m) CHECK(e2[m]->shape == e1[m]->shape);
}

TEST_CASE("attention rows sum to one over the unpadded key span") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<double>::init_random(cfg, 4);
  Rng rng(22);
  const std::array<int, kNumModalities> buf = {8, 6, 7};   // padded buffer rows
  const std::array<int, kNumModalities> lens = {6, 4, 5};  // true lengths
  auto h = random_hidden<double>(cfg, buf, rng);
  MrauProbe<double> probe;
  mrau_forward(h, lens, params.layers[0], cfg, &probe);
  for (int m = 0; m < kNumModalities; ++m) {
    REQUIRE(probe.attn_weights[m].size() == static_cast<std::size_t>(cfg.heads));
    for (const auto& attn : probe.attn_weights[m]) {
      for (int i = 0; i < attn->rows(); ++i) {
        double s = 0;
        for (int j = 0; j < attn->cols(); ++j) s += attn->at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-6);
      }
      // padded key columns carry exactly zero mass
      int off = 0;
      for (int km = 0; km < kNumModalities; ++km) {
        for (int t = lens[km]; t < buf[km]; ++t)
          for (int i = 0; i < attn->rows(); ++i) CHECK(attn->at(i, off + t) == 0.0);
        off += buf[km];
      }
    }
  }
}

TEST_CASE("single-head attention block matches an independently coded reference CAU") {
  auto cfg = tiny_cfg(/*heads=*/1, /*head_dim=*/8);
  cfg.use_gamma_b = false;
  cfg.use_gamma_e = false;
  auto params = MCTParams<double>::init_random(cfg, 5);
  // Tie the per-modality key/value projections: the hyper-modality keys then
  // equal a single projection of the concatenated sequence, which is exactly
  // a vanilla CAU with the concatenation as source.
  for (int m = 1; m < kNumModalities; ++m) {
    params.layers[0].wk[m]->values = params.layers[0].wk[0]->values;
    params.layers[0].wv[m]->values = params.layers[0].wv[0]->values;
  }
  Rng rng(23);
  const std::array<int, kNumModalities> lens = {6, 4, 5};
  auto h = random_hidden<double>(cfg, lens, rng);
  MrauProbe<double> probe;
  mrau_forward(h, lens, params.layers[0], cfg, &probe);

  const int d = cfg.hidden;
  const int tc = lens[0] + lens[1] + lens[2];
  // reference: plain-loop CAU with the concatenated sequence as source
  auto matmul_ref = [d](const std::vector<double>& a, int ar, const std::vector<double>& b) {
    std::vector<double> c(static_cast<std::size_t>(ar) * d, 0.0);
    for (int i = 0; i < ar; ++i)
      for (int t = 0; t < d; ++t)
        for (int j = 0; j < d; ++j) c[i * d + j] += a[i * d + t] * b[t * d + j];
    return c;
  };
  std::vector<double> concat;
  for (int m = 0; m < kNumModalities; ++m)
    concat.insert(concat.end(), h[m]->values.begin(), h[m]->values.end());

  const auto& L = params.layers[0];
  for (int m = 0; m < kNumModalities; ++m) {
    auto q = matmul_ref(h[m]->values, lens[m], L.wq[m]->values);
    auto k = matmul_ref(concat, tc, L.wk[0]->values);
    auto v = matmul_ref(concat, tc, L.wv[0]->values);
    std::vector<double> out(static_cast<std::size_t>(lens[m]) * d, 0.0);
    for (int i = 0; i < lens[m]; ++i) {
      std::vector<double> row(tc);
      double mx = -1e300;
      for (int j = 0; j < tc; ++j) {
        double s = 0;
        for (int t = 0; t < d; ++t) s += q[i * d + t] * k[j * d + t];
        row[j] = s / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, row[j]);
      }
      double denom = 0;
      for (int j = 0; j < tc; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
      }
      for (int j = 0; j < tc; ++j)
        for (int t = 0; t < d; ++t) out[i * d + t] += row[j] / denom * v[j * d + t];
    }
    auto projected = matmul_ref(out, lens[m], L.wo[m]->values);
    for (int i = 0; i < lens[m]; ++i)
      for (int t = 0; t < d; ++t) {
        const double expect = projected[i * d + t] + L.bo[m]->values[t];
        CHECK(std::abs(probe.attn_out[m]->at(i, t) - expect) <= 1e-10);
      }
  }
}

TEST_CASE("attention pooling: single step, zero query, and the loop oracle") {
  Rng rng(24);
  const int d = 6;

  auto e1 = make_tensor<double>({1, d});
  for (auto& v : e1->values) v = rng.uniform(-1.0, 1.0);
  auto w = make_tensor<double>({d, 1});
  for (auto& v : w->values) v = rng.uniform(-1.0, 1.0);
  auto h1 = attention_pool(e1, 1, w);
  for (int j = 0; j < d; ++j) CHECK(h1->values[j] == doctest::Approx(e1->values[j]).epsilon(1e-12));

  auto e = make_tensor<double>({5, d});
  for (auto& v : e->values) v = rng.uniform(-1.0, 1.0);
  auto w0 = make_tensor<double>({d, 1});
  const int valid = 4;
  auto mean = attention_pool(e, valid, w0);
  for (int j = 0; j < d; ++j) {
    double s = 0;
    for (int t = 0; t < valid; ++t) s += e->at(t, j);
    CHECK(mean->values[j] == doctest::Approx(s / valid).epsilon(1e-12));
  }

  for (auto& v : w0->values) v = rng.uniform(-1.0, 1.0);
  auto pooled = attention_pool(e, valid, w0);
  std::vector<double> scores(valid), alpha(valid);
  double mx = -1e300, denom = 0;
  for (int t = 0; t < valid; ++t) {
    double s = 0;
    for (int j = 0; j < d; ++j) s += e->at(t, j) * w0->values[j];
    scores[t] = s / std::sqrt(static_cast<double>(d));
    mx = std::max(mx, scores[t]);
  }
  for (int t = 0; t < valid; ++t) {
    alpha[t] = std::exp(scores[t] - mx);
    denom += alpha[t];
  }
  for (int j = 0; j < d; ++j) {
    double s = 0;
    for (int t = 0; t < valid; ++t) s += alpha[t] / denom * e->at(t, j);
    CHECK(std::abs(pooled->values[j] - s) <= 1e-10);
  }
}

TEST_CASE("classifier: zero weights give the uniform distribution; probabilities sum to one") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<double>::init_random(cfg, 6);
  for (auto& w : params.cls_w)
    for (auto& v : w->values) v = 0.0;
  auto fused = make_tensor<double>({1, 3 * cfg.hidden});
  Rng rng(25);
  for (auto& v : fused->values) v = rng.uniform(-1.0, 1.0);
  auto probs = classify(fused, params);
  double sum = 0;
  for (double p : probs->values) {
    CHECK(p == doctest::Approx(1.0 / cfg.classes).epsilon(1e-12));
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-6);
}

TEST_CASE("classifier argmax is invariant to a constant bias shift") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<double>::init_random(cfg, 7);
  auto fused = make_tensor<double>({1, 3 * cfg.hidden});
  Rng rng(26);
  for (auto& v : fused->values) v = rng.uniform(-1.0, 1.0);
  auto p0 = classify(fused, params);
  for (auto& v : params.cls_b.back()->values) v += 3.7;  // shift every logit
  auto p1 = classify(fused, params);
  const auto am = [](const TensorPtr<double>& p) {
    int best = 0;
    for (int j = 1; j < p->cols(); ++j)
      if (p->values[j] > p->values[best]) best = j;
    return best;
  };
  CHECK(am(p0) == am(p1));
}

TEST_CASE("cross entropy on canonical distributions") {
  auto uniform = make_tensor<double>({1, 4}, {0.25, 0.25, 0.25, 0.25});
  CHECK(ce_loss(uniform, 2)->values[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto certain = make_tensor<double>({1, 3}, {0.0, 1.0, 0.0});
  CHECK(ce_loss(certain, 1)->values[0] == 0.0);

  auto half = make_tensor<double>({1, 2}, {0.5, 0.5});
  CHECK(ce_loss(half, 0)->values[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("forward: identical samples yield identical probability rows") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<float>::init_random(cfg, 8);
  Rng rng(27);
  auto s = random_sample(cfg, {6, 4, 5}, 1, rng);
  Batch b = collate_complete({s, s}, cfg.max_len);
  auto t0 = mct_forward_item(b.items[0], true, params, cfg);
  auto t1 = mct_forward_item(b.items[1], true, params, cfg);
  CHECK(t0.probs->values == t1.probs->values);
  double sum = 0;
  for (float p : t0.probs->values) sum += p;
  CHECK(std::abs(sum - 1.0) <= 1e-6);
}

TEST_CASE("forward: encoder-only degenerate model (no fusion layers) is accepted") {
  auto cfg = tiny_cfg();
  cfg.layers = 0;
  auto params = MCTParams<float>::init_random(cfg, 9);
  Rng rng(28);
  auto s = random_sample(cfg, {5, 3, 4}, 0, rng);
  Batch b = collate_complete({s}, cfg.max_len);
  auto tr = mct_forward_item(b.items[0], true, params, cfg);
  CHECK(tr.probs->cols() == cfg.classes);
  for (int m = 0; m < kNumModalities; ++m) CHECK(tr.reinforced[m]->values == tr.encoded[m]->values);
}

TEST_CASE("inserting extra padded steps never changes the prediction") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<float>::init_random(cfg, 10);
  Rng rng(29);
  auto s = random_sample(cfg, {6, 4, 5}, 2, rng);

  Batch tight = collate_complete({s}, cfg.max_len);
  auto base = mct_forward_item(tight.items[0], true, params, cfg);

  BatchItem padded = tight.items[0];
  for (int m = 0; m < kNumModalities; ++m) {
    Mat grown(padded.seq[m].rows + 2, padded.seq[m].cols);
    for (int t = 0; t < padded.seq[m].rows; ++t)
      for (int j = 0; j < padded.seq[m].cols; ++j) grown.at(t, j) = padded.seq[m].at(t, j);
    padded.seq[m] = grown;
    padded.complete_seq[m] = grown;
  }
  auto grown_tr = mct_forward_item(padded, true, params, cfg);
  for (int j = 0; j < cfg.classes; ++j)
    CHECK(std::abs(grown_tr.probs->values[j] - base.probs->values[j]) <= 1e-6);
}

TEST_CASE("at the configured maximum lengths, disabling gamma_e is bit-exact") {
  auto cfg = tiny_cfg();
  auto params = MCTParams<float>::init_random(cfg, 11);
  Rng rng(30);
  auto s = random_sample(cfg, cfg.max_len, 0, rng);  // sum T == sum T_max -> gamma_e == 1
  Batch b = collate_complete({s}, cfg.max_len);

  auto with = mct_forward_item(b.items[0], true, params, cfg);
  cfg.use_gamma_e = false;
  auto without = mct_forward_item(b.items[0], true, params, cfg);
  CHECK(std::memcmp(with.probs->values.data(), without.probs->values.data(),
                    with.probs->values.size() * sizeof(float)) == 0);
}
