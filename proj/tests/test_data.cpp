#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mcthfr/data.hpp"
#include "mcthfr/rng.hpp"

using namespace mcthfr;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.classes = 4;
  cfg.feat_dim = {6, 4, 5};
  cfg.len = {LengthRange{8, 14}, LengthRange{4, 8}, LengthRange{5, 9}};
  cfg.seed = 42;
  return cfg;
}

bool samples_equal(const std::vector<MultimodalSample>& a, const std::vector<MultimodalSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].label != b[i].label) return false;
    for (int m = 0; m < kNumModalities; ++m) {
      if (a[i].seq[m].rows != b[i].seq[m].rows || a[i].seq[m].cols != b[i].seq[m].cols) return false;
      if (a[i].seq[m].v != b[i].seq[m].v) return false;
    }
  }
  return true;
}

// Bias-free least-squares one-vs-all probe on time-averaged single-modality
// features (samples of one class lie on a ray, so an intercept would let
// short-window samples collapse onto other classes); solves the
// ridge-stabilized normal equations by Gaussian elimination.
double linear_probe_train_accuracy(const std::vector<MultimodalSample>& samples, int modality, int classes) {
  const int d = samples[0].seq[modality].cols;
  const int n = static_cast<int>(samples.size());
  const int w = d;
  std::vector<std::vector<double>> feats(n, std::vector<double>(w, 1.0));
  for (int i = 0; i < n; ++i) {
    const Mat& x = samples[i].seq[modality];
    for (int j = 0; j < d; ++j) {
      double s = 0;
      for (int t = 0; t < x.rows; ++t) s += x.at(t, j);
      feats[i][j] = s / x.rows;
    }
  }
  // XtX and XtY
  std::vector<std::vector<double>> a(w, std::vector<double>(w, 0.0));
  std::vector<std::vector<double>> rhs(w, std::vector<double>(classes, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < w; ++p) {
      for (int q = 0; q < w; ++q) a[p][q] += feats[i][p] * feats[i][q];
      rhs[p][samples[i].label] += feats[i][p];
    }
  }
  for (int p = 0; p < w; ++p) a[p][p] += 1e-8;
  // Gaussian elimination with partial pivoting
  for (int col = 0; col < w; ++col) {
    int piv = col;
    for (int r = col + 1; r < w; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (int r = 0; r < w; ++r) {
      if (r == col || a[r][col] == 0.0) continue;
      const double f = a[r][col] / a[col][col];
      for (int q = col; q < w; ++q) a[r][q] -= f * a[col][q];
      for (int q = 0; q < classes; ++q) rhs[r][q] -= f * rhs[col][q];
    }
  }
  std::vector<std::vector<double>> weights(w, std::vector<double>(classes));
  for (int p = 0; p < w; ++p)
    for (int q = 0; q < classes; ++q) weights[p][q] = rhs[p][q] / a[p][p];

  int correct = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_score = -1e300;
    for (int cl = 0; cl < classes; ++cl) {
      double s = 0;
      for (int p = 0; p < w; ++p) s += feats[i][p] * weights[p][cl];
      if (s > best_score) {
        best_score = s;
        best = cl;
      }
    }
    correct += best == samples[i].label;
  }
  return static_cast<double>(correct) / n;
}

}  // namespace

TEST_CASE("generation is deterministic given the seed") {
  auto cfg = small_cfg();
  auto a = generate_dataset(cfg, 50);
  auto b = generate_dataset(cfg, 50);
  CHECK(samples_equal(a, b));
  cfg.seed = 43;
  auto c = generate_dataset(cfg, 50);
  CHECK_FALSE(samples_equal(a, c));
}

TEST_CASE("near-infinite snr with no redundancy is linearly separable per modality") {
  auto cfg = small_cfg();
  cfg.snr = 1e6;
  cfg.redundancy = 0.0;
  // windows of at least 0.3 * 14 = 4 steps, longer than any prototype frequency
  cfg.len = {LengthRange{14, 22}, LengthRange{14, 20}, LengthRange{14, 20}};
  auto samples = generate_dataset(cfg, 200);
  for (int m = 0; m < kNumModalities; ++m) CHECK(linear_probe_train_accuracy(samples, m, cfg.classes) == 1.0);
}

TEST_CASE("class histogram is uniform within five percent") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 2000);
  std::vector<int> hist(cfg.classes, 0);
  for (const auto& s : samples) ++hist[s.label];
  for (int c = 0; c < cfg.classes; ++c) {
    const double frac = static_cast<double>(hist[c]) / samples.size();
    CHECK(std::abs(frac - 1.0 / cfg.classes) <= 0.05);
  }
}

TEST_CASE("masking at rate zero and one behave as the degenerate cases") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 3);

  auto [kept, empty_mask] = apply_masking(samples[0], 0.0, 9, 0);
  CHECK(empty_mask.count_masked_steps() == 0);
  CHECK(samples_equal({kept}, {samples[0]}));

  auto [zeroed, full_mask] = apply_masking(samples[1], 1.0, 9, 1);
  std::int64_t total_steps = 0;
  for (int m = 0; m < kNumModalities; ++m) total_steps += samples[1].length(m);
  CHECK(full_mask.count_masked_steps() == total_steps);
  for (int m = 0; m < kNumModalities; ++m)
    for (float v : zeroed.seq[m].v) CHECK(v == 0.0f);
}

TEST_CASE("empirical masking rate converges to p_miss over 10000 steps") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 600);  // ~20+ steps per sample x 600 > 10000
  std::int64_t masked = 0, total = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [_, mask] = apply_masking(samples[i], 0.2, 77, static_cast<std::uint64_t>(i));
    masked += mask.count_masked_steps();
    for (int m = 0; m < kNumModalities; ++m) total += samples[i].length(m);
  }
  CHECK(total >= 10000);
  const double frac = static_cast<double>(masked) / static_cast<double>(total);
  CHECK(frac >= 0.19);
  CHECK(frac <= 0.21);
}

TEST_CASE("masking is deterministic in (seed, sample, rate) and zeroes exactly the flagged steps") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 2);
  auto [m1, k1] = apply_masking(samples[0], 0.3, 5, 0);
  auto [m2, k2] = apply_masking(samples[0], 0.3, 5, 0);
  CHECK(k1.on == k2.on);
  CHECK(samples_equal({m1}, {m2}));
  auto [m3, k3] = apply_masking(samples[0], 0.3, 6, 0);
  CHECK(k1.on != k3.on);

  for (int m = 0; m < kNumModalities; ++m)
    for (int t = 0; t < samples[0].length(m); ++t)
      for (int j = 0; j < samples[0].seq[m].cols; ++j) {
        if (k1.on[m][t])
          CHECK(m1.seq[m].at(t, j) == 0.0f);
        else
          CHECK(m1.seq[m].at(t, j) == samples[0].seq[m].at(t, j));
      }
}

TEST_CASE("collate truncates to the caps, pads with zeros, and clips masks") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 4);
  std::vector<MultimodalSample> masked;
  std::vector<MaskSet> masks;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [ms, mk] = apply_masking(samples[i], 0.4, 3, static_cast<std::uint64_t>(i));
    masked.push_back(ms);
    masks.push_back(mk);
  }
  const std::array<int, kNumModalities> caps = {6, 5, 4};
  Batch b = collate(samples, masked, masks, caps);
  for (int m = 0; m < kNumModalities; ++m) {
    CHECK(b.padded_len[m] <= caps[m]);
    for (const auto& item : b.items) {
      CHECK(item.true_len[m] == std::min(caps[m], item.true_len[m]));
      CHECK(static_cast<int>(item.mask[m].size()) == item.true_len[m]);
      // padded rows are zero in both views
      for (int t = item.true_len[m]; t < b.padded_len[m]; ++t)
        for (int j = 0; j < item.seq[m].cols; ++j) {
          CHECK(item.seq[m].at(t, j) == 0.0f);
          CHECK(item.complete_seq[m].at(t, j) == 0.0f);
        }
    }
  }
  // truncation keeps the prefix
  for (int t = 0; t < b.items[0].true_len[0]; ++t)
    for (int j = 0; j < cfg.feat_dim[0]; ++j)
      CHECK(b.items[0].complete_seq[0].at(t, j) == samples[0].seq[0].at(t, j));
}

TEST_CASE("collate keeps already-max-length values unchanged") {
  auto cfg = small_cfg();
  cfg.len = {LengthRange{10, 10}, LengthRange{6, 6}, LengthRange{7, 7}};
  auto samples = generate_dataset(cfg, 3);
  Batch b = collate_complete(samples, {10, 6, 7});
  for (int m = 0; m < kNumModalities; ++m) {
    CHECK(b.padded_len[m] == samples[0].length(m));
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(b.items[i].seq[m].v == samples[i].seq[m].v);
  }
}

TEST_CASE("dataset container round-trips bit-exactly") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 25);
  DatasetMeta meta;
  meta.classes = cfg.classes;
  meta.feat_dim = cfg.feat_dim;
  const std::string path = (std::filesystem::temp_directory_path() / "mcthfr_test_roundtrip.mmt").string();
  save_dataset(path, samples, meta);
  DatasetMeta meta2;
  auto loaded = load_dataset(path, &meta2);
  CHECK(meta2.classes == meta.classes);
  CHECK(meta2.feat_dim == meta.feat_dim);
  CHECK(samples_equal(samples, loaded));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt magic is reported at offset zero") {
  const std::string path = (std::filesystem::temp_directory_path() / "mcthfr_test_badmagic.mmt").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "XXXXsome garbage";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("offset 0"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("truncated file names the sample index") {
  auto cfg = small_cfg();
  auto samples = generate_dataset(cfg, 5);
  DatasetMeta meta;
  meta.classes = cfg.classes;
  meta.feat_dim = cfg.feat_dim;
  const std::string path = (std::filesystem::temp_directory_path() / "mcthfr_test_trunc.mmt").string();
  save_dataset(path, samples, meta);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);  // chop into the last sample
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("sample 4"), std::runtime_error);
  std::filesystem::remove(path);
}
