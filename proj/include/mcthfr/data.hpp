#pragma once

// Synthetic unaligned multimodal sequences, Bernoulli feature masking, batch
// collation, and the "MMT1" on-disk container.
//
// Each class owns fixed prototype waveforms per modality; a sample places its
// class prototype over a random window of the sequence and fills the rest
// with unit-variance noise. The redundancy knob controls how often one
// modality's prototype is suppressed, forcing cross-modal inference.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mcthfr {

inline constexpr int kNumModalities = 3;  // audio, vision, language

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<float> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0f) {}
  float& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  float at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
};

struct MultimodalSample {
  std::array<Mat, kNumModalities> seq;  // complete feature sequences
  int label = 0;

  int length(int m) const { return seq[m].rows; }
};

struct MaskSet {
  // 1 = feature vector at this step is ablated, 0 = kept.
  std::array<std::vector<std::uint8_t>, kNumModalities> on;

  std::int64_t count_masked_steps() const {
    std::int64_t c = 0;
    for (const auto& v : on)
      for (auto b : v) c += b;
    return c;
  }
};

struct LengthRange {
  int lo = 1;
  int hi = 1;
};

struct GenConfig {
  int classes = 4;
  std::array<int, kNumModalities> feat_dim = {10, 6, 8};
  std::array<LengthRange, kNumModalities> len = {LengthRange{10, 20}, LengthRange{5, 10}, LengthRange{6, 12}};
  double snr = 3.0;        // prototype amplitude over unit noise
  double redundancy = 0.5; // probability that one modality's prototype is suppressed
  std::uint64_t seed = 1;

  void validate() const;
};

std::vector<MultimodalSample> generate_dataset(const GenConfig& cfg, int n);

// Bernoulli per-step ablation at rate p_miss; ablated steps become zero
// vectors. Deterministic in (seed, sample_id, p_miss).
std::pair<MultimodalSample, MaskSet> apply_masking(const MultimodalSample& sample, double p_miss,
                                                   std::uint64_t seed, std::uint64_t sample_id);

// One collated item: sequences truncated to the per-modality caps and
// zero-padded to a common batch length; true_len records the clipped length.
struct BatchItem {
  std::array<Mat, kNumModalities> seq;
  std::array<Mat, kNumModalities> complete_seq;  // same padding, unmasked view
  std::array<std::vector<std::uint8_t>, kNumModalities> mask;  // clipped, not padded
  std::array<int, kNumModalities> true_len = {0, 0, 0};
  int label = 0;
  bool incomplete = false;  // set by the caller when the item was selected for masking
};

struct Batch {
  std::vector<BatchItem> items;
  std::array<int, kNumModalities> padded_len = {0, 0, 0};

  int size() const { return static_cast<int>(items.size()); }
};

// Pads to the longest clipped sequence in the batch (never beyond max_lens);
// attention masking keeps padded rows inert, so the padded width does not
// affect results.
Batch collate(const std::vector<MultimodalSample>& complete,
              const std::vector<MultimodalSample>& masked,
              const std::vector<MaskSet>& masks,
              const std::array<int, kNumModalities>& max_lens);

// Collates unmasked samples (masked view == complete view, empty masks).
Batch collate_complete(const std::vector<MultimodalSample>& samples,
                       const std::array<int, kNumModalities>& max_lens);

struct DatasetMeta {
  int classes = 0;
  std::array<int, kNumModalities> feat_dim = {0, 0, 0};
};

void save_dataset(const std::string& path, const std::vector<MultimodalSample>& samples, const DatasetMeta& meta);
std::vector<MultimodalSample> load_dataset(const std::string& path, DatasetMeta* meta_out = nullptr);

}  // namespace mcthfr
