#include "mcthfr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mcthfr/rng.hpp"

namespace mcthfr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Stream tags for deriving independent RNG streams from one dataset seed.
enum : std::uint64_t { kTagProto = 0x50524f544full, kTagSample = 0x53414d50ull, kTagMask = 0x4d41534bull };

struct ProtoChannel {
  double base;
  double freq;
  double phase;
};

// One waveform per (class, modality, channel), evaluated over the unit
// interval so prototypes are independent of sequence length. Frequencies are
// integers: the sinusoid then sums to exactly zero over any window grid
// longer than the frequency, leaving the per-class offset as the clean
// time-mean signature.
std::vector<ProtoChannel> draw_prototypes(const GenConfig& cfg) {
  Rng rng(Rng::derive({cfg.seed, kTagProto}));
  std::vector<ProtoChannel> protos;
  protos.reserve(static_cast<std::size_t>(cfg.classes) * (cfg.feat_dim[0] + cfg.feat_dim[1] + cfg.feat_dim[2]));
  for (int c = 0; c < cfg.classes; ++c)
    for (int m = 0; m < kNumModalities; ++m)
      for (int j = 0; j < cfg.feat_dim[m]; ++j)
        protos.push_back({rng.uniform(-1.0, 1.0), static_cast<double>(1 + rng.next_int(3)), rng.uniform(0.0, kTwoPi)});
  return protos;
}

std::size_t proto_index(const GenConfig& cfg, int c, int m, int j) {
  std::size_t off = 0;
  for (int mm = 0; mm < m; ++mm) off += cfg.feat_dim[mm];
  const std::size_t per_class = cfg.feat_dim[0] + cfg.feat_dim[1] + cfg.feat_dim[2];
  return static_cast<std::size_t>(c) * per_class + off + j;
}

}  // namespace

void GenConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("gen: classes must be >= 2");
  for (int m = 0; m < kNumModalities; ++m) {
    if (feat_dim[m] < 1) throw std::invalid_argument("gen: feature dims must be positive");
    if (len[m].lo < 1 || len[m].hi < len[m].lo) throw std::invalid_argument("gen: empty length range");
  }
  if (redundancy < 0.0 || redundancy > 1.0) throw std::invalid_argument("gen: redundancy must be in [0,1]");
  if (snr < 0.0) throw std::invalid_argument("gen: snr must be non-negative");
}

std::vector<MultimodalSample> generate_dataset(const GenConfig& cfg, int n) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("gen: sample count must be >= 1");
  const auto protos = draw_prototypes(cfg);

  std::vector<MultimodalSample> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    MultimodalSample& s = out[i];
    s.label = i % cfg.classes;  // round-robin keeps the class histogram flat
    Rng rng(Rng::derive({cfg.seed, kTagSample, static_cast<std::uint64_t>(i)}));

    // At most one modality loses its prototype; the other two still carry it.
    int suppressed = -1;
    if (rng.next_double() < cfg.redundancy) suppressed = rng.next_int(kNumModalities);

    for (int m = 0; m < kNumModalities; ++m) {
      const int T = cfg.len[m].lo + rng.next_int(cfg.len[m].hi - cfg.len[m].lo + 1);
      const int d = cfg.feat_dim[m];
      Mat x(T, d);
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j) x.at(t, j) = static_cast<float>(rng.normal());

      const double frac = rng.uniform(0.3, 0.7);
      const int wlen = std::max(1, static_cast<int>(std::lround(frac * T)));
      const int start = wlen >= T ? 0 : rng.next_int(T - wlen + 1);
      const double amp = m == suppressed ? 0.0 : cfg.snr;
      for (int t = start; t < start + wlen && t < T; ++t) {
        const double u = static_cast<double>(t - start) / wlen;
        for (int j = 0; j < d; ++j) {
          const ProtoChannel& p = protos[proto_index(cfg, s.label, m, j)];
          x.at(t, j) += static_cast<float>(amp * (p.base + std::sin(kTwoPi * p.freq * u + p.phase)));
        }
      }
      s.seq[m] = std::move(x);
    }
  }
  return out;
}

std::pair<MultimodalSample, MaskSet> apply_masking(const MultimodalSample& sample, double p_miss,
                                                   std::uint64_t seed, std::uint64_t sample_id) {
  if (p_miss < 0.0 || p_miss > 1.0) throw std::invalid_argument("mask: p_miss must be in [0,1]");
  MultimodalSample masked = sample;
  MaskSet mask;
  for (int m = 0; m < kNumModalities; ++m) {
    const int T = sample.length(m);
    Rng rng(Rng::derive({seed, kTagMask, sample_id, static_cast<std::uint64_t>(m)}));
    auto& on = mask.on[m];
    on.assign(static_cast<std::size_t>(T), 0);
    for (int t = 0; t < T; ++t) {
      if (rng.next_double() < p_miss) {
        on[t] = 1;
        for (int j = 0; j < sample.seq[m].cols; ++j) masked.seq[m].at(t, j) = 0.0f;
      }
    }
  }
  return {std::move(masked), std::move(mask)};
}

namespace {

Mat clip_and_pad(const Mat& x, int clip_len, int pad_len) {
  Mat out(pad_len, x.cols);
  for (int t = 0; t < clip_len; ++t)
    for (int j = 0; j < x.cols; ++j) out.at(t, j) = x.at(t, j);
  return out;
}

}  // namespace

Batch collate(const std::vector<MultimodalSample>& complete,
              const std::vector<MultimodalSample>& masked,
              const std::vector<MaskSet>& masks,
              const std::array<int, kNumModalities>& max_lens) {
  if (complete.empty()) throw std::invalid_argument("collate: empty sample list");
  if (masked.size() != complete.size() || masks.size() != complete.size())
    throw std::invalid_argument("collate: complete/masked/mask counts differ");

  Batch batch;
  for (int m = 0; m < kNumModalities; ++m) {
    int longest = 1;
    for (const auto& s : complete) longest = std::max(longest, std::min(s.length(m), max_lens[m]));
    batch.padded_len[m] = longest;
  }
  batch.items.resize(complete.size());
  for (std::size_t i = 0; i < complete.size(); ++i) {
    BatchItem& it = batch.items[i];
    it.label = complete[i].label;
    for (int m = 0; m < kNumModalities; ++m) {
      const int clip = std::min(complete[i].length(m), max_lens[m]);
      it.true_len[m] = clip;
      it.complete_seq[m] = clip_and_pad(complete[i].seq[m], clip, batch.padded_len[m]);
      it.seq[m] = clip_and_pad(masked[i].seq[m], clip, batch.padded_len[m]);
      it.mask[m].assign(masks[i].on[m].begin(),
                        masks[i].on[m].begin() + std::min<std::size_t>(masks[i].on[m].size(), clip));
      it.mask[m].resize(static_cast<std::size_t>(clip), 0);
    }
  }
  return batch;
}

Batch collate_complete(const std::vector<MultimodalSample>& samples,
                       const std::array<int, kNumModalities>& max_lens) {
  std::vector<MaskSet> empty(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int m = 0; m < kNumModalities; ++m) empty[i].on[m].assign(static_cast<std::size_t>(samples[i].length(m)), 0);
  return collate(samples, samples, empty, max_lens);
}

// --------------------------------------------------------------------------
// MMT1 container
//
// magic "MMT1" | u16 version | u32 classes | u32 d_a d_v d_l | u64 count
// per sample: u32 label; per modality: u32 T, then T*d little-endian f32.

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', '1'};
constexpr std::uint16_t kVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : f_(path, std::ios::binary) {
    if (!f_) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  bool good() const { return f_.good(); }

 private:
  std::ofstream f_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : f_(path, std::ios::binary) {
    if (!f_) throw std::runtime_error("dataset: cannot open '" + path + "' for reading");
  }
  void bytes(void* p, std::size_t n, const std::string& what) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f_.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error("dataset: truncated file at byte offset " + std::to_string(offset_) + " while reading " + what);
    offset_ += n;
  }
  std::uint16_t u16(const std::string& what) { std::uint16_t v; bytes(&v, 2, what); return v; }
  std::uint32_t u32(const std::string& what) { std::uint32_t v; bytes(&v, 4, what); return v; }
  std::uint64_t u64(const std::string& what) { std::uint64_t v; bytes(&v, 8, what); return v; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::ifstream f_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void save_dataset(const std::string& path, const std::vector<MultimodalSample>& samples, const DatasetMeta& meta) {
  ByteWriter w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(meta.classes));
  for (int m = 0; m < kNumModalities; ++m) w.u32(static_cast<std::uint32_t>(meta.feat_dim[m]));
  w.u64(samples.size());
  for (const auto& s : samples) {
    w.u32(static_cast<std::uint32_t>(s.label));
    for (int m = 0; m < kNumModalities; ++m) {
      if (s.seq[m].cols != meta.feat_dim[m])
        throw std::invalid_argument("dataset: sample feature dim disagrees with metadata");
      w.u32(static_cast<std::uint32_t>(s.seq[m].rows));
      w.bytes(s.seq[m].v.data(), s.seq[m].v.size() * sizeof(float));
    }
  }
  if (!w.good()) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

std::vector<MultimodalSample> load_dataset(const std::string& path, DatasetMeta* meta_out) {
  ByteReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("dataset: bad magic at byte offset 0 in '" + path + "' (not an MMT1 file)");
  const auto version = r.u16("version");
  if (version != kVersion)
    throw std::runtime_error("dataset: unsupported MMT1 version " + std::to_string(version) + " at byte offset 4");
  DatasetMeta meta;
  meta.classes = static_cast<int>(r.u32("class count"));
  for (int m = 0; m < kNumModalities; ++m) meta.feat_dim[m] = static_cast<int>(r.u32("feature dim"));
  const std::uint64_t count = r.u64("sample count");

  std::vector<MultimodalSample> samples(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string ctx = "sample " + std::to_string(i);
    samples[i].label = static_cast<int>(r.u32("label of " + ctx));
    if (samples[i].label >= meta.classes)
      throw std::runtime_error("dataset: label out of range in " + ctx);
    for (int m = 0; m < kNumModalities; ++m) {
      const int T = static_cast<int>(r.u32("length of " + ctx));
      if (T < 1) throw std::runtime_error("dataset: non-positive length in " + ctx);
      Mat x(T, meta.feat_dim[m]);
      r.bytes(x.v.data(), x.v.size() * sizeof(float), "values of " + ctx);
      samples[i].seq[m] = std::move(x);
    }
  }
  if (meta_out) *meta_out = meta;
  return samples;
}

}  // namespace mcthfr
