#include "mcthfr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mcthfr {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'T', 'P'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ofstream& f, std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u8(std::ofstream& f, std::uint8_t v) { f.write(reinterpret_cast<const char*>(&v), 1); }

std::uint16_t get_u16(std::ifstream& f) {
  std::uint16_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 2)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
std::uint32_t get_u32(std::ifstream& f) {
  std::uint32_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
std::uint8_t get_u8(std::ifstream& f) {
  std::uint8_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 1)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const ModelConfig& c = ckpt.config;
  f.write(kMagic, 4);
  put_u16(f, kVersion);
  for (int v : {c.hidden, c.layers, c.heads, c.head_dim, c.kernel[0], c.kernel[1], c.kernel[2], c.max_len[0],
                c.max_len[1], c.max_len[2], c.classes, c.ffn_hidden, c.classifier_depth, c.feat_dim[0], c.feat_dim[1],
                c.feat_dim[2]})
    put_u32(f, static_cast<std::uint32_t>(v));
  put_u8(f, c.use_gamma_b ? 1 : 0);
  put_u8(f, c.use_gamma_e ? 1 : 0);
  put_u8(f, ckpt.has_hfr ? 1 : 0);

  ParamRegistry<float> reg;
  ckpt.mct.register_into(reg);
  if (ckpt.has_hfr) ckpt.hfr.register_into(reg);
  put_u32(f, static_cast<std::uint32_t>(reg.entries.size()));
  for (const auto& [name, t] : reg.entries) {
    put_u32(f, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t->values.data()),
            static_cast<std::streamsize>(t->values.size() * sizeof(float)));
  }
  if (!f.good()) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "' (not an MCTP file)");
  const auto version = get_u16(f);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  int* fields[] = {&c.hidden,      &c.layers,     &c.heads,      &c.head_dim,   &c.kernel[0],       &c.kernel[1],
                   &c.kernel[2],   &c.max_len[0], &c.max_len[1], &c.max_len[2], &c.classes,         &c.ffn_hidden,
                   &c.classifier_depth, &c.feat_dim[0], &c.feat_dim[1], &c.feat_dim[2]};
  for (int*& p : fields) *p = static_cast<int>(get_u32(f));
  c.use_gamma_b = get_u8(f) != 0;
  c.use_gamma_e = get_u8(f) != 0;
  ckpt.has_hfr = get_u8(f) != 0;
  c.validate();

  // Rebuild tensors in canonical order and fill them from the stream.
  ckpt.mct = MCTParams<float>::init_random(c, 0);
  ckpt.hfr = HFRParams<float>::init_random(c, 0);
  ParamRegistry<float> reg;
  ckpt.mct.register_into(reg);
  if (ckpt.has_hfr) ckpt.hfr.register_into(reg);

  const auto count = get_u32(f);
  if (count != reg.entries.size())
    throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) + " does not match configuration (" +
                             std::to_string(reg.entries.size()) + " expected)");
  for (auto& [name, t] : reg.entries) {
    const auto ndim = get_u32(f);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32(f));
    if (shape != t->shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    if (!f.read(reinterpret_cast<char*>(t->values.data()),
                static_cast<std::streamsize>(t->values.size() * sizeof(float))))
      throw std::runtime_error("checkpoint: truncated while reading '" + name + "'");
  }
  return ckpt;
}

}  // namespace mcthfr
