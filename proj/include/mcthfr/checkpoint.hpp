#pragma once

// "MCTP" checkpoint container: model configuration block followed by every
// parameter tensor in canonical registry order as little-endian 32-bit
// floats. Round-trips are bit-exact.

#include <string>

#include "mcthfr/hfr.hpp"
#include "mcthfr/model.hpp"

namespace mcthfr {

struct Checkpoint {
  ModelConfig config;
  bool has_hfr = false;
  MCTParams<float> mct;
  HFRParams<float> hfr;  // valid only when has_hfr
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcthfr
