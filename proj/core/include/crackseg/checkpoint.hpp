#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

// Single-file container of named little-endian float64 arrays with a trailing
// CRC-32. Model parameters appear under their own names, optimizer momentum
// under "opt/", bookkeeping scalars under "meta/".
struct Checkpoint {
  uint64_t config_digest = 0;
  int64_t epoch = 0;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Verifies the checksum and magic before returning; a corrupt or truncated
// file is refused.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace crackseg
