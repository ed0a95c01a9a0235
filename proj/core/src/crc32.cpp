#include "crackseg/crc32.hpp"

#include <array>

namespace crackseg {

namespace {

std::array<uint32_t, 256> build_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
    table[i] = c;
  }
  return table;
}

const std::array<uint32_t, 256>& table() {
  static const std::array<uint32_t, 256> t = build_table();
  return t;
}

}  // namespace

uint32_t crc32_update(uint32_t state, const void* data, size_t len) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint32_t c = state ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table()[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint32_t crc32(const void* data, size_t len) { return crc32_update(0, data, len); }

}  // namespace crackseg
