#pragma once

#include <cstddef>
#include <cstdint>

namespace crackseg {

// CRC-32 (IEEE 802.3): reflected polynomial 0xEDB88320, initial value
// 0xFFFFFFFF, final XOR 0xFFFFFFFF.
uint32_t crc32(const void* data, size_t len);
uint32_t crc32_update(uint32_t state, const void* data, size_t len);

}  // namespace crackseg
