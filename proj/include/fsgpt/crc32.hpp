#pragma once

#include <cstddef>
#include <cstdint>

namespace fsgpt {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
uint32_t crc32_ieee(const void* data, size_t len, uint32_t crc = 0);

}  // namespace fsgpt
