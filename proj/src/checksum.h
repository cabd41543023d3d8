#pragma once

#include "common.h"

namespace dmkv {

// CRC-8, polynomial 0x07, init 0x00, no reflection, no final xor.
inline u8 crc8(const u8* data, size_t len) {
  u8 crc = 0;
  for (size_t i = 0; i < len; i++) {
    crc ^= data[i];
    for (int b = 0; b < 8; b++)
      crc = (crc & 0x80) ? u8((crc << 1) ^ 0x07) : u8(crc << 1);
  }
  return crc;
}

// Log-entry commit marker over the 8 old_value bytes. Plain crc8 of
// old_value 0 is 0x00, identical to the uncommitted zero fill, so the stored
// byte is crc ^ 0xA5: uncommitted (0x00) and committed encodings never
// collide for any old_value.
inline u8 commit_crc(u64 old_value) {
  u8 buf[8];
  put_u64(buf, old_value);
  return u8(crc8(buf, 8) ^ 0xA5);
}

}  // namespace dmkv
