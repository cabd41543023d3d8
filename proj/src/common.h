#pragma once

#include <cassert>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace dmkv {

using u8  = uint8_t;
using u16 = uint16_t;
using u32 = uint32_t;
using u64 = uint64_t;
using i64 = int64_t;

using NodeId   = int;  // memory nodes 0..N-1; kMasterNode is the RPC endpoint
using ActorId  = int;  // 0 = master, 1..C = clients
using ClientId = int;  // alias for readability where only clients are legal
using Tick     = u64;

inline constexpr ActorId kMaster     = 0;
inline constexpr NodeId  kMasterNode = -1;  // RPC endpoint, no memory behind it

// Physical fabric address. Offsets stay below 2^40 so the node bits of the
// packed form never collide with stored 48-bit pointers (which are plain
// offsets, identical on every replica node).
struct RemoteAddr {
  NodeId node = 0;
  u64 offset  = 0;
  u64 packed() const { return (u64(node) << 40) | offset; }
  bool operator==(const RemoteAddr&) const = default;
};

enum class Status : u8 { OK, NOT_FOUND, EXISTS, TABLE_FULL, ERROR };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::OK: return "ok";
    case Status::NOT_FOUND: return "not_found";
    case Status::EXISTS: return "exists";
    case Status::TABLE_FULL: return "table_full";
    case Status::ERROR: return "error";
  }
  return "?";
}

enum class Opcode : u8 { NONE = 0, INSERT = 1, UPDATE = 2, DELETE = 3 };

inline const char* opcode_name(Opcode o) {
  switch (o) {
    case Opcode::INSERT: return "insert";
    case Opcode::UPDATE: return "update";
    case Opcode::DELETE: return "delete";
    default: return "none";
  }
}

enum class KvOp : u8 { SEARCH, INSERT, UPDATE, DELETE };

inline const char* kvop_name(KvOp o) {
  switch (o) {
    case KvOp::SEARCH: return "search";
    case KvOp::INSERT: return "insert";
    case KvOp::UPDATE: return "update";
    case KvOp::DELETE: return "delete";
  }
  return "?";
}

struct KvRequest {
  KvOp op;
  std::string key;
  std::string value;  // empty for SEARCH/DELETE
};

struct KvResponse {
  Status status = Status::ERROR;
  std::string value;
  int rtts = 0;
};

// Little-endian fixed-width codecs; the simulated fabric is byte-addressed.
inline void put_u64(u8* p, u64 v) {
  for (int i = 0; i < 8; i++) p[i] = u8(v >> (8 * i));
}
inline u64 get_u64(const u8* p) {
  u64 v = 0;
  for (int i = 0; i < 8; i++) v |= u64(p[i]) << (8 * i);
  return v;
}
inline void put_u48(u8* p, u64 v) {
  for (int i = 0; i < 6; i++) p[i] = u8(v >> (8 * i));
}
inline u64 get_u48(const u8* p) {
  u64 v = 0;
  for (int i = 0; i < 6; i++) v |= u64(p[i]) << (8 * i);
  return v;
}
inline void put_u16(u8* p, u16 v) {
  p[0] = u8(v);
  p[1] = u8(v >> 8);
}
inline u16 get_u16(const u8* p) { return u16(p[0] | (u16(p[1]) << 8)); }

}  // namespace dmkv
