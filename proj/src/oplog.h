#pragma once

#include <optional>
#include <vector>

#include "coro.h"
#include "memalloc.h"
#include "sim.h"

namespace dmkv {

// CRC-8, polynomial 0x07, init 0x00. The commit checksum is XORed with a
// constant so a zero-filled (never committed) crc byte can never validate
// a zero old_value.
u8 crc8(const u8* p, size_t n);
inline u8 commit_crc(u64 old_value) {
  u8 b[8];
  put_u64(b, old_value);
  return u8(crc8(b, 8) ^ 0xA5);
}

// old_value == 1 marks a master-resolved entry: offsets below the 64-byte
// guard are never real slot pointers, so no genuine displaced slot word
// packs to 1. Recovery skips redo and background replay for it.
inline constexpr u64 kSentinelOldValue = 1;

enum class EntryVerdict : u8 {
  INCOMPLETE,   // used bit clear: truncated by a crash, or cancelled
  UNCOMMITTED,  // used, crc does not validate old_value
  COMMITTED,    // used, crc validates
  SENTINEL,     // committed with the master's resolved marker
};

const char* verdict_name(EntryVerdict v);

EntryVerdict classify_entry(const LogEntry& e);

// Fresh entry for an allocation: rides the object write, so logging costs
// no phase of its own. prev/next come from the allocator (class tail and
// the pre-positioned next allocation).
inline LogEntry build_entry(Opcode op, u64 prev, u64 next) {
  LogEntry e;
  e.next = next;
  e.prev = prev;
  e.old_value = 0;
  e.crc = 0;
  e.opcode = op;
  e.used = true;
  return e;
}

// Phase-3 commit: one 9-byte write (old_value | crc) into the entry on
// every alive region replica of the object.
std::vector<FabricOp> commit_entry_ops(Sim& sim, u64 off, int cls, u64 old_value);

// Cancellation writes only the final byte (used | opcode := 0), keeping
// next/prev intact so the chain stays walkable through the dead entry.
std::vector<FabricOp> cancel_entry_ops(Sim& sim, u64 off, int cls);

// Sequential replicated read with dead-replica fallback; one phase per
// attempt. Empty result = every region replica is down (len is never 0).
Co<std::vector<u8>> read_replicated(Sim& sim, ActorId actor, u64 off, u32 len);

struct LogRecord {
  u64 off = 0;
  LogEntry entry;
  EntryVerdict verdict = EntryVerdict::INCOMPLETE;
};

// Old-to-new walk of one client's class chain, starting at the registry
// chain-start row. Follows next pointers while the successor is genuine
// (successor.prev == current); object reuse rewrites prev and ends the
// walk early, which is why recovery pairs this with a full block scan.
// Every offset is validated against the owned-block set before it is read.
Co<std::vector<LogRecord>> traverse_log(Sim& sim, ActorId actor, ClientId cid,
                                        int cls,
                                        const std::vector<OwnedBlock>& owned);

}  // namespace dmkv
