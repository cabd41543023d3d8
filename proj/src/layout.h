#pragma once

#include "common.h"
#include "config.h"
#include "hashing.h"

namespace dmkv {

// Index slot word: | fp 8 | len_class 8 | ptr 48 |. word == 0 <=> empty.
// ptr is a node-invariant data-area offset (< 2^40): every node lays memory
// out identically, so one 48-bit value names the object on all its replicas.
inline u64 pack_slot(u8 fp, u8 len_class, u64 ptr) {
  return (u64(fp) << 56) | (u64(len_class) << 48) | (ptr & ((1ull << 48) - 1));
}
inline u8 slot_fp(u64 w) { return u8(w >> 56); }
inline u8 slot_class(u64 w) { return u8(w >> 48); }
inline u64 slot_ptr(u64 w) { return w & ((1ull << 48) - 1); }

// Block allocation table row: | class 8 | owner+1 8 |; 0 = free block.
inline u64 pack_table_row(ClientId owner, int len_class) {
  return u64(owner + 1) | (u64(len_class) << 8);
}
inline ClientId table_owner(u64 row) { return int(row & 0xff) - 1; }
inline int table_class(u64 row) { return int((row >> 8) & 0xff); }

// Object layout: 8-byte header | key | value | pad | 22-byte log entry.
// Header: key_len u16, val_len u16, flags u8 (bit0 = invalidated, bit1 =
// tombstone), kv_crc u8, 2 pad bytes. The KV CRC covers
// key_len|val_len|key|value — flags are excluded so setting the
// invalidation bit keeps the checksum valid. An invalidation write may
// clobber a tombstone's bit1, but a tombstone only gets invalidated once
// displaced, at which point stale readers re-read through the index anyway.
inline constexpr u64 kObjHeader = 8;
inline constexpr u64 kEntrySize = 22;
inline constexpr u8 kFlagInvalid = 0x01;
inline constexpr u8 kFlagTombstone = 0x02;

// Identical per-node memory map. Offset 0..64 is a guard: nothing valid
// lives below 64, so slot word 1 (ptr 1) can never be a real pointer.
class Layout {
 public:
  Layout() = default;
  explicit Layout(const Config& cfg);

  u64 index_base() const { return index_base_; }
  u64 table_base() const { return table_base_; }
  u64 bitmap_base() const { return bitmap_base_; }
  u64 registry_base() const { return registry_base_; }
  u64 data_base() const { return data_base_; }
  u64 node_size() const { return node_size_; }
  int blocks_per_region() const { return blocks_per_region_; }
  int num_classes() const { return int(classes_.size()); }
  u64 class_size(int c) const { return classes_[c]; }
  const std::vector<u64>& classes() const { return classes_; }

  u64 group_offset(int group) const {
    return index_base_ + u64(group) * slots_per_group_ * 8;
  }
  u64 slot_offset(int group, int slot) const {
    return group_offset(group) + u64(slot) * 8;
  }
  bool is_index_offset(u64 off) const {
    return off >= index_base_ && off < index_base_ + index_size_;
  }
  int group_of_index_offset(u64 off) const {
    return int((off - index_base_) / (u64(slots_per_group_) * 8));
  }
  int slot_of_index_offset(u64 off) const {
    return int(((off - index_base_) / 8) % slots_per_group_);
  }

  u64 table_offset(int region, int block) const {
    return table_base_ + (u64(region) * blocks_per_region_ + block) * 8;
  }
  u64 bitmap_offset(int region, int block) const {
    return bitmap_base_ + (u64(region) * blocks_per_region_ + block) * 8;
  }
  u64 registry_offset(ClientId cid, int len_class) const {
    return registry_base_ + (u64(cid - 1) * num_classes() + len_class) * 8;
  }

  u64 region_base(int region) const { return data_base_ + u64(region) * region_size_; }
  u64 block_base(int region, int block) const {
    return region_base(region) + u64(block) * block_size_;
  }
  bool is_data_offset(u64 off) const {
    return off >= data_base_ && off < data_base_ + u64(num_regions_) * region_size_;
  }
  int region_of(u64 off) const { return int((off - data_base_) / region_size_); }
  int block_of(u64 off) const { return int(((off - data_base_) % region_size_) / block_size_); }
  int object_of(u64 off, int len_class) const {
    u64 block = block_base(region_of(off), block_of(off));
    return int((off - block) / classes_[len_class]);
  }
  int objects_per_block(int len_class) const { return int(block_size_ / classes_[len_class]); }

  // Placement. Regions: fixed initial ring walk, alive filter only removes
  // dead replicas (no data re-replication). Groups: fresh walk over the
  // currently alive set, so a crash promotes the next alive ring successor
  // as the replacement slot replica.
  std::vector<NodeId> place_region(int region) const;
  std::vector<NodeId> place_region_alive(int region, const std::vector<bool>& alive) const;
  std::vector<NodeId> place_group(int group, const std::vector<bool>& alive) const;

  int slots_per_group() const { return slots_per_group_; }
  int num_groups() const { return num_groups_; }
  int num_regions() const { return num_regions_; }
  u64 region_size() const { return region_size_; }
  u64 block_size() const { return block_size_; }

 private:
  Ring ring_;
  int r_ = 1;
  int num_groups_ = 0, slots_per_group_ = 0, num_regions_ = 0;
  u64 region_size_ = 0, block_size_ = 0;
  int blocks_per_region_ = 0;
  std::vector<u64> classes_;
  u64 index_base_ = 0, index_size_ = 0, table_base_ = 0, bitmap_base_ = 0,
      registry_base_ = 0, data_base_ = 0, node_size_ = 0;
  u64 salt_ = 0;
};

// 22-byte log entry codec. Byte order: next 48 | prev 48 | old_value 64 |
// crc 8 | opcode+used 8. The used bit is the top bit of the final byte, so
// a write truncated by its last byte (crash point c0) leaves used = 0.
struct LogEntry {
  u64 next = 0;
  u64 prev = 0;
  u64 old_value = 0;
  u8 crc = 0;
  Opcode opcode = Opcode::NONE;
  bool used = false;

  void serialize(u8 out[22]) const {
    put_u48(out, next);
    put_u48(out + 6, prev);
    put_u64(out + 12, old_value);
    out[20] = crc;
    out[21] = u8((used ? 0x80 : 0) | (u8(opcode) & 0x7f));
  }
  static LogEntry parse(const u8 in[22]) {
    LogEntry e;
    e.next = get_u48(in);
    e.prev = get_u48(in + 6);
    e.old_value = get_u64(in + 12);
    e.crc = in[20];
    e.used = (in[21] & 0x80) != 0;
    e.opcode = Opcode(in[21] & 0x7f);
    return e;
  }
};

inline u64 entry_offset(u64 obj_offset, u64 obj_size) {
  return obj_offset + obj_size - kEntrySize;
}

u8 kv_crc(const std::string& key, const std::string& value);

}  // namespace dmkv
