#include "fabric.h"

namespace dmkv {

Fabric::Fabric(const Config& cfg, const Layout& layout)
    : layout_(layout),
      r_(cfg.r),
      mem_(cfg.num_nodes, std::vector<u8>(layout.node_size(), 0)),
      alive_(cfg.num_nodes, true),
      fence_(cfg.num_nodes, std::vector<int>(cfg.num_groups, 0)),
      alloc_cursor_(cfg.num_nodes, 0) {}

int Fabric::alive_count() const {
  int n = 0;
  for (bool a : alive_) n += a;
  return n;
}

void Fabric::fence_group(int group, int epoch) {
  for (size_t n = 0; n < mem_.size(); n++)
    if (alive_[n] && fence_[n][group] < epoch) fence_[n][group] = epoch;
}

void Fabric::poke(NodeId n, u64 off, const u8* data, size_t len) {
  memcpy(mem_[n].data() + off, data, len);
}
void Fabric::poke_word(NodeId n, u64 off, u64 w) {
  put_u64(mem_[n].data() + off, w);
}
u64 Fabric::peek_word(NodeId n, u64 off) const {
  return get_u64(mem_[n].data() + off);
}
void Fabric::peek(NodeId n, u64 off, u8* out, size_t len) const {
  memcpy(out, mem_[n].data() + off, len);
}

bool Fabric::fence_rejects(const FabricOp& op, NodeId n) const {
  if (op.kind == OpKind::READ) return false;
  if (!layout_.is_index_offset(op.addr.offset)) return false;
  int g = layout_.group_of_index_offset(op.addr.offset);
  return op.epoch < fence_[n][g];
}

void Fabric::note_install(ActorId actor, NodeId n, u64 off, u64 old_w, u64 new_w,
                          Tick tick) {
  if (!layout_.is_index_offset(off) || old_w == new_w) return;
  int g = layout_.group_of_index_offset(off);
  auto nodes = layout_.place_group(g, alive_);
  installs_.push_back({tick, actor, n, g, layout_.slot_of_index_offset(off),
                       old_w, new_w, !nodes.empty() && nodes[0] == n});
}

OpResult Fabric::apply_alloc(const FabricOp& op, Tick tick) {
  OpResult res;
  NodeId n = op.addr.node;
  // Grant the first free block of the lowest region this node is currently
  // primary for; record owner + class in the allocation tables of every
  // alive region replica at this tick (the MN-side table update is modeled
  // as atomic; see notes).
  for (int scan = 0; scan < layout_.num_regions(); scan++) {
    int region = (alloc_cursor_[n] + scan) % layout_.num_regions();
    auto replicas = layout_.place_region_alive(region, alive_);
    if (replicas.empty() || replicas[0] != n) continue;
    for (int b = 0; b < layout_.blocks_per_region(); b++) {
      u64 row_off = layout_.table_offset(region, b);
      if (get_u64(mem_[n].data() + row_off) != 0) continue;
      u64 row = pack_table_row(op.alloc_cid, op.alloc_class);
      for (NodeId rep : replicas) put_u64(mem_[rep].data() + row_off, row);
      grants_.push_back({tick, region, b, op.alloc_cid, op.alloc_class});
      res.alloc_base = layout_.block_base(region, b);
      alloc_cursor_[n] = region;
      return res;
    }
  }
  res.failed = true;
  res.oom = true;
  return res;
}

OpResult Fabric::apply(ActorId actor, const FabricOp& op, Tick tick) {
  OpResult res;
  NodeId n = op.addr.node;
  assert(n != kMasterNode);  // RPCs are delivered by the scheduler, not here
  if (!alive_[n]) {
    res.failed = true;
    failed_ops_++;
    return res;
  }
  if (fence_rejects(op, n)) {
    res.failed = true;
    res.fenced = true;
    fenced_attempts_++;
    return res;
  }
  u8* base = mem_[n].data();
  switch (op.kind) {
    case OpKind::READ: {
      assert(op.addr.offset + op.len <= mem_[n].size());
      res.bytes.assign(base + op.addr.offset, base + op.addr.offset + op.len);
      break;
    }
    case OpKind::WRITE: {
      assert(op.addr.offset + op.payload.size() <= mem_[n].size());
      if (layout_.is_index_offset(op.addr.offset) && op.payload.size() == 8) {
        u64 old_w = get_u64(base + op.addr.offset);
        memcpy(base + op.addr.offset, op.payload.data(), op.payload.size());
        note_install(actor, n, op.addr.offset, old_w, get_u64(base + op.addr.offset), tick);
      } else {
        memcpy(base + op.addr.offset, op.payload.data(), op.payload.size());
      }
      break;
    }
    case OpKind::CAS: {
      assert(op.addr.offset % 8 == 0);
      u64 cur = get_u64(base + op.addr.offset);
      res.old_word = cur;
      if (cur == op.expected) {
        put_u64(base + op.addr.offset, op.swap);
        note_install(actor, n, op.addr.offset, cur, op.swap, tick);
      }
      break;
    }
    case OpKind::FAA: {
      assert(op.addr.offset % 8 == 0);
      u64 cur = get_u64(base + op.addr.offset);
      res.old_word = cur;
      put_u64(base + op.addr.offset, cur + op.add);
      // Free-bit setting is the only FAA user; a bit already set means a
      // double free upstream, which the audit flags.
      if ((cur & op.add) != 0) double_set_bits_++;
      break;
    }
    case OpKind::ALLOC_BLOCK:
      return apply_alloc(op, tick);
    case OpKind::RPC:
      assert(false);
      break;
  }
  return res;
}

}  // namespace dmkv
