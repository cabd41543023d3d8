#pragma once

#include <functional>
#include <vector>

#include "common.h"
#include "layout.h"

namespace dmkv {

enum class OpKind : u8 { READ, WRITE, CAS, FAA, ALLOC_BLOCK, RPC };
enum class RpcKind : u8 { NONE, FAIL_QUERY, PREPARE_ACK, LEASE_EXTEND };

struct FabricOp {
  OpKind kind = OpKind::READ;
  RemoteAddr addr;            // RPC: node == kMasterNode, offset unused
  u32 len = 0;                // READ byte count
  std::vector<u8> payload;    // WRITE bytes
  u64 expected = 0;           // CAS
  u64 swap = 0;               // CAS
  u64 add = 0;                // FAA
  ClientId alloc_cid = 0;     // ALLOC_BLOCK: requesting owner
  int alloc_class = 0;        // ALLOC_BLOCK: carve class recorded in the table
  int epoch = 0;              // issuer's membership epoch (fence check)
  RpcKind rpc = RpcKind::NONE;
  u64 rpc_a = 0, rpc_b = 0, rpc_c = 0;
};

struct OpResult {
  bool failed = false;   // crashed node, fenced write, or failed ALLOC
  bool fenced = false;
  bool oom = false;      // ALLOC_BLOCK exhaustion
  std::vector<u8> bytes; // READ
  u64 old_word = 0;      // CAS/FAA prior word
  u64 alloc_base = 0;    // ALLOC_BLOCK block base offset
  u64 rpc_reply = 0;     // master's reply word
};

// Successful mutation of an index word; audit fodder.
struct SlotInstall {
  Tick tick;
  ActorId actor;
  NodeId node;
  int group, slot;
  u64 old_word, new_word;
  bool on_primary;  // node was the group's primary at install time
};

struct BlockGrant {
  Tick tick;
  int region, block;
  ClientId cid;
  int len_class;
};

// The memory-node pool: flat byte arrays with identical layout, linearizable
// one-sided primitives applied one per scheduler tick, sticky crash state,
// and per-group write fencing by membership epoch. Keeps compact audit
// metadata (index installs, block grants, fence/double-free counters) so big
// runs can skip full event traces without losing audit coverage.
class Fabric {
 public:
  Fabric(const Config& cfg, const Layout& layout);

  OpResult apply(ActorId actor, const FabricOp& op, Tick tick);

  void crash_node(NodeId n) { alive_[n] = false; }
  bool node_alive(NodeId n) const { return alive_[n]; }
  const std::vector<bool>& alive() const { return alive_; }
  int alive_count() const;

  // Write-only fence: index words of `group` reject mutations whose issuer
  // epoch is below `epoch`.
  void fence_group(int group, int epoch);

  // Direct (un-traced, pre-run) state pokes for fixtures and bootstrap.
  void poke(NodeId n, u64 off, const u8* data, size_t len);
  void poke_word(NodeId n, u64 off, u64 w);
  u64 peek_word(NodeId n, u64 off) const;
  void peek(NodeId n, u64 off, u8* out, size_t len) const;

  const std::vector<SlotInstall>& installs() const { return installs_; }
  const std::vector<BlockGrant>& grants() const { return grants_; }
  u64 fenced_attempts() const { return fenced_attempts_; }
  u64 failed_ops() const { return failed_ops_; }
  u64 double_set_bits() const { return double_set_bits_; }

  const Layout& layout() const { return layout_; }

 private:
  OpResult apply_alloc(const FabricOp& op, Tick tick);
  bool fence_rejects(const FabricOp& op, NodeId n) const;
  void note_install(ActorId actor, NodeId n, u64 off, u64 old_w, u64 new_w, Tick tick);

  const Layout& layout_;
  int r_;
  std::vector<std::vector<u8>> mem_;
  std::vector<bool> alive_;
  std::vector<std::vector<int>> fence_;  // [node][group] min epoch
  std::vector<int> alloc_cursor_;        // [node] region scan position

  std::vector<SlotInstall> installs_;
  std::vector<BlockGrant> grants_;
  u64 fenced_attempts_ = 0;
  u64 failed_ops_ = 0;
  u64 double_set_bits_ = 0;
};

}  // namespace dmkv
