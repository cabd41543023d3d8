#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "alloc_state.h"
#include "coro.h"
#include "sim.h"

namespace dmkv {

// Per-client two-level allocator: coarse blocks granted by the fabric's
// allocation table, fine objects carved locally into per-class free lists.
// Frees are one-sided FAA bit sets on the block bitmap; the owner reclaims
// them in background scans. All fabric traffic goes through Sim phases on
// behalf of the owning actor.
class Allocator {
 public:
  Allocator(Sim& sim, ActorId actor, ClientId cid)
      : sim_(sim), actor_(actor), cid_(cid),
        free_(sim.layout().num_classes()),
        tail_(sim.layout().num_classes(), 0) {}

  struct Out {
    bool ok = false;
    bool oom = false;
    u64 off = 0;
    int cls = -1;
    u64 prev_tail = 0;   // class tail before this allocation (log prev)
    u64 next_head = 0;   // free head after this pop (log next)
    int refill_rtts = 0; // awaited block-grant phases, charged to the caller
    // Tail-patch writes produced by a refill; the caller folds them into
    // its next phase so the patch costs no extra round trip.
    std::vector<FabricOp> carried;
  };

  // One block per class plus the chain-start registry rows; uncharged init
  // phases. False = the fabric could not grant the initial blocks.
  Co<bool> init();

  Co<Out> alloc(u64 need);       // smallest class fitting `need` bytes
  Co<Out> alloc_class(int cls);

  // Background free: sets the object's bitmap bit on the first alive
  // region replica, falling through dead ones.
  Co<void> remote_free(u64 off, int cls);

  // Owner-side scan over owned blocks: read bitmap replicas, CAS observed
  // words to zero, append cleared objects to the list tails. Issues zero
  // writes when every word reads zero. Returns objects reclaimed.
  Co<int> reclaim_scan();

  void adopt(AllocRecovery rec);

  u64 tail_of(int cls) const { return tail_[cls]; }
  const std::deque<u64>& free_list(int cls) const { return free_[cls]; }
  const std::vector<OwnedBlock>& owned() const { return owned_; }
  u64 free_count() const;

 private:
  Co<u64> grant_block(int cls, int* rtts);  // 0 = no block available
  void carve(u64 base, int cls);

  Sim& sim_;
  ActorId actor_;
  ClientId cid_;
  std::vector<std::deque<u64>> free_;
  std::vector<u64> tail_;
  std::vector<OwnedBlock> owned_;
  int rr_region_ = 0;
};

}  // namespace dmkv
