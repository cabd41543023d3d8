#pragma once

#include <optional>
#include <string>
#include <vector>

#include "alloc_state.h"
#include "coro.h"
#include "index.h"
#include "memalloc.h"
#include "rng.h"
#include "sim.h"
#include "slotproto.h"

namespace dmkv {

// Deterministic workload derivation: op i of client cid is regenerated
// from (seed, cid, i) alone, so a restarted incarnation picks up exactly
// where the crashed one stopped.
struct GenOp {
  KvOp op = KvOp::SEARCH;
  std::string key;
  std::string value;
};
GenOp gen_op(const Config& cfg, ClientId cid, int index);
std::string make_key(int j);
std::string make_value(ClientId cid, int index, int pad_to);

// One client process: allocator init, preload, the measured workload, and
// the optional verify pass, with crash gates compiled from the scenario.
// The root coroutine parks forever when a gate fires; the master observes
// the crash through the lease machinery.
class ClientActor {
 public:
  ClientActor(Sim& sim, ClientId cid, int start_index,
              std::optional<AllocRecovery> rec);
  void start() { task_.start(); }
  ActorId actor() const { return actor_; }
  ClientId cid() const { return cid_; }
  const Allocator& alloc() const { return alloc_; }

 private:
  friend struct KvHooks;

  // Outcome of locating `key` in its group: the live slot if present, the
  // claim candidates an INSERT would use, and the group snapshot the
  // conclusions are valid against. An absence conclusion is only drawn
  // from a snapshot that re-read identically (object reuse can make a
  // mismatched candidate inconclusive); gave_up reports a snapshot that
  // never stabilized.
  struct ScanOut {
    bool found = false;
    int slot = -1;
    u64 word = 0;
    std::string value;
    std::vector<int> tomb_slots;  // fp-matching tombstones (claimable)
    std::vector<u64> tomb_words;
    int empty_slot = -1;
    std::vector<u64> words;  // snapshot the conclusions refer to
    bool gave_up = false;
  };
  struct GroupView {
    bool ok = false;
    std::vector<u64> words;
  };

  Task run();
  Co<void> run_kv();
  Co<void> run_slot();
  Co<void> arrive(Barrier& b);
  Co<void> exec_op(KvOp op, const std::string& key, const std::string& value);
  Co<void> op_search(size_t ev, const std::string& key);
  Co<void> op_insert(size_t ev, const std::string& key, const std::string& value);
  Co<void> op_update(size_t ev, const std::string& key, const std::string& value);
  Co<void> op_delete(size_t ev, const std::string& key);

  // Every phase these helpers issue is charged to rtts and flagged, so the
  // audit can reconcile the count from the path alone.
  Co<GroupView> read_group(int group, int& rtts, std::string& path);
  Co<ScanOut> scan_candidates(int group, std::vector<u64> words,
                              const std::string& key, int& rtts,
                              std::string& path);
  Co<std::vector<u8>> read_object(u64 word, int& rtts, std::string& path);

  // Pre-response abort: cancel the entry, free the object.
  Co<void> drop_object(u64 off, int cls, int& rtts, std::string& path);
  // Post-response duties of a displacing winner: invalidate + free the
  // object the installed word displaced.
  Co<void> retire_displaced(u64 word);

  void respond(size_t ev, Status st, const std::string& result, int rtts,
               const std::string& path);

  // Crash gates. crash_park never returns: it reports the crash and parks
  // the whole coroutine stack until teardown. crash_mid_write first flushes
  // the phase detached with every write's final byte clipped (a dying NIC).
  Co<void> crash_park();
  Co<void> crash_mid_write(std::vector<FabricOp> ops);

  Sim& sim_;
  ClientId cid_;
  ActorId actor_;
  int start_index_;
  bool restarted_;
  std::optional<AllocRecovery> adopt_;
  Allocator alloc_;
  Cache cache_;

  int cur_index_ = -1;
  int gate_ = -1;  // armed crash point for the current op, -1 = none
  bool gate_restart_ = false;
  KvOp cur_op_ = KvOp::SEARCH;
  int type_counts_[4] = {0, 0, 0, 0};
  CondVar park_;

  Task task_;  // last member: the frame references everything above
};

}  // namespace dmkv
