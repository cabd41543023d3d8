#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coro.h"
#include "index.h"
#include "oplog.h"
#include "sim.h"

namespace dmkv {

// The metadata master. Serves three message kinds from its inbox, strictly
// one at a time, with memory-node reconfiguration taking priority over
// client recovery when both are pending:
//
//   MN_CRASHED  -> prepare (stop new writes, wait for acks or lease expiry),
//                  fence every group that lost a replica, repair each slot
//                  to one decided value, populate replacement replicas,
//                  commit the membership change.
//   FAIL_QUERY  -> answer a client's unresolvable slot round with the
//                  decided word (repairs record their decisions; anything
//                  else is answered from a fresh replica read).
//   CLIENT_DEAD -> rebuild the crashed client's allocator state from its
//                  block table rows, bitmaps and per-class operation logs,
//                  repair the index for the one potentially-crashed request
//                  per size class, then optionally restart the client.
class MasterActor {
 public:
  explicit MasterActor(Sim& sim);
  void start() { task_.start(); }

 private:
  // Per-slot repair decision, kept for fail-query replies. The word is what
  // a querying writer should judge its round against (its own v_new => it
  // won and the master already did its completion duties; its v_old => the
  // round evaporated, retry; anything else => it lost). primary_was_dead
  // marks slots whose displaced value was invisible to the repair; those
  // are cleaned up lazily when the query carrying the value arrives.
  struct Decided {
    u64 word = 0;
    bool primary_was_dead = false;
  };

  // One owned object in a crashed client's census.
  struct ObjState {
    u64 off = 0;
    int cls = 0;
    EntryVerdict verdict = EntryVerdict::INCOMPLETE;
    LogEntry entry;
    std::optional<KvObject> parsed;
  };

  Task run();

  // --- memory-node reconfiguration ---
  Co<void> handle_mn_crash(NodeId node);
  Co<void> repair_group(int group, const std::vector<bool>& old_view,
                        int new_epoch);
  Co<void> answer_fail_query(MasterMsg q);

  // --- client recovery ---
  Co<void> recover_client(ClientId cid);
  Co<void> finish_committed(const LogRecord& rec, int cls,
                            const KvObject& obj);
  Co<void> redo_op(const LogRecord& rec, int cls, const KvObject& obj);
  Co<void> complete_delete(int group, int slot, u64 v_new, u64 v_old);
  void give_up_restart(ClientId cid);

  // --- shared plumbing ---
  std::vector<bool> truth() const;  // fabric-truth aliveness
  Co<std::vector<u64>> read_group_words(int group);
  Co<std::vector<u8>> read_object_bytes(u64 word);
  // Invalidate + free an index-installed object, but only when its entry is
  // committed/resolved, its invalid bit is still clear, and (when given) its
  // key matches the guard. Returns true when it freed the object.
  Co<bool> retire_committed(u64 word, const std::string* key_guard);
  Co<void> drop_object(u64 off, int cls);   // cancel entry + set free bit
  Co<void> free_object(u64 off, int cls);   // set free bit only

  Sim& sim_;
  std::map<std::pair<int, int>, Decided> decided_;
  Task task_;
};

}  // namespace dmkv
