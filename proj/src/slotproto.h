#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coro.h"
#include "sim.h"

namespace dmkv {

// Backup words after the replicate CAS, in backup order. nullopt = the
// request failed (crashed replica).
using VList = std::vector<std::optional<u64>>;

// Normalization: every v_old entry becomes v_new (those CASes succeeded, so
// the slot now holds v_new); order and FAIL entries are preserved.
VList change_list_value(VList v, u64 v_old, u64 v_new);

enum class RuleOutcome : u8 {
  RULE1,       // all backups hold v_new: CAS primary directly
  RULE2,       // strict majority holds v_new: repair the rest, then primary
  RULE3,       // tie broken by minimum value in v_new's favor
  LOSE,        // another writer decided the round
  FINISH,      // the extra primary read found the round already resolved
  FAIL,        // a replica failed: delegate to the master
  NEED_CHECK,  // undecided from backups alone: read the primary once
};

const char* outcome_name(RuleOutcome o);

// Stage one: decision from the (normalized) backup words alone.
RuleOutcome eval_backups(const VList& v, u64 v_new);

// Stage two, given the extra primary read (nullopt = read failed). Never
// returns NEED_CHECK.
RuleOutcome eval_primary_check(const VList& v, u64 v_new, u64 v_old,
                               std::optional<u64> primary);

// Extension point for the KV write workflow: the phase between backup
// repair and the primary CAS (the log commit). Must count its own phases
// into the caller's RTT tally. Returning false aborts into the FAIL path.
struct RoundHooks {
  virtual Co<bool> commit(u64 v_old) = 0;
  virtual ~RoundHooks() = default;
};

struct RoundResult {
  bool won = false;
  bool failed = false;  // locally unresolvable and the master disappeared
  int rule = 0;         // 1..3 on a rule win; 0 when the master decided
  u64 final_word = 0;   // primary content at resolution; v_new on a win
  int retries = 0;      // whole-round retries requested by the master
};

// One replicated-slot write round: the caller already knows v_old (from its
// own preceding read phase). Losers return only after the round visibly
// resolved (blocked read on the primary leaving v_old). All phases count
// into rtts; path records the shape taken (rule, spin, master verdicts).
Co<RoundResult> write_round(Sim& sim, ActorId actor, int group, int slot,
                            u64 v_old, u64 v_new, RoundHooks* hooks, int& rtts,
                            std::string& path);

struct SlotReadResult {
  bool ok = false;
  u64 word = 0;
  bool via_master = false;
};

// Replicated read: primary, then unanimous backups, then the master.
Co<SlotReadResult> slot_read(Sim& sim, ActorId actor, int group, int slot,
                             int& rtts);

// Bare ops for the slot workload; slot_write learns v_old itself (one
// leading read phase) and records a SlotWriteRec for the protocol audits.
Co<RoundResult> slot_write(Sim& sim, ActorId actor, int group, int slot,
                           u64 v_new);

// The FAIL-path RPC: asks the master to resolve (group, slot) given the
// base word the client was working from. Returns the decided word.
struct MasterReply {
  bool ok = false;
  u64 word = 0;
};
Co<MasterReply> fail_query(Sim& sim, ActorId actor, int group, int slot,
                           u64 v_old, int& rtts);

}  // namespace dmkv
