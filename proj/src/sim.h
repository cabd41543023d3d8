#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "alloc_state.h"
#include "config.h"
#include "fabric.h"
#include "layout.h"
#include "rng.h"
#include "scheduler.h"
#include "trace.h"

namespace dmkv {

class ClientActor;
class MasterActor;

// Inbox traffic for the master actor. MN_CRASHED models failure detection
// (delivered at the crash tick); CLIENT_DEAD is the lease expiry of a
// crashed client; FAIL_QUERY is a client RPC carrying a completion token.
struct MasterMsg {
  enum Kind { MN_CRASHED, CLIENT_DEAD, FAIL_QUERY };
  Kind kind = MN_CRASHED;
  NodeId node = kMasterNode;  // MN_CRASHED
  ClientId cid = 0;           // CLIENT_DEAD
  ActorId from = 0;           // FAIL_QUERY issuer
  int group = 0, slot = 0;    // FAIL_QUERY slot
  u64 v_old = 0;              // FAIL_QUERY: the base value the client saw
  u64 phase = 0;              // RPC completion token
  size_t idx = 0;
};

// One bare slot_write attempt, for the protocol-level audits: rule is 1..3
// for a rule win, 0 otherwise (lost, failed, or decided by the master —
// `won` holds the actual outcome).
struct SlotWriteRec {
  ActorId actor = 0;
  u64 v_old = 0, v_new = 0;
  bool won = false;
  bool failed = false;
  int rule = 0;
  int rtts = 0;
  Tick inv = 0, res = 0;
};

struct Barrier {
  int remaining = 0;
  CondVar cv;
};

// One simulated run: owns the deterministic world (fabric, scheduler,
// trace, membership) and the actors, and exposes the services they share.
// Destruction order matters: actors (coroutine frames) die first, then the
// scheduler and fabric they reference — hence the member order below.
class Sim {
 public:
  explicit Sim(const Config& cfg);
  ~Sim();

  // Runs to quiescence. False when the scheduler halted (diagnostic in
  // halt_reason) or an actor got stuck.
  bool run();

  const Config& cfg() const { return cfg_; }
  const Layout& layout() const { return layout_; }
  Fabric& fab() { return fab_; }
  const Fabric& fab() const { return fab_; }
  Sched& sched() { return sched_; }
  Trace& trace() { return trace_; }
  const Trace& trace() const { return trace_; }

  PhaseAwaiter phase(ActorId a, std::vector<FabricOp> ops,
                     std::vector<std::optional<u64>> blocks = {}) {
    return PhaseAwaiter{sched_, a, std::move(ops), std::move(blocks)};
  }

  // Membership as clients see it. view_alive lags fabric truth until the
  // master commits a change; ops are stamped with epoch() and writes to
  // repaired groups issued under an old stamp bounce off the fence.
  int epoch() const { return epoch_; }
  const std::vector<bool>& view_alive() const { return view_alive_; }
  bool prepare_active() const { return prepare_active_; }
  CondVar& membership_cv() { return membership_cv_; }

  void begin_prepare() { prepare_active_ = true; }
  bool all_acked() const;  // every client is live (auto-ack) or declared dead
  CondVar& ack_cv() { return ack_cv_; }
  void commit_change();

  Mailbox<MasterMsg>& master_inbox() { return inbox_; }

  // Client lifecycle. on_client_crashed: stops lease renewal and schedules
  // the lease-expiry CLIENT_DEAD message; next_index is where a restarted
  // incarnation resumes the workload.
  void on_client_crashed(ClientId cid, int next_index, bool restart);
  bool client_alive(ClientId cid) const { return client_alive_[cid]; }
  bool client_declared_dead(ClientId cid) const { return declared_dead_[cid]; }
  void restart_client(ClientId cid, AllocRecovery rec);
  int next_index_of(ClientId cid) const { return next_index_[cid]; }
  bool restart_requested(ClientId cid) const { return restart_req_[cid]; }

  // Latest incarnation of a client, for post-run inspection (audits read
  // the live allocator state). Null for out-of-range ids.
  const ClientActor* client(ClientId cid) const;

  Barrier& preload_barrier() { return preload_barrier_; }
  Barrier& work_barrier() { return work_barrier_; }

  void bump(const std::string& key, u64 n = 1) { stats_[key] += n; }
  void rtt_sample(KvOp op, int rtts) { rtt_hist_[size_t(op)][rtts]++; }
  u64 stat(const std::string& key) const {
    auto it = stats_.find(key);
    return it == stats_.end() ? 0 : it->second;
  }
  std::string stats_json() const;

  void record_slot_write(const SlotWriteRec& r) { slot_recs_.push_back(r); }
  const std::vector<SlotWriteRec>& slot_recs() const { return slot_recs_; }

  const std::vector<ClientCrash>& crash_plans(ClientId cid) const;

 private:
  void wire_crash_timers();
  Rng& choice_rng() { return choice_rng_; }

  Config cfg_;
  Layout layout_;
  Trace trace_;
  Fabric fab_;
  Sched sched_;
  Rng choice_rng_;

  int epoch_ = 0;
  std::vector<bool> view_alive_;
  bool prepare_active_ = false;
  CondVar membership_cv_;
  CondVar ack_cv_;
  Mailbox<MasterMsg> inbox_;

  std::vector<bool> client_alive_;    // index cid (slot 0 unused)
  std::vector<bool> declared_dead_;   // lease expired after a crash
  std::vector<int> next_index_;       // workload resume point per client
  std::vector<bool> restart_req_;     // restart after recovery?
  std::vector<std::vector<ClientCrash>> plans_;  // per client

  Barrier preload_barrier_;
  Barrier work_barrier_;

  std::map<std::string, u64> stats_;
  std::array<std::map<int, u64>, 4> rtt_hist_;
  std::vector<SlotWriteRec> slot_recs_;

  // Actors last: their frames hold awaiters into the scheduler above.
  std::unique_ptr<MasterActor> master_;
  std::vector<std::unique_ptr<ClientActor>> clients_;  // index cid-1
};

}  // namespace dmkv
