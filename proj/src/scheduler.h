#pragma once

#include <array>
#include <coroutine>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coro.h"
#include "fabric.h"
#include "trace.h"

namespace dmkv {

// A schedulable event: the head op of one per-(actor, node) FIFO queue.
// offset/len give the byte extent the op touches, for independence checks in
// exhaustive mode (ALLOC and RPC conservatively claim the whole target).
struct ChoiceOption {
  ActorId actor;
  NodeId node;
  OpKind kind;
  u64 offset;
  u64 len;
  bool is_write;
};

inline bool options_conflict(const ChoiceOption& a, const ChoiceOption& b) {
  if (a.node != b.node) return false;
  if (!a.is_write && !b.is_write) return false;
  return a.offset < b.offset + b.len && b.offset < a.offset + a.len;
}

using ChoiceHook = std::function<size_t(const std::vector<ChoiceOption>&)>;
using RpcSink =
    std::function<void(ActorId from, const FabricOp& op, u64 phase, size_t idx)>;

// Deterministic discrete-event scheduler. Actors issue phases (batches of
// fabric ops fanned out to per-(actor, node) FIFO queues) and suspend; the
// run loop applies exactly one op per tick, picked among eligible queue
// heads by the choice hook (seeded RNG in normal runs, the DFS driver in
// exhaustive mode), and resumes an actor synchronously when the last op of
// its phase lands. Ops from one actor to one node keep issue order; all
// other interleavings are up to the hook. A queued op may carry a spin
// gate: it stays ineligible until the watched word changes (or its node
// dies), which models a retry loop without burning schedule states on
// no-op re-reads. RPC ops are delivered to the sink when scheduled and
// complete only when the master answers via complete_rpc.
class Sched {
 public:
  Sched(Fabric& fab, Trace& trace) : fab_(fab), trace_(trace) {}

  // blocks is parallel to ops (or empty): an engaged entry spin-gates that
  // op on its word staying equal to the given value. waiter may be null for
  // a detached phase (crashing client flushing its in-flight writes).
  u64 submit(ActorId actor, std::vector<FabricOp> ops,
             std::vector<std::optional<u64>> blocks,
             std::coroutine_handle<> waiter);
  std::vector<OpResult> take_results(u64 id);

  void complete_rpc(u64 phase, size_t idx, u64 reply);

  // One-shot timer; fires at the start of the given tick, before that
  // tick's op. Same-tick timers fire in registration order.
  void add_timer(Tick when, std::function<void()> fn) {
    timers_.emplace(when < tick_ ? tick_ : when, std::move(fn));
  }

  Tick now() const { return tick_; }
  void set_choice(ChoiceHook h) { choice_ = std::move(h); }
  void set_rpc_sink(RpcSink s) { rpc_sink_ = std::move(s); }

  // Crash support. truncate: clip one byte off every queued WRITE payload
  // of the actor (a dying NIC completes partial writes; the byte lost is
  // the log entry's used|opcode byte). orphan: never resume its phases.
  // drop: discard its queued ops entirely (QP teardown when the master
  // starts recovery, so zombie writes cannot race the repair).
  void truncate_pending_writes(ActorId a);
  void orphan_actor(ActorId a);
  void drop_actor_queues(ActorId a);

  // Fires due timers, applies one op. False once nothing is queued and no
  // timer remains (or the scheduler was halted).
  bool step();

  void halt(std::string why) {
    if (!halted_) {
      halted_ = true;
      halt_reason_ = std::move(why);
    }
  }
  bool halted() const { return halted_; }
  const std::string& halt_reason() const { return halt_reason_; }

  u64 ops_applied() const { return ops_applied_; }
  const std::array<u64, 6>& op_counts() const { return op_counts_; }

 private:
  struct PendingOp {
    FabricOp op;
    u64 phase;
    size_t idx;
    std::optional<u64> block;  // eligible only when word != *block
  };
  struct Phase {
    ActorId actor = 0;
    std::vector<OpResult> results;
    size_t remaining = 0;
    std::coroutine_handle<> waiter;
    bool orphaned = false;
  };

  bool eligible(const PendingOp& p) const;
  void finish_op(u64 phase, size_t idx, OpResult res);
  static ChoiceOption describe(ActorId a, const PendingOp& p);

  Fabric& fab_;
  Trace& trace_;
  std::map<std::pair<ActorId, NodeId>, std::deque<PendingOp>> queues_;
  std::unordered_map<u64, Phase> phases_;
  u64 next_phase_ = 1;
  std::multimap<Tick, std::function<void()>> timers_;
  Tick tick_ = 0;
  ChoiceHook choice_;
  RpcSink rpc_sink_;
  bool halted_ = false;
  std::string halt_reason_;
  u64 ops_applied_ = 0;
  std::array<u64, 6> op_counts_{};
};

// co_await PhaseAwaiter{sched, actor, ops, blocks} -> vector<OpResult>.
struct PhaseAwaiter {
  Sched& s;
  ActorId actor;
  std::vector<FabricOp> ops;
  std::vector<std::optional<u64>> blocks{};
  u64 id = 0;

  bool await_ready() const { return ops.empty(); }
  void await_suspend(std::coroutine_handle<> h) {
    id = s.submit(actor, std::move(ops), std::move(blocks), h);
  }
  std::vector<OpResult> await_resume() {
    return id ? s.take_results(id) : std::vector<OpResult>{};
  }
};

// Single-consumer condition variable. Waiters are resumed synchronously and
// in arrival order by notify_all. Handles must outlive the wait (actors are
// only destroyed at teardown, after the scheduler stops).
class CondVar {
 public:
  auto wait() {
    struct Awaiter {
      CondVar& cv;
      bool await_ready() { return false; }
      void await_suspend(std::coroutine_handle<> h) { cv.waiters_.push_back(h); }
      void await_resume() {}
    };
    return Awaiter{*this};
  }
  void notify_all() {
    auto ws = std::move(waiters_);
    waiters_.clear();
    for (auto h : ws) h.resume();
  }
  size_t waiting() const { return waiters_.size(); }

 private:
  std::vector<std::coroutine_handle<>> waiters_;
};

// Single-reader mailbox (the master's inbox). push resumes a waiting
// reader synchronously.
template <typename M>
class Mailbox {
 public:
  bool empty() const { return msgs_.empty(); }
  void push(M m) {
    msgs_.push_back(std::move(m));
    if (waiter_) {
      auto h = waiter_;
      waiter_ = {};
      h.resume();
    }
  }
  auto recv() {
    struct Awaiter {
      Mailbox& mb;
      bool await_ready() { return !mb.msgs_.empty(); }
      void await_suspend(std::coroutine_handle<> h) { mb.waiter_ = h; }
      M await_resume() {
        M m = std::move(mb.msgs_.front());
        mb.msgs_.pop_front();
        return m;
      }
    };
    return Awaiter{*this};
  }

 private:
  std::deque<M> msgs_;
  std::coroutine_handle<> waiter_;
};

}  // namespace dmkv
