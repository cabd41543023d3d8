#include "scheduler.h"

namespace dmkv {

u64 Sched::submit(ActorId actor, std::vector<FabricOp> ops,
                  std::vector<std::optional<u64>> blocks,
                  std::coroutine_handle<> waiter) {
  assert(!ops.empty());
  assert(blocks.empty() || blocks.size() == ops.size());
  u64 id = next_phase_++;
  Phase& ph = phases_[id];
  ph.actor = actor;
  ph.results.resize(ops.size());
  ph.remaining = ops.size();
  ph.waiter = waiter;
  ph.orphaned = !waiter;
  for (size_t i = 0; i < ops.size(); i++) {
    PendingOp p;
    p.op = std::move(ops[i]);
    p.phase = id;
    p.idx = i;
    if (!blocks.empty()) p.block = blocks[i];
    queues_[{actor, p.op.addr.node}].push_back(std::move(p));
  }
  return id;
}

std::vector<OpResult> Sched::take_results(u64 id) {
  auto it = phases_.find(id);
  assert(it != phases_.end() && it->second.remaining == 0);
  std::vector<OpResult> out = std::move(it->second.results);
  phases_.erase(it);
  return out;
}

void Sched::complete_rpc(u64 phase, size_t idx, u64 reply) {
  auto it = phases_.find(phase);
  if (it == phases_.end()) return;  // issuer crashed and was swept meanwhile
  OpResult res;
  res.rpc_reply = reply;
  finish_op(phase, idx, std::move(res));
  (void)it;
}

void Sched::finish_op(u64 phase, size_t idx, OpResult res) {
  auto it = phases_.find(phase);
  assert(it != phases_.end());
  Phase& ph = it->second;
  ph.results[idx] = std::move(res);
  assert(ph.remaining > 0);
  if (--ph.remaining > 0) return;
  if (ph.orphaned) {
    phases_.erase(it);
    return;
  }
  auto h = ph.waiter;
  h.resume();  // synchronous continuation; the frame calls take_results
}

void Sched::truncate_pending_writes(ActorId a) {
  for (auto& [key, q] : queues_) {
    if (key.first != a) continue;
    for (PendingOp& p : q)
      if (p.op.kind == OpKind::WRITE && !p.op.payload.empty())
        p.op.payload.pop_back();
  }
}

void Sched::orphan_actor(ActorId a) {
  for (auto& [id, ph] : phases_)
    if (ph.actor == a) {
      ph.orphaned = true;
      ph.waiter = {};
    }
}

void Sched::drop_actor_queues(ActorId a) {
  std::vector<std::pair<u64, size_t>> dropped;
  for (auto it = queues_.begin(); it != queues_.end();) {
    if (it->first.first == a) {
      for (PendingOp& p : it->second) dropped.push_back({p.phase, p.idx});
      it = queues_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto [phase, idx] : dropped) {
    auto it = phases_.find(phase);
    if (it == phases_.end()) continue;
    assert(it->second.orphaned);
    if (--it->second.remaining == 0) phases_.erase(it);
  }
}

bool Sched::eligible(const PendingOp& p) const {
  if (!p.block) return true;
  NodeId n = p.op.addr.node;
  if (!fab_.node_alive(n)) return true;  // unblocks so the op can fail
  return fab_.peek_word(n, p.op.addr.offset) != *p.block;
}

ChoiceOption Sched::describe(ActorId a, const PendingOp& p) {
  ChoiceOption o;
  o.actor = a;
  o.node = p.op.addr.node;
  o.kind = p.op.kind;
  switch (p.op.kind) {
    case OpKind::READ:
      o.offset = p.op.addr.offset;
      o.len = p.op.len;
      o.is_write = false;
      break;
    case OpKind::WRITE:
      o.offset = p.op.addr.offset;
      o.len = p.op.payload.size();
      o.is_write = true;
      break;
    case OpKind::CAS:
    case OpKind::FAA:
      o.offset = p.op.addr.offset;
      o.len = 8;
      o.is_write = true;
      break;
    case OpKind::ALLOC_BLOCK:
    case OpKind::RPC:
      o.offset = 0;
      o.len = ~0ull;  // conservative: conflicts with anything on the target
      o.is_write = true;
      break;
  }
  return o;
}

bool Sched::step() {
  if (halted_) return false;
  // Timers due now run before this tick's op.
  while (!timers_.empty() && timers_.begin()->first <= tick_) {
    auto fn = std::move(timers_.begin()->second);
    timers_.erase(timers_.begin());
    fn();
    if (halted_) return false;
  }

  std::vector<ChoiceOption> options;
  std::vector<const std::pair<const std::pair<ActorId, NodeId>, std::deque<PendingOp>>*>
      picks;
  for (auto& entry : queues_) {
    if (entry.second.empty()) continue;
    if (!eligible(entry.second.front())) continue;
    options.push_back(describe(entry.first.first, entry.second.front()));
    picks.push_back(&entry);
  }

  if (options.empty()) {
    if (!timers_.empty()) {
      tick_ = timers_.begin()->first;  // quiescent gap: jump to next timer
      return true;
    }
    return false;
  }

  assert(choice_);
  size_t k = choice_(options);
  assert(k < options.size());
  auto key = picks[k]->first;
  auto& q = queues_[key];
  PendingOp p = std::move(q.front());
  q.pop_front();
  if (q.empty()) queues_.erase(key);

  ops_applied_++;
  op_counts_[size_t(p.op.kind)]++;
  ActorId actor = key.first;

  if (p.op.kind == OpKind::RPC) {
    trace_.event(tick_, actor, "rpc", kMasterNode, u64(p.op.rpc), "deliver");
    tick_++;
    assert(rpc_sink_);
    rpc_sink_(actor, p.op, p.phase, p.idx);
    return true;
  }

  OpResult res = fab_.apply(actor, p.op, tick_);
  if (trace_.level() == TraceLevel::FULL) {
    static const char* names[] = {"read", "write", "cas", "faa", "alloc", "rpc"};
    const char* outcome = "ok";
    if (res.fenced) outcome = "fenced";
    else if (res.oom) outcome = "oom";
    else if (res.failed) outcome = "fail";
    else if (p.op.kind == OpKind::CAS && res.old_word != p.op.expected) outcome = "miss";
    trace_.event(tick_, actor, names[size_t(p.op.kind)], p.op.addr.node,
                 p.op.addr.offset, outcome);
  }
  tick_++;
  finish_op(p.phase, p.idx, std::move(res));
  return true;
}

}  // namespace dmkv
