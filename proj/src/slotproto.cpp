#include "slotproto.h"

#include <algorithm>
#include <map>

namespace dmkv {

VList change_list_value(VList v, u64 v_old, u64 v_new) {
  for (auto& e : v)
    if (e && *e == v_old) e = v_new;
  return v;
}

const char* outcome_name(RuleOutcome o) {
  switch (o) {
    case RuleOutcome::RULE1: return "rule1";
    case RuleOutcome::RULE2: return "rule2";
    case RuleOutcome::RULE3: return "rule3";
    case RuleOutcome::LOSE: return "lose";
    case RuleOutcome::FINISH: return "finish";
    case RuleOutcome::FAIL: return "fail";
    case RuleOutcome::NEED_CHECK: return "check";
  }
  return "?";
}

RuleOutcome eval_backups(const VList& v, u64 v_new) {
  for (const auto& e : v)
    if (!e) return RuleOutcome::FAIL;
  bool all_mine = true;
  for (const auto& e : v)
    if (*e != v_new) all_mine = false;
  if (all_mine) return RuleOutcome::RULE1;  // r=1 lands here vacuously
  bool unanimous = true;
  for (const auto& e : v)
    if (*e != *v[0]) unanimous = false;
  if (unanimous) return RuleOutcome::LOSE;  // and v[0] != v_new, from above
  std::map<u64, size_t> cnt;
  for (const auto& e : v) cnt[*e]++;
  size_t n = v.size();
  if (2 * cnt[v_new] > n) return RuleOutcome::RULE2;
  for (const auto& [w, c] : cnt)
    if (w != v_new && 2 * c > n) return RuleOutcome::LOSE;
  if (cnt[v_new] == 0) return RuleOutcome::LOSE;
  return RuleOutcome::NEED_CHECK;
}

RuleOutcome eval_primary_check(const VList& v, u64 v_new, u64 v_old,
                               std::optional<u64> primary) {
  if (!primary) return RuleOutcome::FAIL;
  if (*primary != v_old) return RuleOutcome::FINISH;
  u64 mn = ~0ull;
  for (const auto& e : v) mn = std::min(mn, *e);
  return mn == v_new ? RuleOutcome::RULE3 : RuleOutcome::LOSE;
}

namespace {

FabricOp make_read(Sim& sim, NodeId n, u64 off, u32 len) {
  FabricOp op;
  op.kind = OpKind::READ;
  op.addr = {n, off};
  op.len = len;
  op.epoch = sim.epoch();
  return op;
}

FabricOp make_cas(Sim& sim, NodeId n, u64 off, u64 expected, u64 swap) {
  FabricOp op;
  op.kind = OpKind::CAS;
  op.addr = {n, off};
  op.expected = expected;
  op.swap = swap;
  op.epoch = sim.epoch();
  return op;
}


std::vector<FabricOp> one(FabricOp op) {
  std::vector<FabricOp> v;
  v.push_back(std::move(op));
  return v;
}
}  // namespace

Co<MasterReply> fail_query(Sim& sim, ActorId actor, int group, int slot,
                           u64 v_old, int& rtts) {
  FabricOp op;
  op.kind = OpKind::RPC;
  op.addr = {kMasterNode, 0};
  op.rpc = RpcKind::FAIL_QUERY;
  op.rpc_a = u64(group);
  op.rpc_b = u64(slot);
  op.rpc_c = v_old;
  op.epoch = sim.epoch();
  std::vector<FabricOp> ops_op;
  ops_op.push_back(std::move(op));
  sim.bump("fail_query");
  auto res = co_await sim.phase(actor, std::move(ops_op));
  rtts++;
  if (res[0].failed) co_return MasterReply{};
  co_return MasterReply{true, res[0].rpc_reply};
}

Co<RoundResult> write_round(Sim& sim, ActorId actor, int group, int slot,
                            u64 v_old, u64 v_new, RoundHooks* hooks, int& rtts,
                            std::string& path) {
  const Layout& L = sim.layout();
  u64 off = L.slot_offset(group, slot);
  RoundResult rr;

  for (int attempt = 0;; attempt++) {
    if (attempt > sim.cfg().max_spin) {
      sim.sched().halt("write_round retry budget exhausted");
      rr.failed = true;
      co_return rr;
    }
    auto reps = L.place_group(group, sim.view_alive());
    bool fail_path = false;

    // Replicate: CAS every backup from v_old to v_new.
    VList raw;
    if (reps.size() > 1) {
      std::vector<FabricOp> cas;
      for (size_t i = 1; i < reps.size(); i++)
        cas.push_back(make_cas(sim, reps[i], off, v_old, v_new));
      auto res = co_await sim.phase(actor, std::move(cas));
      rtts++;
      for (const auto& r : res)
        raw.push_back(r.failed ? std::nullopt : std::optional<u64>(r.old_word));
    }
    VList v = change_list_value(raw, v_old, v_new);
    RuleOutcome out = eval_backups(v, v_new);

    std::optional<u64> primary_seen;
    if (out == RuleOutcome::NEED_CHECK) {
      auto res = co_await sim.phase(actor, one(make_read(sim, reps[0], off, 8)));
      rtts++;
      path += ",pc";
      primary_seen = res[0].failed ? std::nullopt
                                   : std::optional<u64>(get_u64(res[0].bytes.data()));
      out = eval_primary_check(v, v_new, v_old, primary_seen);
    }

    if (out == RuleOutcome::RULE2 || out == RuleOutcome::RULE3) {
      // Repair the backups that hold another writer's value, using the
      // observed words as CAS expectations.
      std::vector<FabricOp> fix;
      std::vector<size_t> fixed;
      for (size_t i = 0; i < v.size(); i++) {
        if (*v[i] == v_new) continue;
        fix.push_back(make_cas(sim, reps[i + 1], off, *v[i], v_new));
        fixed.push_back(i);
      }
      auto res = co_await sim.phase(actor, std::move(fix));
      rtts++;
      // A miss or failure here means the master is repairing the group
      // underneath us; hand the round to it.
      for (size_t k = 0; k < res.size(); k++)
        if (res[k].failed || res[k].old_word != *v[fixed[k]]) fail_path = true;
    }

    if (!fail_path &&
        (out == RuleOutcome::RULE1 || out == RuleOutcome::RULE2 ||
         out == RuleOutcome::RULE3)) {
      if (hooks) {
        bool ok = co_await hooks->commit(v_old);
        if (!ok) fail_path = true;
      }
      if (!fail_path) {
        auto res = co_await sim.phase(actor, one(make_cas(sim, reps[0], off, v_old, v_new)));
        rtts++;
        if (res[0].failed) {
          fail_path = true;
        } else if (res[0].old_word == v_old) {
          rr.won = true;
          rr.rule = out == RuleOutcome::RULE1 ? 1 : out == RuleOutcome::RULE2 ? 2 : 3;
          rr.final_word = v_new;
          path += ",r" + std::to_string(rr.rule);
          co_return rr;
        } else if (res[0].old_word == v_new) {
          // The master resolved a failure in this round and picked our
          // value off a backup; the install is ours.
          rr.won = true;
          rr.final_word = v_new;
          path += ",mwin";
          co_return rr;
        } else {
          rr.final_word = res[0].old_word;
          path += ",mlost";
          co_return rr;
        }
      }
    }

    if (!fail_path && out == RuleOutcome::FINISH) {
      rr.final_word = *primary_seen;
      rr.won = rr.final_word == v_new;
      path += rr.won ? ",mwin" : ",fin";
      co_return rr;
    }

    if (!fail_path && out == RuleOutcome::LOSE) {
      // One blocked read: eligible only once the primary word left v_old
      // (or the node died), i.e. when the round visibly resolved.
      std::vector<std::optional<u64>> gates;
      gates.push_back(v_old);
      auto res = co_await sim.phase(actor, one(make_read(sim, reps[0], off, 8)),
                                    std::move(gates));
      rtts++;
      path += ",sp";
      if (res[0].failed) {
        fail_path = true;
      } else {
        rr.final_word = get_u64(res[0].bytes.data());
        rr.won = rr.final_word == v_new;  // master may have picked our value
        if (rr.won) path += ",mwin";
        co_return rr;
      }
    }

    // FAIL path: the master decides the slot. A reply of v_old means the
    // round is still open — retry it wholesale.
    path += ",mq";
    auto reply = co_await fail_query(sim, actor, group, slot, v_old, rtts);
    if (!reply.ok) {
      rr.failed = true;
      co_return rr;
    }
    if (reply.word == v_old) {
      rr.retries++;
      path += ",mr";
      continue;
    }
    rr.final_word = reply.word;
    rr.won = rr.final_word == v_new;
    if (rr.won) path += ",mwin";
    co_return rr;
  }
}

Co<SlotReadResult> slot_read(Sim& sim, ActorId actor, int group, int slot,
                             int& rtts) {
  const Layout& L = sim.layout();
  u64 off = L.slot_offset(group, slot);
  auto reps = L.place_group(group, sim.view_alive());
  auto res = co_await sim.phase(actor, one(make_read(sim, reps[0], off, 8)));
  rtts++;
  if (!res[0].failed) co_return SlotReadResult{true, get_u64(res[0].bytes.data()), false};

  if (reps.size() > 1) {
    std::vector<FabricOp> reads;
    for (size_t i = 1; i < reps.size(); i++)
      reads.push_back(make_read(sim, reps[i], off, 8));
    auto bres = co_await sim.phase(actor, std::move(reads));
    rtts++;
    std::optional<u64> word;
    bool unanimous = true;
    for (const auto& r : bres) {
      if (r.failed) continue;
      u64 w = get_u64(r.bytes.data());
      if (!word) word = w;
      else if (*word != w) unanimous = false;
    }
    if (word && unanimous) co_return SlotReadResult{true, *word, false};
  }

  auto reply = co_await fail_query(sim, actor, group, slot, 0, rtts);
  if (!reply.ok) co_return SlotReadResult{};
  co_return SlotReadResult{true, reply.word, true};
}

Co<RoundResult> slot_write(Sim& sim, ActorId actor, int group, int slot,
                           u64 v_new) {
  const Layout& L = sim.layout();
  u64 off = L.slot_offset(group, slot);
  int rtts = 0;
  std::string path;
  std::string key = "g" + std::to_string(group) + "s" + std::to_string(slot);
  Tick inv = sim.sched().now();
  size_t ev = sim.trace().invoke(inv, actor, KvOp::UPDATE, key,
                                 std::to_string(v_new));

  auto reps = L.place_group(group, sim.view_alive());
  auto res = co_await sim.phase(actor, one(make_read(sim, reps[0], off, 8)));
  rtts++;
  u64 v_old;
  if (!res[0].failed) {
    v_old = get_u64(res[0].bytes.data());
  } else {
    auto reply = co_await fail_query(sim, actor, group, slot, 0, rtts);
    if (!reply.ok) {
      Tick rt = sim.sched().now();
      sim.trace().respond(ev, rt, Status::ERROR, "", rtts, "fail");
      sim.record_slot_write({actor, 0, v_new, false, true, 0, rtts, inv, rt});
      co_return RoundResult{.failed = true};
    }
    v_old = reply.word;
    path += ",mq0";
  }

  auto rr = co_await write_round(sim, actor, group, slot, v_old, v_new, nullptr,
                                 rtts, path);
  Tick rt = sim.sched().now();
  std::string shape = rr.won ? "win" : rr.failed ? "fail" : "lose";
  if (!path.empty()) shape += path;
  sim.trace().respond(ev, rt, rr.failed ? Status::ERROR : Status::OK, "", rtts,
                      shape);
  sim.record_slot_write(
      {actor, v_old, v_new, rr.won, rr.failed, rr.rule, rtts, inv, rt});
  sim.rtt_sample(KvOp::UPDATE, rtts);
  co_return rr;
}

}  // namespace dmkv
