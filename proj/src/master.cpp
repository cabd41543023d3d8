#include "master.h"

#include <algorithm>
#include <deque>
#include <set>

#include "slotproto.h"

namespace dmkv {

namespace {

FabricOp mk_read(NodeId n, u64 off, u32 len, int epoch) {
  FabricOp op;
  op.kind = OpKind::READ;
  op.addr = {n, off};
  op.len = len;
  op.epoch = epoch;
  return op;
}

FabricOp mk_write(NodeId n, u64 off, std::vector<u8> bytes, int epoch) {
  FabricOp op;
  op.kind = OpKind::WRITE;
  op.addr = {n, off};
  op.payload = std::move(bytes);
  op.epoch = epoch;
  return op;
}

FabricOp mk_write8(NodeId n, u64 off, u64 w, int epoch) {
  std::vector<u8> b(8);
  put_u64(b.data(), w);
  return mk_write(n, off, std::move(b), epoch);
}

FabricOp mk_cas(NodeId n, u64 off, u64 expected, u64 swap, int epoch) {
  FabricOp op;
  op.kind = OpKind::CAS;
  op.addr = {n, off};
  op.expected = expected;
  op.swap = swap;
  op.epoch = epoch;
  return op;
}

FabricOp mk_faa(NodeId n, u64 off, u64 add, int epoch) {
  FabricOp op;
  op.kind = OpKind::FAA;
  op.addr = {n, off};
  op.add = add;
  op.epoch = epoch;
  return op;
}

// Commit hook for redone requests: writes the real old value into the
// crashed client's entry, exactly as its own workflow would have.
struct RedoHooks : RoundHooks {
  Sim& sim;
  u64 off;
  int cls;
  int* rtts;
  RedoHooks(Sim& s, u64 o, int c, int* r) : sim(s), off(o), cls(c), rtts(r) {}
  Co<bool> commit(u64 v_old) override {
    std::vector<FabricOp> ops = commit_entry_ops(sim, off, cls, v_old);
    if (ops.empty()) co_return false;
    auto res = co_await sim.phase(kMaster, std::move(ops));
    (*rtts)++;
    for (const auto& r : res)
      if (!r.failed) co_return true;
    co_return false;
  }
};

}  // namespace

MasterActor::MasterActor(Sim& sim) : sim_(sim), task_(run()) {}

std::vector<bool> MasterActor::truth() const { return sim_.fab().alive(); }

Task MasterActor::run() {
  std::deque<MasterMsg> pending;
  for (;;) {
    if (pending.empty()) {
      MasterMsg first = co_await sim_.master_inbox().recv();
      pending.push_back(first);
    }
    while (!sim_.master_inbox().empty()) {
      MasterMsg more = co_await sim_.master_inbox().recv();
      pending.push_back(more);
    }
    // Reconfiguration first: every pending node crash is resolved before a
    // client recovery or a query reply reasons about the layout.
    auto it = std::find_if(
        pending.begin(), pending.end(),
        [](const MasterMsg& m) { return m.kind == MasterMsg::MN_CRASHED; });
    if (it == pending.end()) it = pending.begin();
    MasterMsg m = *it;
    pending.erase(it);
    switch (m.kind) {
      case MasterMsg::MN_CRASHED:
        co_await handle_mn_crash(m.node);
        break;
      case MasterMsg::CLIENT_DEAD:
        co_await recover_client(m.cid);
        break;
      case MasterMsg::FAIL_QUERY:
        co_await answer_fail_query(m);
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Memory-node reconfiguration
// ---------------------------------------------------------------------------

Co<void> MasterActor::handle_mn_crash(NodeId node) {
  if (node < 0 || node >= sim_.cfg().num_nodes) co_return;
  if (!sim_.view_alive()[node]) co_return;  // already reconfigured out
  sim_.bump("mn_crashes");
  sim_.trace().event(sim_.sched().now(), kMaster, "reconfig", node, 0,
                     "prepare");

  const std::vector<bool> old_view = sim_.view_alive();

  // 1. Prepare: no new writes start. Live clients acknowledge implicitly;
  // a crashed client counts once its lease expires.
  sim_.begin_prepare();
  while (!sim_.all_acked()) co_await sim_.ack_cv().wait();

  // 2. Fence every group that lost a replica: in-flight writes from the old
  // epoch bounce and fall into the fail-query path.
  const Layout& L = sim_.layout();
  int new_epoch = sim_.epoch() + 1;
  std::vector<int> affected;
  for (int g = 0; g < sim_.cfg().num_groups; g++) {
    std::vector<NodeId> reps = L.place_group(g, old_view);
    if (std::find(reps.begin(), reps.end(), node) == reps.end()) continue;
    affected.push_back(g);
    sim_.fab().fence_group(g, new_epoch);
  }

  // 3. Repair every affected slot to one decided value and fill the
  // replacement replicas.
  for (int g : affected) co_await repair_group(g, old_view, new_epoch);

  // 4. Commit: the view drops the node, the epoch advances, held writers
  // resume. Queued fail queries are answered after this, against the
  // decisions just recorded.
  sim_.commit_change();
  sim_.trace().event(sim_.sched().now(), kMaster, "reconfig", node, 0,
                     "committed");
}

Co<void> MasterActor::repair_group(int g, const std::vector<bool>& old_view,
                                   int new_epoch) {
  const Layout& L = sim_.layout();
  const int S = sim_.cfg().slots_per_group;
  const std::vector<NodeId> r_old = L.place_group(g, old_view);
  const std::vector<bool> now = truth();

  std::vector<NodeId> alive_old;
  for (NodeId m : r_old)
    if (now[m]) alive_old.push_back(m);
  if (alive_old.empty()) {
    sim_.sched().halt("index group lost every replica");
    co_return;
  }
  int primary_ix = -1;  // position of the old primary within alive_old
  int backup_ix = -1;   // first alive old backup
  for (size_t i = 0; i < alive_old.size(); i++) {
    if (alive_old[i] == r_old[0]) primary_ix = int(i);
    else if (backup_ix < 0) backup_ix = int(i);
  }

  std::vector<NodeId> r_new = L.place_group(g, now);
  std::vector<NodeId> entrants;
  for (NodeId m : r_new)
    if (std::find(alive_old.begin(), alive_old.end(), m) == alive_old.end())
      entrants.push_back(m);

  // Snapshot every surviving replica. The fence is already up, so these
  // words are final until this actor changes them.
  std::vector<FabricOp> reads;
  for (NodeId m : alive_old)
    reads.push_back(mk_read(m, L.group_offset(g), u32(S) * 8, new_epoch));
  auto snap = co_await sim_.phase(kMaster, std::move(reads));
  std::vector<std::vector<u64>> words(alive_old.size(),
                                      std::vector<u64>(S, 0));
  for (size_t i = 0; i < alive_old.size(); i++) {
    if (snap[i].failed) {
      sim_.sched().halt("repair snapshot read failed");
      co_return;
    }
    for (int s = 0; s < S; s++)
      words[i][s] = get_u64(snap[i].bytes.data() + size_t(s) * 8);
  }

  std::vector<u64> final_word(S, 0);
  for (int s = 0; s < S; s++) {
    // Freshness: a backup is never older than the last committed value, so
    // the first alive backup's word is safe to impose; the old primary only
    // serves when no backup survived.
    const int cix = backup_ix >= 0 ? backup_ix : primary_ix;
    const u64 chosen = words[size_t(cix)][s];
    Decided d;
    d.word = chosen;
    d.primary_was_dead = primary_ix < 0;

    std::optional<KvObject> chosen_obj;
    if (chosen != 0) {
      auto bytes = co_await read_object_bytes(chosen);
      if (!bytes.empty()) chosen_obj = parse_object(bytes);
      if (!chosen_obj) sim_.bump("repair_unclassified");
    }
    const bool tomb = chosen_obj && chosen_obj->tombstone;
    const EntryVerdict verdict =
        chosen_obj ? classify_entry(chosen_obj->entry)
                   : EntryVerdict::COMMITTED;

    if (chosen_obj && verdict == EntryVerdict::UNCOMMITTED) {
      // Mid-round winner value: finish the write on the winner's behalf.
      // Normalize the slot (for a tombstone, completing the delete means
      // clearing it), resolve the entry with the sentinel so a later crash
      // of the owner cannot redo it, and retire the committed words the win
      // displaced. The owner learns the verdict from its fail query and
      // skips its own completion, so there is exactly one cleaner.
      u64 target = tomb ? 0 : chosen;
      std::vector<FabricOp> fix;
      for (size_t i = 0; i < alive_old.size(); i++)
        if (words[i][s] != target)
          fix.push_back(mk_cas(alive_old[i], L.slot_offset(g, s), words[i][s],
                               target, new_epoch));
      if (!fix.empty()) co_await sim_.phase(kMaster, std::move(fix));
      std::vector<FabricOp> sn = commit_entry_ops(
          sim_, slot_ptr(chosen), slot_class(chosen), kSentinelOldValue);
      if (!sn.empty()) co_await sim_.phase(kMaster, std::move(sn));
      std::set<u64> distinct;
      for (size_t i = 0; i < alive_old.size(); i++) {
        u64 w = words[i][s];
        if (w == 0 || w == chosen || !distinct.insert(w).second) continue;
        co_await retire_committed(w, nullptr);
      }
      if (tomb) co_await retire_committed(chosen, nullptr);
      final_word[s] = target;
      sim_.bump("repair_master_finished");
    } else if (chosen_obj && tomb &&
               (verdict == EntryVerdict::COMMITTED ||
                verdict == EntryVerdict::SENTINEL)) {
      // A committed tombstone still installed: the delete's completion is
      // outstanding. If the old primary also shows it, the winner already
      // responded and its own background owns the frees; otherwise the
      // winner's primary CAS can never land (dead node or fence), it will
      // take the master's verdict and skip, and the master frees.
      bool master_owns =
          primary_ix < 0 || words[size_t(primary_ix)][s] != chosen;
      std::vector<FabricOp> fix;
      for (size_t i = 0; i < alive_old.size(); i++)
        if (words[i][s] != 0)
          fix.push_back(mk_cas(alive_old[i], L.slot_offset(g, s), words[i][s],
                               0, new_epoch));
      if (!fix.empty()) co_await sim_.phase(kMaster, std::move(fix));
      if (master_owns) {
        co_await retire_committed(chosen_obj->entry.old_value, nullptr);
        co_await retire_committed(chosen, nullptr);
      }
      final_word[s] = 0;
      sim_.bump("repair_delete_completed");
    } else {
      // Committed (or unclassifiable) choice: impose it on every survivor.
      // A committed word this replaces is the displaced base of a winner
      // whose primary CAS the fence bounced; that winner skips its own
      // completion on the master's verdict, so retiring here is exclusive.
      std::vector<FabricOp> fix;
      for (size_t i = 0; i < alive_old.size(); i++)
        if (words[i][s] != chosen)
          fix.push_back(mk_cas(alive_old[i], L.slot_offset(g, s), words[i][s],
                               chosen, new_epoch));
      if (!fix.empty()) {
        co_await sim_.phase(kMaster, std::move(fix));
        sim_.bump("repair_normalized");
      }
      if (chosen_obj) {
        std::set<u64> distinct;
        for (size_t i = 0; i < alive_old.size(); i++) {
          u64 w = words[i][s];
          if (w == 0 || w == chosen || !distinct.insert(w).second) continue;
          co_await retire_committed(w, nullptr);
        }
      }
      final_word[s] = chosen;
    }
    decided_[{g, s}] = d;
  }

  // Replacement replicas start from all-zero arrays; write the survivors'
  // decided words into them before the view commits.
  std::vector<FabricOp> fills;
  for (NodeId m : entrants)
    for (int s = 0; s < S; s++)
      if (final_word[s] != 0)
        fills.push_back(
            mk_write8(m, L.slot_offset(g, s), final_word[s], new_epoch));
  if (!fills.empty()) co_await sim_.phase(kMaster, std::move(fills));
}

Co<void> MasterActor::answer_fail_query(MasterMsg q) {
  u64 reply = 0;
  bool lazy_clean = false;
  auto it = decided_.find({q.group, q.slot});
  if (it != decided_.end()) {
    reply = it->second.word;
    lazy_clean = it->second.primary_was_dead;
  } else {
    // No repair decided this slot; answer from the freshest replica.
    auto words = co_await read_group_words(q.group);
    if (q.slot >= 0 && q.slot < int(words.size()))
      reply = words[size_t(q.slot)];
    sim_.bump("fail_query_fresh");
  }
  // Deferred cleanup: when the old primary died, the value a finishing
  // round displaced was invisible to the repair, but the query carries it.
  // With no alive primary there was no rule win, so the master is the only
  // cleaner; the entry and invalid-bit guards keep repeats idempotent.
  if (lazy_clean && q.v_old != reply)
    co_await retire_committed(q.v_old, nullptr);
  sim_.trace().event(sim_.sched().now(), kMaster, "fail_reply", kMasterNode,
                     (u64(q.group) << 16) | u64(q.slot),
                     std::to_string(reply));
  sim_.sched().complete_rpc(q.phase, q.idx, reply);
  sim_.bump("fail_replies");
}

// ---------------------------------------------------------------------------
// Client recovery
// ---------------------------------------------------------------------------

Co<void> MasterActor::recover_client(ClientId cid) {
  if (sim_.client_alive(cid)) co_return;
  sim_.bump("client_recoveries");
  sim_.trace().event(sim_.sched().now(), kMaster, "recover", kMasterNode,
                     u64(cid), "begin");
  // Kill any fabric traffic still queued on the dead incarnation's behalf.
  sim_.sched().drop_actor_queues(cid);

  const Layout& L = sim_.layout();
  const int C = L.num_classes();

  // (a) Ownership census from the region block tables.
  std::vector<OwnedBlock> owned;
  for (int rg = 0; rg < L.num_regions(); rg++) {
    std::vector<u8> table;
    u32 len = u32(L.blocks_per_region()) * 8;
    for (NodeId n : L.place_region_alive(rg, truth())) {
      std::vector<FabricOp> rd;
      rd.push_back(mk_read(n, L.table_offset(rg, 0), len, sim_.epoch()));
      auto res = co_await sim_.phase(kMaster, std::move(rd));
      if (!res[0].failed) {
        table = std::move(res[0].bytes);
        break;
      }
    }
    if (table.empty()) {
      sim_.bump("recovery_blocked");
      give_up_restart(cid);
      co_return;
    }
    for (int b = 0; b < L.blocks_per_region(); b++) {
      u64 row = get_u64(table.data() + size_t(b) * 8);
      if (row != 0 && table_owner(row) == cid)
        owned.push_back({rg, b, table_class(row)});
    }
  }

  // (b) Per-class log walks; each chain tail is the one potentially
  // crashed request of its class.
  std::vector<u64> tails(C, 0);
  std::vector<std::optional<LogRecord>> tail_rec(C);
  for (int c = 0; c < C; c++) {
    auto recs = co_await traverse_log(sim_, kMaster, cid, c, owned);
    if (!recs.empty()) {
      tails[c] = recs.back().off;
      tail_rec[c] = recs.back();
    }
  }

  // (c) Full object census underneath the chains.
  std::vector<ObjState> objs;
  for (const OwnedBlock& b : owned) {
    std::vector<u8> blk;
    for (NodeId n : L.place_region_alive(b.region, truth())) {
      std::vector<FabricOp> rd;
      rd.push_back(mk_read(n, L.block_base(b.region, b.block),
                           u32(sim_.cfg().block_size), sim_.epoch()));
      auto res = co_await sim_.phase(kMaster, std::move(rd));
      if (!res[0].failed) {
        blk = std::move(res[0].bytes);
        break;
      }
    }
    if (blk.empty()) {
      sim_.bump("recovery_blocked");
      give_up_restart(cid);
      co_return;
    }
    u64 csz = L.class_size(b.cls);
    for (int o = 0; o < L.objects_per_block(b.cls); o++) {
      ObjState x;
      x.off = L.block_base(b.region, b.block) + u64(o) * csz;
      x.cls = b.cls;
      std::vector<u8> ob(blk.begin() + long(u64(o) * csz),
                         blk.begin() + long(u64(o) * csz + csz));
      x.entry = LogEntry::parse(ob.data() + csz - kEntrySize);
      x.verdict = classify_entry(x.entry);
      x.parsed = parse_object(ob);
      objs.push_back(std::move(x));
    }
  }

  // (d) Index repair for each class tail.
  for (int c = 0; c < C; c++) {
    if (!tail_rec[c]) continue;
    const LogRecord& rec = *tail_rec[c];
    const ObjState* st = nullptr;
    for (const auto& x : objs)
      if (x.off == rec.off) {
        st = &x;
        break;
      }
    switch (rec.verdict) {
      case EntryVerdict::INCOMPLETE:
      case EntryVerdict::SENTINEL:
        break;  // reclaimed below / already resolved by the master
      case EntryVerdict::UNCOMMITTED:
        if (st && st->parsed && st->parsed->crc_ok) {
          co_await redo_op(rec, c, *st->parsed);
        } else {
          co_await drop_object(rec.off, c);
          sim_.bump("recovery_redo_torn");
        }
        break;
      case EntryVerdict::COMMITTED:
        if (st && st->parsed) {
          co_await finish_committed(rec, c, *st->parsed);
        } else {
          sim_.bump("recovery_torn_committed");
        }
        break;
    }
  }

  // (e) Pending-free bits, read after the repairs (which may set more).
  std::map<std::pair<int, int>, u64> bits;
  for (const OwnedBlock& b : owned) {
    u64 u = 0;
    for (NodeId n : L.place_region_alive(b.region, truth())) {
      std::vector<FabricOp> rd;
      rd.push_back(
          mk_read(n, L.bitmap_offset(b.region, b.block), 8, sim_.epoch()));
      auto res = co_await sim_.phase(kMaster, std::move(rd));
      if (!res[0].failed) u |= get_u64(res[0].bytes.data());
    }
    bits[{b.region, b.block}] = u;
  }

  // (f) Liveness probe and free-list rebuild: an object is live iff its
  // packed word is installed in its key's group right now. Everything not
  // live, not pending, and not the (kept-aside) chain tail is free.
  std::map<int, std::vector<u64>> gcache;
  std::vector<std::deque<u64>> free_lists(C);
  for (const auto& x : objs) {
    bool live = false;
    if (x.parsed && x.parsed->crc_ok &&
        x.verdict != EntryVerdict::INCOMPLETE) {
      Locator loc = locate(x.parsed->key, sim_.cfg().num_groups);
      auto it = gcache.find(loc.group);
      if (it == gcache.end()) {
        auto words = co_await read_group_words(loc.group);
        it = gcache.emplace(loc.group, std::move(words)).first;
      }
      u64 w = pack_slot(loc.fp, u8(x.cls), x.off);
      for (u64 sw : it->second)
        if (sw == w) {
          live = true;
          break;
        }
    }
    bool pending =
        (bits[{L.region_of(x.off), L.block_of(x.off)}] >>
         L.object_of(x.off, x.cls)) &
        1;
    if (!live && x.off == tails[x.cls]) {
      // A dead chain tail stays off the free list: reusing it would rewrite
      // the entry the next allocation's tail patch points at. One object
      // per class per recovery, accounted by this counter.
      sim_.bump("recovery_tail_held");
      continue;
    }
    if (!live && !pending) free_lists[x.cls].push_back(x.off);
  }

  // (g) Hand the rebuilt allocator state to a fresh incarnation.
  sim_.trace().event(sim_.sched().now(), kMaster, "recover", kMasterNode,
                     u64(cid), "done");
  if (sim_.restart_requested(cid)) {
    AllocRecovery rec;
    rec.free_lists = std::move(free_lists);
    rec.tails = std::move(tails);
    rec.owned = std::move(owned);
    sim_.restart_client(cid, std::move(rec));
  }
}

Co<void> MasterActor::finish_committed(const LogRecord& rec, int cls,
                                       const KvObject& obj) {
  const Layout& L = sim_.layout();
  Locator loc = locate(obj.key, sim_.cfg().num_groups);
  u64 v_new = pack_slot(loc.fp, u8(cls), rec.off);
  u64 v_old = rec.entry.old_value;
  Opcode opc = rec.entry.opcode;

  auto words = co_await read_group_words(loc.group);
  if (words.empty()) co_return;
  int slot_old = -1, slot_new = -1;
  for (int s = 0; s < int(words.size()); s++) {
    if (v_old != 0 && v_old != kSentinelOldValue && words[s] == v_old)
      slot_old = s;
    if (words[s] == v_new) slot_new = s;
  }

  if (slot_new < 0 && slot_old >= 0) {
    // Committed, but the primary CAS never landed: land it.
    std::vector<NodeId> reps = L.place_group(loc.group, truth());
    std::vector<FabricOp> pc;
    pc.push_back(mk_cas(reps[0], L.slot_offset(loc.group, slot_old), v_old,
                        v_new, sim_.epoch()));
    auto res = co_await sim_.phase(kMaster, std::move(pc));
    if (res[0].failed || res[0].old_word != v_old) {
      sim_.bump("recovery_cas_lost");
      co_return;
    }
    sim_.bump("recovery_completed");
    slot_new = slot_old;
  }

  if (slot_new >= 0 && opc == Opcode::DELETE) {
    // The tombstone is installed and the response-side backup clears (if
    // any) already ran; the clear of the primary and both frees are the
    // crashed background. Finish them.
    co_await complete_delete(loc.group, slot_new, v_new, v_old);
    sim_.bump("recovery_completed");
    co_return;
  }

  // Background replay: retire the displaced object iff the op's own
  // background provably never ran — the object still carries the op's key
  // (a same-key reallocation would be installed, and this group read would
  // have shown it) and its invalid bit is clear.
  if (v_old != 0 && v_old != kSentinelOldValue)
    co_await retire_committed(v_old, &obj.key);
}

Co<void> MasterActor::redo_op(const LogRecord& rec, int cls,
                              const KvObject& obj) {
  Locator loc = locate(obj.key, sim_.cfg().num_groups);
  u64 v_new = pack_slot(loc.fp, u8(cls), rec.off);
  Opcode opc = rec.entry.opcode;

  auto words = co_await read_group_words(loc.group);
  if (words.empty()) {
    co_await drop_object(rec.off, cls);
    co_return;
  }
  // Single-pass candidate scan. Any stale conclusion only drops the redo,
  // which is legal for a request that never got its response; presence
  // conclusions still self-correct through the CAS round below.
  int found_slot = -1, tomb_slot = -1, empty_slot = -1;
  u64 found_word = 0, tomb_word = 0;
  for (int s = 0; s < int(words.size()); s++) {
    u64 w = words[s];
    if (w == 0) {
      if (empty_slot < 0) empty_slot = s;
      continue;
    }
    if (w == v_new) continue;  // stale replicate progress of the crashed round
    if (slot_fp(w) != loc.fp) continue;
    auto bytes = co_await read_object_bytes(w);
    if (bytes.empty()) continue;
    auto cand = parse_object(bytes);
    if (!cand || !cand->crc_ok || cand->key != obj.key) continue;
    if (cand->tombstone) {
      if (tomb_slot < 0) {
        tomb_slot = s;
        tomb_word = w;
      }
      continue;
    }
    found_slot = s;
    found_word = w;
    break;
  }

  int slot = -1;
  u64 v_old = 0;
  if (opc == Opcode::INSERT) {
    if (found_slot >= 0) {  // key already present: the insert would fail
      co_await drop_object(rec.off, cls);
      co_return;
    }
    if (tomb_slot >= 0) {
      slot = tomb_slot;
      v_old = tomb_word;
    } else if (empty_slot >= 0) {
      slot = empty_slot;
    } else {
      co_await drop_object(rec.off, cls);
      co_return;
    }
  } else {  // UPDATE / DELETE need the key present
    if (found_slot < 0) {
      co_await drop_object(rec.off, cls);
      co_return;
    }
    slot = found_slot;
    v_old = found_word;
  }

  int rtts = 0;
  std::string path;
  RedoHooks hooks(sim_, rec.off, cls, &rtts);
  RoundResult rr = co_await write_round(sim_, kMaster, loc.group, slot, v_old,
                                        v_new, &hooks, rtts, path);
  if (!rr.won) {
    // Lost to a live contender (or the fabric failed): the request simply
    // never takes effect, which is legal for an unresponded op.
    co_await drop_object(rec.off, cls);
    sim_.bump("recovery_redo_dropped");
    co_return;
  }
  sim_.bump("recovery_redone");
  if (opc == Opcode::DELETE) {
    co_await complete_delete(loc.group, slot, v_new, v_old);
  } else if (rr.rule > 0 && v_old != 0) {
    co_await retire_committed(v_old, nullptr);
  }
}

void MasterActor::give_up_restart(ClientId cid) {
  if (!sim_.restart_requested(cid)) return;
  // The planned restart can never happen; release the dead client's
  // workload-barrier slot so the survivors are not stranded.
  Barrier& wb = sim_.work_barrier();
  wb.remaining--;
  if (wb.remaining <= 0) wb.cv.notify_all();
  sim_.bump("restarts_abandoned");
}

Co<void> MasterActor::complete_delete(int group, int slot, u64 v_new,
                                      u64 v_old) {
  const Layout& L = sim_.layout();
  std::vector<NodeId> reps = L.place_group(group, truth());
  // Backups strictly before the primary: the reverse order would let an
  // insert claim the slot while a backup still held the tombstone.
  std::vector<FabricOp> bc;
  for (size_t i = 1; i < reps.size(); i++)
    bc.push_back(mk_cas(reps[i], L.slot_offset(group, slot), v_new, 0,
                        sim_.epoch()));
  if (!bc.empty()) co_await sim_.phase(kMaster, std::move(bc));
  std::vector<FabricOp> pc;
  pc.push_back(
      mk_cas(reps[0], L.slot_offset(group, slot), v_new, 0, sim_.epoch()));
  co_await sim_.phase(kMaster, std::move(pc));
  co_await retire_committed(v_old, nullptr);
  co_await retire_committed(v_new, nullptr);  // the tombstone object itself
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

Co<std::vector<u64>> MasterActor::read_group_words(int group) {
  const Layout& L = sim_.layout();
  const int S = sim_.cfg().slots_per_group;
  for (NodeId n : L.place_group(group, truth())) {
    std::vector<FabricOp> rd;
    rd.push_back(mk_read(n, L.group_offset(group), u32(S) * 8, sim_.epoch()));
    auto res = co_await sim_.phase(kMaster, std::move(rd));
    if (res[0].failed) continue;
    std::vector<u64> words(size_t(S), 0);
    for (int s = 0; s < S; s++)
      words[size_t(s)] = get_u64(res[0].bytes.data() + size_t(s) * 8);
    co_return words;
  }
  co_return std::vector<u64>{};
}

Co<std::vector<u8>> MasterActor::read_object_bytes(u64 word) {
  const Layout& L = sim_.layout();
  u64 off = slot_ptr(word);
  int cls = slot_class(word);
  if (word == 0 || word == kSentinelOldValue || !L.is_data_offset(off) ||
      cls >= L.num_classes())
    co_return std::vector<u8>{};
  co_return co_await read_replicated(sim_, kMaster, off,
                                     u32(L.class_size(cls)));
}

Co<bool> MasterActor::retire_committed(u64 word, const std::string* key_guard) {
  const Layout& L = sim_.layout();
  u64 off = slot_ptr(word);
  int cls = slot_class(word);
  if (word == 0 || word == kSentinelOldValue || !L.is_data_offset(off) ||
      cls >= L.num_classes())
    co_return false;
  auto bytes = co_await read_object_bytes(word);
  if (bytes.empty()) co_return false;
  auto obj = parse_object(bytes);
  if (!obj) co_return false;
  EntryVerdict v = classify_entry(obj->entry);
  if (v != EntryVerdict::COMMITTED && v != EntryVerdict::SENTINEL)
    co_return false;  // a contender's object: its owner cancels it
  if (obj->invalid) co_return false;  // someone already retired it
  if (key_guard && obj->key != *key_guard) co_return false;  // reallocated
  std::vector<FabricOp> inv;
  std::vector<u8> flag(1, kFlagInvalid);
  for (NodeId n : L.place_region_alive(L.region_of(off), truth()))
    inv.push_back(mk_write(n, off + 4, flag, sim_.epoch()));
  if (!inv.empty()) co_await sim_.phase(kMaster, std::move(inv));
  co_await free_object(off, cls);
  sim_.bump("master_retires");
  co_return true;
}

Co<void> MasterActor::drop_object(u64 off, int cls) {
  std::vector<FabricOp> cn = cancel_entry_ops(sim_, off, cls);
  if (!cn.empty()) co_await sim_.phase(kMaster, std::move(cn));
  co_await free_object(off, cls);
}

Co<void> MasterActor::free_object(u64 off, int cls) {
  const Layout& L = sim_.layout();
  int rg = L.region_of(off), blk = L.block_of(off);
  u64 bit = 1ull << L.object_of(off, cls);
  for (NodeId n : L.place_region_alive(rg, truth())) {
    std::vector<FabricOp> ops;
    ops.push_back(mk_faa(n, L.bitmap_offset(rg, blk), bit, sim_.epoch()));
    auto res = co_await sim_.phase(kMaster, std::move(ops));
    if (!res[0].failed) co_return;
  }
  sim_.bump("free_dropped");
}

}  // namespace dmkv
