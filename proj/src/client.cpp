#include "client.h"

#include <cstdio>

#include "oplog.h"

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

FabricOp mk_write(NodeId n, u64 off, std::vector<u8> payload, int epoch) {
  FabricOp op;
  op.kind = OpKind::WRITE;
  op.addr = {n, off};
  op.payload = std::move(payload);
  op.epoch = epoch;
  return op;
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

std::string hex_word(u64 v) {
  char b[20];
  std::snprintf(b, sizeof b, "%llx", (unsigned long long)v);
  return std::string(b);
}

constexpr int kMaxOpRetries = 16;

}  // namespace

std::string make_key(int j) { return "k" + std::to_string(j); }

std::string make_value(ClientId cid, int index, int pad_to) {
  std::string v = "v" + std::to_string(cid) + "_" + std::to_string(index);
  if (int(v.size()) < pad_to) v.resize(size_t(pad_to), 'x');
  return v;
}

GenOp gen_op(const Config& cfg, ClientId cid, int index) {
  u64 x = cfg.seed ^ (u64(u32(cid)) << 32) ^
          (u64(u32(index)) * 0x9e3779b97f4a7c15ull);
  Rng rng(splitmix64(x));
  GenOp g;
  u64 roll = rng.below(100);
  if (cfg.mix == "a") {
    g.op = roll < 50 ? KvOp::SEARCH : KvOp::UPDATE;
  } else if (cfg.mix == "b") {
    g.op = roll < 95 ? KvOp::SEARCH : KvOp::UPDATE;
  } else if (cfg.mix == "c") {
    g.op = KvOp::SEARCH;
  } else {  // "d": the read-mostly mix with all four op types
    g.op = roll < 85   ? KvOp::SEARCH
           : roll < 90 ? KvOp::UPDATE
           : roll < 95 ? KvOp::INSERT
                       : KvOp::DELETE;
  }
  Zipf zipf(u64(cfg.num_keys), cfg.zipf_theta);
  g.key = make_key(int(zipf.sample(rng)));
  if (g.op == KvOp::INSERT || g.op == KvOp::UPDATE)
    g.value = make_value(cid, index, cfg.value_size);
  return g;
}

ClientActor::ClientActor(Sim& sim, ClientId cid, int start_index,
                         std::optional<AllocRecovery> rec)
    : sim_(sim),
      cid_(cid),
      actor_(ActorId(cid)),
      start_index_(start_index),
      restarted_(rec.has_value()),
      adopt_(std::move(rec)),
      alloc_(sim, ActorId(cid), cid),
      cache_(sim.cfg().cache_capacity, sim.cfg().cache_threshold,
             sim.cfg().cache_enabled) {
  task_ = run();
}

Task ClientActor::run() {
  if (sim_.cfg().workload == WorkloadKind::SLOT) {
    co_await run_slot();
    co_return;
  }
  if (adopt_) {
    alloc_.adopt(std::move(*adopt_));
    adopt_.reset();
  } else {
    bool ok = co_await alloc_.init();
    if (!ok) {
      sim_.sched().halt("client " + std::to_string(cid_) +
                        ": allocator bootstrap failed");
      co_return;
    }
  }
  co_await run_kv();
}

Co<void> ClientActor::arrive(Barrier& b) {
  b.remaining--;
  if (b.remaining <= 0) {
    b.cv.notify_all();
  } else {
    co_await b.cv.wait();
  }
}

Co<void> ClientActor::run_kv() {
  const Config& cfg = sim_.cfg();
  if (!restarted_) {
    if (cfg.preload) {
      for (int j = cid_ - 1; j < cfg.num_keys; j += cfg.num_clients) {
        co_await exec_op(KvOp::INSERT, make_key(j),
                         make_value(0, j, cfg.value_size));
      }
    }
    co_await arrive(sim_.preload_barrier());
  }
  int since_reclaim = 0;
  for (int i = start_index_; i < cfg.ops_per_client; i++) {
    cur_index_ = i;
    GenOp g = gen_op(cfg, cid_, i);
    int& done = type_counts_[size_t(g.op)];
    done++;
    gate_ = -1;
    gate_restart_ = false;
    for (const ClientCrash& p : sim_.crash_plans(cid_)) {
      if (p.op == g.op && p.nth == done) {
        gate_ = p.point;
        gate_restart_ = p.restart;
      }
    }
    co_await exec_op(g.op, g.key, g.value);
    gate_ = -1;
    if (cfg.reclaim_interval > 0 && ++since_reclaim >= cfg.reclaim_interval) {
      since_reclaim = 0;
      co_await alloc_.reclaim_scan();
    }
  }
  co_await arrive(sim_.work_barrier());
  if (cfg.verify && cid_ == 1) {
    for (int j = 0; j < cfg.num_keys; j++) {
      co_await exec_op(KvOp::SEARCH, make_key(j), std::string());
    }
  }
}

Co<void> ClientActor::run_slot() {
  const Config& cfg = sim_.cfg();
  co_await arrive(sim_.preload_barrier());
  if (cid_ <= cfg.slot_writers) {
    for (int i = start_index_; i < cfg.ops_per_client; i++) {
      cur_index_ = i;
      u64 v = (u64(u32(cid_)) << 32) | u64(u32(2 + i * 2));
      co_await slot_write(sim_, actor_, 0, 0, v);
    }
  }
  co_await arrive(sim_.work_barrier());
}

Co<void> ClientActor::exec_op(KvOp op, const std::string& key,
                              const std::string& value) {
  if (op != KvOp::SEARCH) {
    // Writes hold while a membership change is being prepared; reads of
    // index state stay safe throughout and proceed.
    while (sim_.prepare_active()) co_await sim_.membership_cv().wait();
  }
  cur_op_ = op;
  size_t ev = sim_.trace().invoke(sim_.sched().now(), actor_, op, key, value);
  if (op == KvOp::SEARCH) {
    co_await op_search(ev, key);
  } else if (op == KvOp::INSERT) {
    co_await op_insert(ev, key, value);
  } else if (op == KvOp::UPDATE) {
    co_await op_update(ev, key, value);
  } else {
    co_await op_delete(ev, key);
  }
}

void ClientActor::respond(size_t ev, Status st, const std::string& result,
                          int rtts, const std::string& path) {
  sim_.trace().respond(ev, sim_.sched().now(), st, result, rtts, path);
  sim_.rtt_sample(cur_op_, rtts);
  sim_.bump("kv_ops");
  sim_.bump(std::string("st_") + status_name(st));
}

Co<ClientActor::GroupView> ClientActor::read_group(int group, int& rtts,
                                                   std::string& path) {
  const Layout& L = sim_.layout();
  std::vector<NodeId> reps = L.place_group(group, sim_.view_alive());
  GroupView gv;
  for (NodeId n : reps) {
    std::vector<FabricOp> ops;
    ops.push_back(mk_read(n, L.group_offset(group),
                          u32(L.slots_per_group()) * 8, sim_.epoch()));
    std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(ops));
    rtts++;
    path += ",gf";
    if (res[0].failed) continue;
    gv.ok = true;
    gv.words.resize(size_t(L.slots_per_group()));
    for (int s = 0; s < L.slots_per_group(); s++)
      gv.words[size_t(s)] = get_u64(res[0].bytes.data() + s * 8);
    co_return gv;
  }
  co_return gv;
}

Co<std::vector<u8>> ClientActor::read_object(u64 word, int& rtts,
                                             std::string& path) {
  const Layout& L = sim_.layout();
  u64 off = slot_ptr(word);
  int cls = slot_class(word);
  if (!L.is_data_offset(off) || cls >= L.num_classes())
    co_return std::vector<u8>();
  std::vector<NodeId> reps =
      L.place_region_alive(L.region_of(off), sim_.view_alive());
  for (NodeId n : reps) {
    std::vector<FabricOp> ops;
    ops.push_back(mk_read(n, off, u32(L.class_size(cls)), sim_.epoch()));
    std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(ops));
    rtts++;
    path += ",or";
    if (!res[0].failed) co_return std::move(res[0].bytes);
  }
  co_return std::vector<u8>();
}

// Reads every fingerprint candidate of the (group, words) snapshot. A
// candidate read can be inconclusive when the object was displaced and its
// memory reused between the group read and the object read; absence is
// therefore only concluded once a re-read of the group reproduces the
// snapshot (an unchanged snapshot pins every mismatch on a genuine
// fingerprint collision or a key deleted within the window, both of which
// legitimize the conclusion).
Co<ClientActor::ScanOut> ClientActor::scan_candidates(int group,
                                                      std::vector<u64> words,
                                                      const std::string& key,
                                                      int& rtts,
                                                      std::string& path) {
  const Layout& L = sim_.layout();
  u8 fp = locate(key, sim_.cfg().num_groups).fp;
  for (int round = 0; round < kMaxOpRetries; round++) {
    ScanOut sc;
    sc.words = words;
    struct Cand {
      int slot;
      u64 word;
      int wave = 0;
      bool done = false;
    };
    std::vector<Cand> cands;
    for (int s = 0; s < int(words.size()); s++) {
      u64 w = words[size_t(s)];
      if (w == 0) {
        if (sc.empty_slot < 0) sc.empty_slot = s;
        continue;
      }
      if (slot_fp(w) == fp) cands.push_back(Cand{s, w, 0, false});
    }
    bool suspect = false;
    while (true) {
      std::vector<FabricOp> ops;
      std::vector<size_t> who;
      for (size_t i = 0; i < cands.size(); i++) {
        Cand& c = cands[i];
        if (c.done) continue;
        u64 off = slot_ptr(c.word);
        int cls = slot_class(c.word);
        if (!L.is_data_offset(off) || cls >= L.num_classes()) {
          c.done = true;
          suspect = true;  // torn or foreign word in the snapshot
          continue;
        }
        std::vector<NodeId> reps =
            L.place_region_alive(L.region_of(off), sim_.view_alive());
        if (c.wave >= int(reps.size())) {
          c.done = true;
          suspect = true;  // unreadable everywhere
          continue;
        }
        ops.push_back(mk_read(reps[size_t(c.wave)], off, u32(L.class_size(cls)),
                              sim_.epoch()));
        who.push_back(i);
      }
      if (ops.empty()) break;
      std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(ops));
      rtts++;
      path += ",vr";
      for (size_t k = 0; k < res.size(); k++) {
        Cand& c = cands[who[k]];
        if (res[k].failed) {
          c.wave++;
          continue;
        }
        c.done = true;
        std::optional<KvObject> ko = parse_object(res[k].bytes);
        if (!ko || !ko->crc_ok) {
          suspect = true;
          continue;
        }
        if (ko->invalid) {
          // Retired-and-freed object: its slot word is already gone, so the
          // snapshot is stale. Never a match, never a claimable tombstone.
          suspect = true;
          continue;
        }
        if (ko->tombstone) {
          sc.tomb_slots.push_back(c.slot);
          sc.tomb_words.push_back(c.word);
          if (ko->key != key) suspect = true;
          continue;
        }
        if (ko->key != key) {
          suspect = true;
          continue;
        }
        if (!sc.found) {
          sc.found = true;
          sc.slot = c.slot;
          sc.word = c.word;
          sc.value = ko->value;
        }
      }
    }
    if (sc.found || !suspect) co_return sc;
    GroupView gv = co_await read_group(group, rtts, path);
    if (!gv.ok) {
      sc.gave_up = true;
      co_return sc;
    }
    if (gv.words == words) co_return sc;  // stable snapshot: absence holds
    words = std::move(gv.words);
  }
  ScanOut sc;
  sc.words = std::move(words);
  sc.gave_up = true;
  co_return sc;
}

Co<void> ClientActor::drop_object(u64 off, int cls, int& rtts,
                                  std::string& path) {
  std::vector<FabricOp> cn = cancel_entry_ops(sim_, off, cls);
  if (!cn.empty()) {
    co_await sim_.phase(actor_, std::move(cn));
    rtts++;
    path += ",cn";
  }
  co_await alloc_.remote_free(off, cls);
  rtts++;
  path += ",fr";
}

Co<void> ClientActor::retire_displaced(u64 word) {
  const Layout& L = sim_.layout();
  u64 off = slot_ptr(word);
  int cls = slot_class(word);
  if (word == 0 || !L.is_data_offset(off) || cls >= L.num_classes()) co_return;
  std::vector<FabricOp> inv;
  std::vector<u8> flag(1, kFlagInvalid);
  for (NodeId n : L.place_region_alive(L.region_of(off), sim_.view_alive()))
    inv.push_back(mk_write(n, off + 4, flag, sim_.epoch()));
  if (!inv.empty()) co_await sim_.phase(actor_, std::move(inv));
  co_await alloc_.remote_free(off, cls);
}

Co<void> ClientActor::crash_park() {
  sim_.bump("client_crashes");
  sim_.on_client_crashed(cid_, cur_index_ + 1, gate_restart_);
  co_await park_.wait();  // never notified: the stack stays parked
}

Co<void> ClientActor::crash_mid_write(std::vector<FabricOp> ops) {
  sim_.sched().submit(actor_, std::move(ops), {}, nullptr);
  sim_.sched().truncate_pending_writes(actor_);
  co_await crash_park();
}

// ---------------------------------------------------------------------------
// SEARCH

Co<void> ClientActor::op_search(size_t ev, const std::string& key) {
  const Layout& L = sim_.layout();
  Locator loc = locate(key, sim_.cfg().num_groups);
  int rtts = 0;
  std::string path;

  Route route = cache_.route(key);
  path = route_name(route);
  sim_.bump(std::string("cache_") + route_name(route));

  CacheEntry ce;
  bool have_ce = false;
  if (route == Route::HIT) {
    ce = *cache_.peek(key);
    have_ce = true;
  }

  // Phase 1: full group read, plus the cached object in parallel on a hit.
  std::vector<FabricOp> p1;
  std::vector<NodeId> greps = L.place_group(loc.group, sim_.view_alive());
  p1.push_back(mk_read(greps[0], L.group_offset(loc.group),
                       u32(L.slots_per_group()) * 8, sim_.epoch()));
  size_t cidx = 0;
  if (have_ce) {
    u64 off = slot_ptr(ce.word);
    int cls = slot_class(ce.word);
    std::vector<NodeId> oreps =
        L.place_region_alive(L.region_of(off), sim_.view_alive());
    if (!oreps.empty() && L.is_data_offset(off) && cls < L.num_classes()) {
      cidx = p1.size();
      p1.push_back(mk_read(oreps[0], off, u32(L.class_size(cls)), sim_.epoch()));
    } else {
      have_ce = false;
    }
  }
  std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(p1));
  rtts++;

  GroupView gv;
  if (!res[0].failed) {
    gv.ok = true;
    gv.words.resize(size_t(L.slots_per_group()));
    for (int s = 0; s < L.slots_per_group(); s++)
      gv.words[size_t(s)] = get_u64(res[0].bytes.data() + s * 8);
  } else {
    gv = co_await read_group(loc.group, rtts, path);
  }
  if (!gv.ok) {
    respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
    co_return;
  }

  if (have_ce) {
    bool word_ok = gv.words[size_t(ce.slot)] == ce.word;
    std::optional<KvObject> ko;
    if (!res[cidx].failed) ko = parse_object(res[cidx].bytes);
    if (word_ok && ko && ko->crc_ok && !ko->invalid && !ko->tombstone &&
        ko->key == key) {
      respond(ev, Status::OK, ko->value, rtts, path);
      co_return;
    }
    // Blame the cache only for genuine staleness, not replica failures.
    if (!word_ok ||
        (ko && ko->crc_ok && (ko->invalid || ko->tombstone || ko->key != key)))
      cache_.note_invalid(key);
    path += ",st";
  }

  ScanOut sc = co_await scan_candidates(loc.group, gv.words, key, rtts, path);
  if (sc.gave_up) {
    respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
    co_return;
  }
  if (sc.found) {
    cache_.refresh(key, loc.group, sc.slot, sc.word);
    respond(ev, Status::OK, sc.value, rtts, path);
  } else {
    cache_.erase(key);
    respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
  }
}

// ---------------------------------------------------------------------------
// The write-side commit hook: phase 3 of the round, plus the two crash
// gates that model a client dying around its commit point.

struct KvHooks final : RoundHooks {
  ClientActor* c;
  u64 off;
  int cls;
  int* rtts;
  bool committed = false;

  KvHooks(ClientActor* c_, u64 off_, int cls_, int* rtts_)
      : c(c_), off(off_), cls(cls_), rtts(rtts_) {}

  Co<bool> commit(u64 v_old) override {
    if (c->gate_ == 1) co_await c->crash_park();
    std::vector<FabricOp> ops = commit_entry_ops(c->sim_, off, cls, v_old);
    // Logging off leaves the phase in place but moves no bytes, so the
    // write path costs the same RTTs either way.
    bool any = ops.empty();
    if (!ops.empty()) {
      std::vector<OpResult> res =
          co_await c->sim_.phase(c->actor_, std::move(ops));
      for (const OpResult& r : res)
        if (!r.failed) any = true;
    }
    (*rtts)++;
    committed = true;
    if (c->gate_ == 2) co_await c->crash_park();
    co_return any;
  }
};

// ---------------------------------------------------------------------------
// UPDATE

Co<void> ClientActor::op_update(size_t ev, const std::string& key,
                                const std::string& value) {
  const Layout& L = sim_.layout();
  const Config& cfg = sim_.cfg();
  Locator loc = locate(key, cfg.num_groups);
  int rtts = 0;
  std::string path;

  Route route = cache_.route(key);
  path = route_name(route);
  sim_.bump(std::string("cache_") + route_name(route));

  u64 need = kObjHeader + key.size() + value.size() + kEntrySize;
  Allocator::Out ao = co_await alloc_.alloc(need);
  if (!ao.ok) {
    respond(ev, Status::ERROR, std::string(), rtts, path + ",oom");
    co_return;
  }
  rtts += ao.refill_rtts;
  for (int i = 0; i < ao.refill_rtts; i++) path += ",rf";

  LogEntry entry = build_entry(Opcode::UPDATE, ao.prev_tail, ao.next_head);
  std::vector<u8> obj = serialize_object(key, value, false, entry,
                                         L.class_size(ao.cls), cfg.log_enabled);
  u64 v_new = pack_slot(loc.fp, u8(ao.cls), ao.off);

  // Phase 1: replicate the object, read the group, and (on a cache hit)
  // read the cached object — all in parallel. Allocator maintenance rides.
  std::vector<FabricOp> p1;
  for (NodeId n : L.place_region_alive(L.region_of(ao.off), sim_.view_alive()))
    p1.push_back(mk_write(n, ao.off, obj, sim_.epoch()));
  size_t nwrites = p1.size();
  size_t gidx = p1.size();
  std::vector<NodeId> greps = L.place_group(loc.group, sim_.view_alive());
  p1.push_back(mk_read(greps[0], L.group_offset(loc.group),
                       u32(L.slots_per_group()) * 8, sim_.epoch()));
  size_t cidx = 0;
  CacheEntry ce;
  bool have_ce = false;
  if (route == Route::HIT) {
    ce = *cache_.peek(key);
    u64 coff = slot_ptr(ce.word);
    int ccls = slot_class(ce.word);
    std::vector<NodeId> oreps =
        L.place_region_alive(L.region_of(coff), sim_.view_alive());
    if (!oreps.empty() && L.is_data_offset(coff) && ccls < L.num_classes()) {
      cidx = p1.size();
      p1.push_back(
          mk_read(oreps[0], coff, u32(L.class_size(ccls)), sim_.epoch()));
      have_ce = true;
    }
  }
  for (FabricOp& op : ao.carried) p1.push_back(std::move(op));
  ao.carried.clear();

  if (gate_ == 0) co_await crash_mid_write(std::move(p1));
  std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(p1));
  rtts++;

  bool any_write = false;
  for (size_t i = 0; i < nwrites; i++)
    if (!res[i].failed) any_write = true;
  if (!any_write) {
    co_await alloc_.remote_free(ao.off, ao.cls);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",wf");
    co_return;
  }

  GroupView gv;
  if (!res[gidx].failed) {
    gv.ok = true;
    gv.words.resize(size_t(L.slots_per_group()));
    for (int s = 0; s < L.slots_per_group(); s++)
      gv.words[size_t(s)] = get_u64(res[gidx].bytes.data() + s * 8);
  } else {
    gv = co_await read_group(loc.group, rtts, path);
  }
  if (!gv.ok) {
    co_await drop_object(ao.off, ao.cls, rtts, path);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
    co_return;
  }

  int slot = -1;
  u64 v_old = 0;
  bool located = false;
  if (have_ce) {
    bool word_ok = gv.words[size_t(ce.slot)] == ce.word;
    std::optional<KvObject> ko;
    if (!res[cidx].failed) ko = parse_object(res[cidx].bytes);
    if (word_ok && ko && ko->crc_ok && !ko->invalid && !ko->tombstone &&
        ko->key == key) {
      slot = ce.slot;
      v_old = ce.word;
      located = true;
    } else {
      if (!word_ok ||
          (ko && ko->crc_ok && (ko->invalid || ko->tombstone || ko->key != key)))
        cache_.note_invalid(key);
      path += ",st";
    }
  }
  if (!located) {
    ScanOut sc = co_await scan_candidates(loc.group, gv.words, key, rtts, path);
    if (sc.gave_up) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
      co_return;
    }
    if (!sc.found) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
      co_return;
    }
    slot = sc.slot;
    v_old = sc.word;
  }

  KvHooks hooks(this, ao.off, ao.cls, &rtts);
  RoundResult rr = co_await write_round(sim_, actor_, loc.group, slot, v_old,
                                        v_new, &hooks, rtts, path);

  if (rr.failed) {
    co_await drop_object(ao.off, ao.cls, rtts, path);
    respond(ev, Status::ERROR, std::string(), rtts, "fail" + path);
    co_return;
  }
  if (rr.won) {
    cache_.refresh(key, loc.group, slot, v_new);
    respond(ev, Status::OK, std::string(), rtts,
            "win," + path + ",w=" + hex_word(v_new));
    if (gate_ == 3) co_await crash_park();
    // Master-resolved wins (rule 0) already displaced and freed on our
    // behalf; cleaning up again would double-free.
    if (rr.rule > 0) co_await retire_displaced(v_old);
    co_return;
  }
  // Lost the round: the winner's displacement of v_old linearizes our
  // update immediately before it. Cancel and free before responding so a
  // later crash can never replay this op.
  cache_.note_invalid(key);
  co_await drop_object(ao.off, ao.cls, rtts, path);
  respond(ev, Status::OK, std::string(), rtts, "lose," + path);
}

// ---------------------------------------------------------------------------
// INSERT

Co<void> ClientActor::op_insert(size_t ev, const std::string& key,
                                const std::string& value) {
  const Layout& L = sim_.layout();
  const Config& cfg = sim_.cfg();
  Locator loc = locate(key, cfg.num_groups);
  int rtts = 0;
  std::string path;

  u64 need = kObjHeader + key.size() + value.size() + kEntrySize;
  Allocator::Out ao = co_await alloc_.alloc(need);
  if (!ao.ok) {
    respond(ev, Status::ERROR, std::string(), rtts, "oom");
    co_return;
  }
  rtts += ao.refill_rtts;
  for (int i = 0; i < ao.refill_rtts; i++) path += ",rf";

  LogEntry entry = build_entry(Opcode::INSERT, ao.prev_tail, ao.next_head);
  std::vector<u8> obj = serialize_object(key, value, false, entry,
                                         L.class_size(ao.cls), cfg.log_enabled);
  u64 v_new = pack_slot(loc.fp, u8(ao.cls), ao.off);

  std::vector<FabricOp> p1;
  for (NodeId n : L.place_region_alive(L.region_of(ao.off), sim_.view_alive()))
    p1.push_back(mk_write(n, ao.off, obj, sim_.epoch()));
  size_t nwrites = p1.size();
  size_t gidx = p1.size();
  std::vector<NodeId> greps = L.place_group(loc.group, sim_.view_alive());
  p1.push_back(mk_read(greps[0], L.group_offset(loc.group),
                       u32(L.slots_per_group()) * 8, sim_.epoch()));
  for (FabricOp& op : ao.carried) p1.push_back(std::move(op));
  ao.carried.clear();

  if (gate_ == 0) co_await crash_mid_write(std::move(p1));
  std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(p1));
  rtts++;

  bool any_write = false;
  for (size_t i = 0; i < nwrites; i++)
    if (!res[i].failed) any_write = true;
  if (!any_write) {
    co_await alloc_.remote_free(ao.off, ao.cls);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",wf");
    co_return;
  }

  GroupView gv;
  if (!res[gidx].failed) {
    gv.ok = true;
    gv.words.resize(size_t(L.slots_per_group()));
    for (int s = 0; s < L.slots_per_group(); s++)
      gv.words[size_t(s)] = get_u64(res[gidx].bytes.data() + s * 8);
  } else {
    gv = co_await read_group(loc.group, rtts, path);
  }
  if (!gv.ok) {
    co_await drop_object(ao.off, ao.cls, rtts, path);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
    co_return;
  }

  std::vector<u64> words = std::move(gv.words);
  for (int attempt = 0; attempt < kMaxOpRetries; attempt++) {
    ScanOut sc = co_await scan_candidates(loc.group, words, key, rtts, path);
    if (sc.gave_up) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
      co_return;
    }
    if (sc.found) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::EXISTS, std::string(), rtts, path);
      co_return;
    }
    int slot;
    u64 v_old;
    u64 claimed_tomb = 0;
    if (!sc.tomb_slots.empty()) {
      slot = sc.tomb_slots[0];  // reclaim a tombstone of our fingerprint
      v_old = sc.tomb_words[0];
      claimed_tomb = v_old;
    } else if (sc.empty_slot >= 0) {
      slot = sc.empty_slot;
      v_old = 0;
    } else {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::TABLE_FULL, std::string(), rtts, path);
      co_return;
    }

    KvHooks hooks(this, ao.off, ao.cls, &rtts);
    RoundResult rr = co_await write_round(sim_, actor_, loc.group, slot, v_old,
                                          v_new, &hooks, rtts, path);
    if (rr.failed) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, "fail" + path);
      co_return;
    }
    if (rr.won) {
      cache_.refresh(key, loc.group, slot, v_new);
      respond(ev, Status::OK, std::string(), rtts,
              "win," + path + ",w=" + hex_word(v_new));
      if (gate_ == 3) co_await crash_park();
      // Invalidate-then-free even for the tombstone (whose words are never
      // cached): the invalid bit is the recovery-side marker that this
      // object's free has been issued. Master-resolved wins freed it already.
      if (rr.rule > 0 && claimed_tomb != 0) co_await retire_displaced(claimed_tomb);
      co_return;
    }

    // Lost the claim. Classify what beat us before retrying.
    path += ",lr";
    u64 final = rr.final_word;
    if (final != 0) {
      std::vector<u8> bytes = co_await read_object(final, rtts, path);
      std::optional<KvObject> ko = parse_object(bytes);
      if (ko && ko->crc_ok && !ko->tombstone && ko->key == key) {
        co_await drop_object(ao.off, ao.cls, rtts, path);
        respond(ev, Status::EXISTS, std::string(), rtts, path);
        co_return;
      }
      if (ko && ko->crc_ok && ko->tombstone) {
        // A delete landed here first; claim the fresh tombstone in place.
        words[size_t(slot)] = final;
        continue;
      }
    }
    // Slot cleared or now foreign: rescan from a fresh group image.
    GroupView re = co_await read_group(loc.group, rtts, path);
    if (!re.ok) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
      co_return;
    }
    words = std::move(re.words);
  }
  co_await drop_object(ao.off, ao.cls, rtts, path);
  respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
}

// ---------------------------------------------------------------------------
// DELETE

Co<void> ClientActor::op_delete(size_t ev, const std::string& key) {
  const Layout& L = sim_.layout();
  const Config& cfg = sim_.cfg();
  Locator loc = locate(key, cfg.num_groups);
  int rtts = 0;
  std::string path;

  Route route = cache_.route(key);
  path = route_name(route);
  sim_.bump(std::string("cache_") + route_name(route));

  u64 need = kObjHeader + key.size() + kEntrySize;  // tombstones carry no value
  Allocator::Out ao = co_await alloc_.alloc(need);
  if (!ao.ok) {
    respond(ev, Status::ERROR, std::string(), rtts, path + ",oom");
    co_return;
  }
  rtts += ao.refill_rtts;
  for (int i = 0; i < ao.refill_rtts; i++) path += ",rf";

  LogEntry entry = build_entry(Opcode::DELETE, ao.prev_tail, ao.next_head);
  std::vector<u8> obj = serialize_object(key, std::string(), true, entry,
                                         L.class_size(ao.cls), cfg.log_enabled);
  u64 v_new = pack_slot(loc.fp, u8(ao.cls), ao.off);

  std::vector<FabricOp> p1;
  for (NodeId n : L.place_region_alive(L.region_of(ao.off), sim_.view_alive()))
    p1.push_back(mk_write(n, ao.off, obj, sim_.epoch()));
  size_t nwrites = p1.size();
  size_t gidx = p1.size();
  std::vector<NodeId> greps = L.place_group(loc.group, sim_.view_alive());
  p1.push_back(mk_read(greps[0], L.group_offset(loc.group),
                       u32(L.slots_per_group()) * 8, sim_.epoch()));
  size_t cidx = 0;
  CacheEntry ce;
  bool have_ce = false;
  if (route == Route::HIT) {
    ce = *cache_.peek(key);
    u64 coff = slot_ptr(ce.word);
    int ccls = slot_class(ce.word);
    std::vector<NodeId> oreps =
        L.place_region_alive(L.region_of(coff), sim_.view_alive());
    if (!oreps.empty() && L.is_data_offset(coff) && ccls < L.num_classes()) {
      cidx = p1.size();
      p1.push_back(
          mk_read(oreps[0], coff, u32(L.class_size(ccls)), sim_.epoch()));
      have_ce = true;
    }
  }
  for (FabricOp& op : ao.carried) p1.push_back(std::move(op));
  ao.carried.clear();

  if (gate_ == 0) co_await crash_mid_write(std::move(p1));
  std::vector<OpResult> res = co_await sim_.phase(actor_, std::move(p1));
  rtts++;

  bool any_write = false;
  for (size_t i = 0; i < nwrites; i++)
    if (!res[i].failed) any_write = true;
  if (!any_write) {
    co_await alloc_.remote_free(ao.off, ao.cls);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",wf");
    co_return;
  }

  GroupView gv;
  if (!res[gidx].failed) {
    gv.ok = true;
    gv.words.resize(size_t(L.slots_per_group()));
    for (int s = 0; s < L.slots_per_group(); s++)
      gv.words[size_t(s)] = get_u64(res[gidx].bytes.data() + s * 8);
  } else {
    gv = co_await read_group(loc.group, rtts, path);
  }
  if (!gv.ok) {
    co_await drop_object(ao.off, ao.cls, rtts, path);
    respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
    co_return;
  }

  int slot = -1;
  u64 v_old = 0;
  bool located = false;
  if (have_ce) {
    bool word_ok = gv.words[size_t(ce.slot)] == ce.word;
    std::optional<KvObject> ko;
    if (!res[cidx].failed) ko = parse_object(res[cidx].bytes);
    if (word_ok && ko && ko->crc_ok && !ko->invalid && !ko->tombstone &&
        ko->key == key) {
      slot = ce.slot;
      v_old = ce.word;
      located = true;
    } else {
      if (!word_ok ||
          (ko && ko->crc_ok && (ko->invalid || ko->tombstone || ko->key != key)))
        cache_.note_invalid(key);
      path += ",st";
    }
  }
  if (!located) {
    ScanOut sc = co_await scan_candidates(loc.group, gv.words, key, rtts, path);
    if (sc.gave_up) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
      co_return;
    }
    if (!sc.found) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      cache_.erase(key);
      respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
      co_return;
    }
    slot = sc.slot;
    v_old = sc.word;
  }

  for (int attempt = 0; attempt < kMaxOpRetries; attempt++) {
    KvHooks hooks(this, ao.off, ao.cls, &rtts);
    RoundResult rr = co_await write_round(sim_, actor_, loc.group, slot, v_old,
                                          v_new, &hooks, rtts, path);
    if (rr.failed) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, "fail" + path);
      co_return;
    }
    if (rr.won) {
      if (rr.rule > 0) {
        // Phase 5: clear the backups before acknowledging, so no later
        // write round can read our tombstone as its base from a backup.
        std::vector<FabricOp> clr;
        std::vector<NodeId> reps = L.place_group(loc.group, sim_.view_alive());
        u64 soff = L.slot_offset(loc.group, slot);
        for (size_t i = 1; i < reps.size(); i++)
          clr.push_back(mk_cas(reps[i], soff, v_new, 0, sim_.epoch()));
        if (!clr.empty()) {
          co_await sim_.phase(actor_, std::move(clr));
          rtts++;
          path += ",dc";
        }
      }
      cache_.erase(key);
      respond(ev, Status::OK, std::string(), rtts,
              "win," + path + ",w=" + hex_word(v_new));
      if (gate_ == 3) co_await crash_park();
      if (rr.rule > 0) {
        // Primary strictly after the backups: clearing it first would let
        // an insert claim the slot while a backup still holds the tomb.
        std::vector<FabricOp> pc;
        std::vector<NodeId> reps = L.place_group(loc.group, sim_.view_alive());
        pc.push_back(
            mk_cas(reps[0], L.slot_offset(loc.group, slot), v_new, 0, sim_.epoch()));
        co_await sim_.phase(actor_, std::move(pc));
        co_await retire_displaced(v_old);
        co_await retire_displaced(v_new);  // own tombstone: invalidate, then free
      }
      co_return;
    }

    // Lost: decide between "already gone" and "a newer version appeared".
    path += ",lr";
    u64 final = rr.final_word;
    if (final == 0) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      cache_.erase(key);
      respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
      co_return;
    }
    std::vector<u8> bytes = co_await read_object(final, rtts, path);
    std::optional<KvObject> ko = parse_object(bytes);
    if (ko && ko->crc_ok && !ko->tombstone && ko->key == key) {
      v_old = final;  // an update won; delete the fresh version
      continue;
    }
    if (ko && ko->crc_ok && ko->tombstone && ko->key == key) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      cache_.erase(key);
      respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
      co_return;
    }
    // Foreign or unreadable: relocate the key from scratch.
    GroupView re = co_await read_group(loc.group, rtts, path);
    if (!re.ok) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",ix");
      co_return;
    }
    ScanOut sc = co_await scan_candidates(loc.group, re.words, key, rtts, path);
    if (sc.gave_up) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
      co_return;
    }
    if (!sc.found) {
      co_await drop_object(ao.off, ao.cls, rtts, path);
      cache_.erase(key);
      respond(ev, Status::NOT_FOUND, std::string(), rtts, path);
      co_return;
    }
    slot = sc.slot;
    v_old = sc.word;
  }
  co_await drop_object(ao.off, ao.cls, rtts, path);
  respond(ev, Status::ERROR, std::string(), rtts, path + ",rx");
}

}  // namespace dmkv
