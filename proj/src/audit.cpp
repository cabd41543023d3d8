#include "audit.h"

#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "client.h"
#include "index.h"

namespace dmkv {
namespace {

struct Ctx {
  const Sim& sim;
  AuditReport& rep;
  void fail(const std::string& v) {
    rep.ok = false;
    if (rep.violations.size() < 64) rep.violations.push_back(v);
  }
};

std::vector<std::string> split_path(const std::string& p) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i <= p.size()) {
    size_t j = p.find(',', i);
    if (j == std::string::npos) j = p.size();
    if (j > i) out.push_back(p.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

// --------------------------------------------------------------------------
// Round-trip accounting. Every phase a helper issues is either part of the
// op's combined first phase, flagged in the path, or part of the winning
// rule's fixed cost. Master-mediated paths, retries and failures carry
// unflagged phases, so they are only held to the lower bound.

void audit_paths(Ctx& c) {
  static const std::set<std::string> kUnit = {"gf", "or", "vr", "rf", "cn",
                                              "fr", "dc", "pc", "sp", "mq",
                                              "mq0"};
  static const std::set<std::string> kOpaque = {"lr", "mr",  "mwin", "mlost",
                                                "fin", "mq", "mq0",  "wf",
                                                "oom", "ix", "rx",   "sp"};
  static const int kRuleCost[4] = {0, 3, 4, 4};
  const std::vector<OpEvent>& ops = c.sim.trace().ops();
  for (size_t i = 0; i < ops.size(); i++) {
    const OpEvent& e = ops[i];
    if (!e.completed) continue;
    std::vector<std::string> toks = split_path(e.path);
    bool win = !toks.empty() && toks[0] == "win";
    bool opaque = !toks.empty() &&
                  (toks[0] == "lose" || toks[0].rfind("fail", 0) == 0);
    int flags = 0, rule = 0, rules_seen = 0;
    for (const std::string& t : toks) {
      if (kUnit.count(t)) flags++;
      if (kOpaque.count(t)) opaque = true;
      if (t == "r1" || t == "r2" || t == "r3") {
        rule = t[1] - '0';
        rules_seen++;
      }
    }
    std::ostringstream id;
    id << "op#" << i << " actor=" << e.actor << " " << kvop_name(e.op)
       << " key=" << e.key << " path=" << e.path << " rtts=" << e.rtts;
    if (rules_seen > 1) {
      c.fail("rtt: several rule wins in one response: " + id.str());
      continue;
    }
    if (opaque) {
      c.rep.paths_bounded++;
      if (e.rtts < 1 + flags)
        c.fail("rtt: response cheaper than its flagged phases: " + id.str());
      continue;
    }
    if (win && rules_seen == 0) {
      c.fail("rtt: win without a rule or master verdict: " + id.str());
      continue;
    }
    if (!win && rules_seen != 0) {
      c.fail("rtt: rule win on a non-win response: " + id.str());
      continue;
    }
    int want = 1 + flags + kRuleCost[rule];
    c.rep.paths_exact++;
    if (e.rtts != want)
      c.fail("rtt: expected " + std::to_string(want) + ": " + id.str());
  }
}

// --------------------------------------------------------------------------
// Acknowledged wins against the fabric's install log: a win's word must
// have been installed on the group's primary at least as many times as it
// was claimed (object reuse can reissue a word, but only after the previous
// instance was displaced, so each claim needs an install of its own).

void audit_wins(Ctx& c) {
  std::map<u64, long> claims;
  for (const OpEvent& e : c.sim.trace().ops()) {
    if (!e.completed) continue;
    std::vector<std::string> toks = split_path(e.path);
    if (toks.empty() || toks[0] != "win") continue;
    for (const std::string& t : toks)
      if (t.rfind("w=", 0) == 0)
        claims[std::strtoull(t.c_str() + 2, nullptr, 16)]++;
  }
  for (const SlotWriteRec& rec : c.sim.slot_recs())
    if (rec.won) claims[rec.v_new]++;
  std::map<u64, long> installs;
  for (const SlotInstall& si : c.sim.fab().installs())
    if (si.on_primary && si.new_word != 0) installs[si.new_word]++;
  for (const auto& [w, n] : claims) {
    c.rep.win_words++;
    long have = installs.count(w) ? installs[w] : 0;
    if (have < n) {
      std::ostringstream os;
      os << "wins: word " << std::hex << w << std::dec << " acknowledged "
         << n << "x but installed on a primary " << have << "x";
      c.fail(os.str());
    }
  }
}

// Bare replicated-slot rounds: in a run the master never mediated, a win
// costs exactly read + 2/3/3 phases (+1 flagged primary-check read inside
// the rule-3 figure) and a loss at least read + replicate + the settle read.
void audit_slot_recs(Ctx& c) {
  if (c.sim.stat("fail_query") != 0) return;
  static const int kWant[4] = {0, 3, 4, 5};
  for (size_t i = 0; i < c.sim.slot_recs().size(); i++) {
    const SlotWriteRec& rec = c.sim.slot_recs()[i];
    std::ostringstream id;
    id << "slot rec#" << i << " actor=" << rec.actor << " rule=" << rec.rule
       << " rtts=" << rec.rtts;
    if (rec.failed) {
      c.fail("slot: failed round in a failure-free run: " + id.str());
    } else if (rec.won) {
      if (rec.rule < 1 || rec.rule > 3)
        c.fail("slot: win without a rule in a failure-free run: " + id.str());
      else if (rec.rtts != kWant[rec.rule])
        c.fail("slot: win expected " + std::to_string(kWant[rec.rule]) +
               " round trips: " + id.str());
    } else if (rec.rtts < 3) {
      c.fail("slot: loss cheaper than read+replicate+settle: " + id.str());
    }
  }
}

// --------------------------------------------------------------------------
// Index integrity and the live-object map.

std::optional<KvObject> read_obj(const Sim& sim, u64 off, int cls) {
  const Layout& L = sim.layout();
  std::vector<NodeId> reps =
      L.place_region_alive(L.region_of(off), sim.fab().alive());
  if (reps.empty()) return std::nullopt;
  std::vector<u8> bytes(L.class_size(cls));
  sim.fab().peek(reps[0], off, bytes.data(), bytes.size());
  return parse_object(bytes);
}

struct LiveObj {
  int group = 0, slot = 0, cls = 0;
  u64 word = 0;
};

std::map<u64, LiveObj> scan_index(Ctx& c) {
  std::map<u64, LiveObj> live;
  const Layout& L = c.sim.layout();
  const Fabric& F = c.sim.fab();
  for (int g = 0; g < c.sim.cfg().num_groups; g++) {
    std::vector<NodeId> reps = L.place_group(g, F.alive());
    if (reps.empty()) {
      c.fail("index: group " + std::to_string(g) + " has no alive replica");
      continue;
    }
    for (int s = 0; s < L.slots_per_group(); s++) {
      u64 w = F.peek_word(reps[0], L.slot_offset(g, s));
      if (w == 0) continue;
      std::ostringstream id;
      id << "group " << g << " slot " << s << " word " << std::hex << w;
      u64 off = slot_ptr(w);
      int cls = slot_class(w);
      if (!L.is_data_offset(off) || cls >= L.num_classes()) {
        c.fail("index: malformed word: " + id.str());
        continue;
      }
      std::optional<KvObject> obj = read_obj(c.sim, off, cls);
      if (!obj) {
        c.fail("index: unreadable or unparseable object: " + id.str());
        continue;
      }
      if (!obj->crc_ok) {
        c.fail("index: torn object behind committed word: " + id.str());
        continue;
      }
      if (obj->invalid) {
        c.fail("index: freed (invalidated) object still indexed: " + id.str());
        continue;
      }
      if (obj->tombstone) {
        c.fail("index: standing tombstone after quiescence: " + id.str());
        continue;
      }
      Locator loc = locate(obj->key, c.sim.cfg().num_groups);
      if (loc.group != g || loc.fp != slot_fp(w)) {
        c.fail("index: object filed under the wrong group/fingerprint: " +
               id.str());
        continue;
      }
      auto [it, fresh] = live.emplace(off, LiveObj{g, s, cls, w});
      (void)it;
      if (!fresh) c.fail("index: object aliased by two slots: " + id.str());
    }
  }
  return live;
}

// --------------------------------------------------------------------------
// Allocator conservation.

u64 bitmap_union(const Sim& sim, int region, int block, bool alive_only) {
  const Layout& L = sim.layout();
  std::vector<bool> all(size_t(sim.cfg().num_nodes), true);
  std::vector<NodeId> reps =
      L.place_region_alive(region, alive_only ? sim.fab().alive() : all);
  u64 bits = 0;
  for (NodeId n : reps) bits |= sim.fab().peek_word(n, L.bitmap_offset(region, block));
  return bits;
}

// Re-derivation of a dead owner's class-chain tail: walk old to new from
// the registry chain-start row, following next pointers while the
// successor is genuine (successor.prev == current) and stays inside the
// owner's blocks of that class — the same rule recovery walks by.
u64 walk_tail(const Sim& sim, ClientId cid, int cls,
              const std::set<std::pair<int, int>>& owned_rb) {
  const Layout& L = sim.layout();
  NodeId reg_node = -1;
  for (NodeId n = 0; n < sim.cfg().num_nodes; n++)
    if (sim.fab().node_alive(n)) {
      reg_node = n;
      break;
    }
  if (reg_node < 0) return 0;
  u64 cur = sim.fab().peek_word(reg_node, L.registry_offset(cid, cls));
  if (cur == 0 || !L.is_data_offset(cur)) return 0;
  std::set<u64> seen;
  while (seen.insert(cur).second) {
    std::optional<KvObject> obj = read_obj(sim, cur, cls);
    if (!obj) break;
    u64 nxt = obj->entry.next;
    if (nxt == 0 || !L.is_data_offset(nxt)) break;
    if (!owned_rb.count({L.region_of(nxt), L.block_of(nxt)})) break;
    std::optional<KvObject> nobj = read_obj(sim, nxt, cls);
    if (!nobj || nobj->entry.prev != cur) break;
    cur = nxt;
  }
  return cur;
}

void audit_conservation(Ctx& c, const std::map<u64, LiveObj>& live) {
  const Sim& sim = c.sim;
  const Layout& L = sim.layout();
  const Fabric& F = sim.fab();

  std::set<std::pair<int, int>> granted_rb;
  std::map<ClientId, std::vector<BlockGrant>> per_cid;
  for (const BlockGrant& g : F.grants()) {
    std::ostringstream id;
    id << "region " << g.region << " block " << g.block << " cid " << g.cid;
    if (!granted_rb.insert({g.region, g.block}).second)
      c.fail("conservation: block granted twice: " + id.str());
    std::vector<NodeId> reps = L.place_region_alive(g.region, F.alive());
    if (!reps.empty()) {
      u64 row = F.peek_word(reps[0], L.table_offset(g.region, g.block));
      if (table_owner(row) != g.cid || table_class(row) != g.len_class)
        c.fail("conservation: table row disagrees with the grant: " + id.str());
    }
    per_cid[g.cid].push_back(g);
  }

  for (const auto& [cid, blocks] : per_cid) {
    bool alive = sim.client_alive(cid);
    const ClientActor* ca = sim.client(cid);
    const size_t ncls = size_t(L.num_classes());
    std::vector<std::unordered_set<u64>> fl(ncls);
    std::vector<u64> tails(ncls, 0);
    std::vector<std::set<std::pair<int, int>>> owned_cls(ncls);
    for (const BlockGrant& g : blocks)
      owned_cls[size_t(g.len_class)].insert({g.region, g.block});

    if (alive && ca) {
      for (size_t cl = 0; cl < ncls; cl++) {
        for (u64 off : ca->alloc().free_list(int(cl))) fl[cl].insert(off);
        tails[cl] = ca->alloc().tail_of(int(cl));
      }
      std::set<std::pair<int, int>> ob;
      for (const OwnedBlock& b : ca->alloc().owned())
        ob.insert({b.region, b.block});
      std::set<std::pair<int, int>> gb;
      for (const BlockGrant& g : blocks) gb.insert({g.region, g.block});
      if (ob != gb)
        c.fail("conservation: client " + std::to_string(cid) +
               " owned-block view diverges from the grant log");
    } else {
      for (size_t cl = 0; cl < ncls; cl++)
        tails[cl] = walk_tail(sim, cid, int(cl), owned_cls[cl]);
    }

    for (const BlockGrant& g : blocks) {
      int n_obj = L.objects_per_block(g.len_class);
      u64 base = L.block_base(g.region, g.block);
      u64 bits_alive = bitmap_union(sim, g.region, g.block, true);
      u64 bits_dead = bitmap_union(sim, g.region, g.block, false) & ~bits_alive;
      for (int i = 0; i < n_obj; i++) {
        u64 off = base + u64(i) * L.class_size(g.len_class);
        c.rep.objects++;
        std::ostringstream id;
        id << "cid " << cid << " off " << std::hex << off << std::dec
           << " class " << g.len_class;
        bool in_fl = alive && fl[size_t(g.len_class)].count(off) != 0;
        auto lit = live.find(off);
        bool is_live = lit != live.end();
        if (is_live && lit->second.cls != g.len_class) {
          c.fail("conservation: indexed under the wrong class: " + id.str());
          continue;
        }
        bool bit_a = (bits_alive >> i) & 1;
        bool bit_d = (bits_dead >> i) & 1;
        if (int(in_fl) + int(is_live) + int(bit_a) > 1) {
          std::ostringstream os;
          os << "conservation: object in several buckets (free-listed="
             << in_fl << " indexed=" << is_live << " bit=" << bit_a
             << "): " << id.str();
          c.fail(os.str());
          continue;
        }
        if (in_fl) {
          c.rep.free_listed++;
        } else if (is_live) {
          c.rep.live_objects++;
        } else if (bit_a) {
          c.rep.bit_pending++;
        } else if (bit_d) {
          c.rep.lost_frees++;
          if (sim.stat("mn_crashes") == 0)
            c.fail("conservation: free bit stranded without any node crash: " +
                   id.str());
        } else if (off == tails[size_t(g.len_class)]) {
          c.rep.held_tails++;
        } else if (!alive) {
          c.rep.recomputed_free++;
        } else {
          c.fail("conservation: leaked object: " + id.str());
        }
      }
    }
  }
}

}  // namespace

std::string AuditReport::summary() const {
  std::ostringstream os;
  if (ok) {
    os << "audit OK: paths=" << paths_exact << "(+" << paths_bounded
       << " bounded) wins=" << win_words << " objects=" << objects
       << " [live=" << live_objects << " free=" << free_listed
       << " pending=" << bit_pending << " tails=" << held_tails
       << " refree=" << recomputed_free << " lost=" << lost_frees << "]";
  } else {
    os << "audit FAIL (" << violations.size() << " violations):";
    size_t n = std::min<size_t>(violations.size(), 8);
    for (size_t i = 0; i < n; i++) os << "\n  " << violations[i];
    if (violations.size() > n) os << "\n  ...";
  }
  return os.str();
}

AuditReport run_audits(const Sim& sim) {
  AuditReport rep;
  Ctx c{sim, rep};
  audit_paths(c);
  audit_wins(c);
  audit_slot_recs(c);
  if (sim.fab().double_set_bits() != 0)
    c.fail("fabric: a free bit was set twice (double free), count=" +
           std::to_string(sim.fab().double_set_bits()));
  if (sim.cfg().workload == WorkloadKind::KV) {
    std::map<u64, LiveObj> live = scan_index(c);
    audit_conservation(c, live);
  }
  return rep;
}

}  // namespace dmkv
