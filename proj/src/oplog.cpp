#include "oplog.h"

#include <set>

namespace dmkv {

u8 crc8(const u8* p, size_t n) {
  u8 crc = 0;
  for (size_t i = 0; i < n; i++) {
    crc ^= p[i];
    for (int b = 0; b < 8; b++)
      crc = (crc & 0x80) ? u8((crc << 1) ^ 0x07) : u8(crc << 1);
  }
  return crc;
}

const char* verdict_name(EntryVerdict v) {
  switch (v) {
    case EntryVerdict::INCOMPLETE: return "incomplete";
    case EntryVerdict::UNCOMMITTED: return "uncommitted";
    case EntryVerdict::COMMITTED: return "committed";
    case EntryVerdict::SENTINEL: return "sentinel";
  }
  return "?";
}

EntryVerdict classify_entry(const LogEntry& e) {
  if (!e.used) return EntryVerdict::INCOMPLETE;
  if (e.crc != commit_crc(e.old_value)) return EntryVerdict::UNCOMMITTED;
  return e.old_value == kSentinelOldValue ? EntryVerdict::SENTINEL
                                          : EntryVerdict::COMMITTED;
}

std::vector<FabricOp> commit_entry_ops(Sim& sim, u64 off, int cls, u64 old_value) {
  const Layout& L = sim.layout();
  u64 target = entry_offset(off, L.class_size(cls)) + 12;
  std::vector<FabricOp> ops;
  for (NodeId n : L.place_region_alive(L.region_of(off), sim.view_alive())) {
    FabricOp w;
    w.kind = OpKind::WRITE;
    w.addr = {n, target};
    w.payload.resize(9);
    if (sim.cfg().log_enabled) {
      put_u64(w.payload.data(), old_value);
      w.payload[8] = commit_crc(old_value);
    }
    w.epoch = sim.epoch();
    ops.push_back(std::move(w));
  }
  return ops;
}

std::vector<FabricOp> cancel_entry_ops(Sim& sim, u64 off, int cls) {
  const Layout& L = sim.layout();
  u64 target = entry_offset(off, L.class_size(cls)) + 21;
  std::vector<FabricOp> ops;
  for (NodeId n : L.place_region_alive(L.region_of(off), sim.view_alive())) {
    FabricOp w;
    w.kind = OpKind::WRITE;
    w.addr = {n, target};
    w.payload.assign(1, 0);
    w.epoch = sim.epoch();
    ops.push_back(std::move(w));
  }
  return ops;
}

Co<std::vector<u8>> read_replicated(Sim& sim, ActorId actor, u64 off, u32 len) {
  const Layout& L = sim.layout();
  for (NodeId n : L.place_region_alive(L.region_of(off), sim.view_alive())) {
    FabricOp rd;
    rd.kind = OpKind::READ;
    rd.addr = {n, off};
    rd.len = len;
    rd.epoch = sim.epoch();
    std::vector<FabricOp> ops_rd;
    ops_rd.push_back(std::move(rd));
    auto res = co_await sim.phase(actor, std::move(ops_rd));
    if (!res[0].failed) co_return res[0].bytes;
  }
  co_return std::vector<u8>{};
}

Co<std::vector<LogRecord>> traverse_log(Sim& sim, ActorId actor, ClientId cid,
                                        int cls,
                                        const std::vector<OwnedBlock>& owned) {
  const Layout& L = sim.layout();
  std::set<std::pair<int, int>> mine;
  for (const auto& b : owned)
    if (b.cls == cls) mine.insert({b.region, b.block});

  auto valid = [&](u64 off) {
    if (!L.is_data_offset(off)) return false;
    int rg = L.region_of(off), blk = L.block_of(off);
    if (!mine.count({rg, blk})) return false;
    return (off - L.block_base(rg, blk)) % L.class_size(cls) == 0;
  };

  std::vector<LogRecord> out;
  // Registry rows are replicated on every node; any alive one serves.
  std::optional<std::vector<u8>> row;
  for (NodeId n = 0; n < sim.cfg().num_nodes; n++) {
    if (!sim.view_alive()[n]) continue;
    FabricOp rd;
    rd.kind = OpKind::READ;
    rd.addr = {n, L.registry_offset(cid, cls)};
    rd.len = 8;
    rd.epoch = sim.epoch();
    std::vector<FabricOp> ops_rd;
    ops_rd.push_back(std::move(rd));
    auto res = co_await sim.phase(actor, std::move(ops_rd));
    if (!res[0].failed) {
      row = res[0].bytes;
      break;
    }
  }
  if (!row) co_return out;
  u64 cur = get_u64(row->data());
  if (cur == 0 || !valid(cur)) co_return out;

  std::set<u64> seen;  // the genuine check breaks cycles, but stay safe
  u64 esz = L.class_size(cls);

  auto bytes = co_await read_replicated(sim, actor, entry_offset(cur, esz),
                                        kEntrySize);
  if (bytes.empty()) co_return out;
  LogEntry e = LogEntry::parse(bytes.data());
  bool blank = !e.used && e.next == 0 && e.prev == 0 && e.old_value == 0 && e.crc == 0;
  if (blank) co_return out;  // chain never started

  while (true) {
    out.push_back({cur, e, classify_entry(e)});
    seen.insert(cur);
    u64 nxt = e.next;
    if (nxt == 0 || !valid(nxt) || seen.count(nxt)) break;
    auto nb = co_await read_replicated(sim, actor, entry_offset(nxt, esz),
                                       kEntrySize);
    if (nb.empty()) break;
    LogEntry ne = LogEntry::parse(nb.data());
    // Genuine-successor check: an unwritten object reads all-zero (prev 0)
    // and a reused one carries a rewritten prev; both end the walk.
    if (ne.prev != cur) break;
    cur = nxt;
    e = ne;
  }
  co_return out;
}

}  // namespace dmkv
