#include "memalloc.h"

#include <algorithm>
#include <map>

namespace dmkv {

Co<bool> Allocator::init() {
  const Layout& L = sim_.layout();
  for (int c = 0; c < L.num_classes(); c++) {
    int rtts = 0;
    u64 base = co_await grant_block(c, &rtts);
    if (base == 0) co_return false;
    carve(base, c);
  }
  // Chain-start registry rows: the first object each class chain will ever
  // contain, replicated on every alive node. Written once; recovery walks
  // the class log old-to-new from here.
  std::vector<FabricOp> ops;
  for (int c = 0; c < L.num_classes(); c++) {
    u64 head = free_[c].front();
    for (NodeId n = 0; n < sim_.cfg().num_nodes; n++) {
      if (!sim_.view_alive()[n]) continue;
      FabricOp w;
      w.kind = OpKind::WRITE;
      w.addr = {n, L.registry_offset(cid_, c)};
      w.payload.resize(8);
      put_u64(w.payload.data(), head);
      w.epoch = sim_.epoch();
      ops.push_back(std::move(w));
    }
  }
  co_await sim_.phase(actor_, std::move(ops));
  co_return true;
}

Co<u64> Allocator::grant_block(int cls, int* rtts) {
  const Layout& L = sim_.layout();
  for (int attempt = 0; attempt < L.num_regions(); attempt++) {
    int rg = (rr_region_ + attempt) % L.num_regions();
    auto reps = L.place_region_alive(rg, sim_.view_alive());
    if (reps.empty()) continue;
    FabricOp op;
    op.kind = OpKind::ALLOC_BLOCK;
    op.addr = {reps[0], 0};
    op.alloc_cid = cid_;
    op.alloc_class = cls;
    op.epoch = sim_.epoch();
    std::vector<FabricOp> ops_op;
    ops_op.push_back(std::move(op));
    auto res = co_await sim_.phase(actor_, std::move(ops_op));
    (*rtts)++;
    if (!res[0].failed) {
      rr_region_ = (rg + 1) % L.num_regions();
      co_return res[0].alloc_base;
    }
  }
  co_return 0;
}

void Allocator::carve(u64 base, int cls) {
  const Layout& L = sim_.layout();
  owned_.push_back({L.region_of(base), L.block_of(base), cls});
  for (int i = 0; i < L.objects_per_block(cls); i++)
    free_[cls].push_back(base + u64(i) * L.class_size(cls));
}

Co<Allocator::Out> Allocator::alloc(u64 need) {
  int cls = sim_.cfg().class_of(need);
  if (cls < 0) {
    Out o;
    o.oom = true;
    co_return o;
  }
  co_return co_await alloc_class(cls);
}

Co<Allocator::Out> Allocator::alloc_class(int cls) {
  const Layout& L = sim_.layout();
  Out o;
  o.cls = cls;
  if (free_[cls].empty()) {
    u64 base = co_await grant_block(cls, &o.refill_rtts);
    if (base == 0) {
      o.oom = true;
      co_return o;
    }
    carve(base, cls);
    if (tail_[cls] != 0) {
      // The stranded tail was written with next = 0; point it at the refill
      // block's first object. Rides the caller's next phase.
      u64 target = entry_offset(tail_[cls], L.class_size(cls));
      int rg = L.region_of(tail_[cls]);
      for (NodeId n : L.place_region_alive(rg, sim_.view_alive())) {
        FabricOp w;
        w.kind = OpKind::WRITE;
        w.addr = {n, target};
        w.payload.resize(6);
        put_u48(w.payload.data(), base);
        w.epoch = sim_.epoch();
        o.carried.push_back(std::move(w));
      }
    }
  }
  o.off = free_[cls].front();
  free_[cls].pop_front();
  o.prev_tail = tail_[cls];
  o.next_head = free_[cls].empty() ? 0 : free_[cls].front();
  tail_[cls] = o.off;
  o.ok = true;
  co_return o;
}

Co<void> Allocator::remote_free(u64 off, int cls) {
  const Layout& L = sim_.layout();
  int rg = L.region_of(off), blk = L.block_of(off);
  u64 bit = 1ull << L.object_of(off, cls);
  for (NodeId n : L.place_region_alive(rg, sim_.view_alive())) {
    FabricOp op;
    op.kind = OpKind::FAA;
    op.addr = {n, L.bitmap_offset(rg, blk)};
    op.add = bit;
    op.epoch = sim_.epoch();
    std::vector<FabricOp> ops_op;
    ops_op.push_back(std::move(op));
    auto res = co_await sim_.phase(actor_, std::move(ops_op));
    if (!res[0].failed) co_return;
  }
  sim_.bump("free_dropped");
}

Co<int> Allocator::reclaim_scan() {
  const Layout& L = sim_.layout();
  struct Probe {
    size_t owned_idx;
    NodeId node;
  };
  std::vector<Probe> probes;
  std::vector<FabricOp> reads;
  for (size_t i = 0; i < owned_.size(); i++) {
    const auto& b = owned_[i];
    for (NodeId n : L.place_region_alive(b.region, sim_.view_alive())) {
      FabricOp rd;
      rd.kind = OpKind::READ;
      rd.addr = {n, L.bitmap_offset(b.region, b.block)};
      rd.len = 8;
      rd.epoch = sim_.epoch();
      reads.push_back(std::move(rd));
      probes.push_back({i, n});
    }
  }
  if (reads.empty()) co_return 0;
  auto rres = co_await sim_.phase(actor_, std::move(reads));

  // CAS each nonzero word to zero. A miss means a concurrent free landed;
  // the returned word is a fresh read, so retry against it. Bits only grow
  // until we clear them, so each wave shrinks the miss set.
  struct Attempt {
    size_t probe_idx;
    u64 expected;
  };
  std::vector<Attempt> wave;
  for (size_t k = 0; k < rres.size(); k++) {
    if (rres[k].failed) continue;
    u64 w = get_u64(rres[k].bytes.data());
    if (w != 0) wave.push_back({k, w});
  }
  std::map<size_t, u64> cleared;  // owned idx -> union of cleared bits
  while (!wave.empty()) {
    std::vector<FabricOp> cas;
    for (const auto& a : wave) {
      const auto& b = owned_[probes[a.probe_idx].owned_idx];
      FabricOp c;
      c.kind = OpKind::CAS;
      c.addr = {probes[a.probe_idx].node, L.bitmap_offset(b.region, b.block)};
      c.expected = a.expected;
      c.swap = 0;
      c.epoch = sim_.epoch();
      cas.push_back(std::move(c));
    }
    auto cres = co_await sim_.phase(actor_, std::move(cas));
    std::vector<Attempt> next;
    for (size_t k = 0; k < cres.size(); k++) {
      if (cres[k].failed) continue;  // replica died; bits stay for later
      if (cres[k].old_word == wave[k].expected) {
        size_t idx = probes[wave[k].probe_idx].owned_idx;
        if (cleared[idx] & wave[k].expected) sim_.bump("reclaim_dup_bit");
        cleared[idx] |= wave[k].expected;
      } else if (cres[k].old_word != 0) {
        next.push_back({wave[k].probe_idx, cres[k].old_word});
      }
    }
    wave = std::move(next);
  }

  int count = 0;
  for (auto& [idx, bits] : cleared) {
    const auto& b = owned_[idx];
    u64 base = L.block_base(b.region, b.block);
    for (int pos = 0; pos < L.objects_per_block(b.cls); pos++) {
      if (!(bits >> pos & 1)) continue;
      u64 off = base + u64(pos) * L.class_size(b.cls);
      // A rebuilt post-recovery list may already hold this object if its
      // free bit was still in flight when the master scanned; absorbing the
      // bit twice must not list it twice.
      auto& fl = free_[b.cls];
      if (std::find(fl.begin(), fl.end(), off) != fl.end()) {
        sim_.bump("reclaim_dup_entry");
        continue;
      }
      fl.push_back(off);
      count++;
    }
  }
  co_return count;
}

void Allocator::adopt(AllocRecovery rec) {
  free_ = std::move(rec.free_lists);
  tail_ = std::move(rec.tails);
  owned_ = std::move(rec.owned);
  free_.resize(sim_.layout().num_classes());
  tail_.resize(sim_.layout().num_classes(), 0);
  rr_region_ = 0;
}

u64 Allocator::free_count() const {
  u64 n = 0;
  for (const auto& l : free_) n += l.size();
  return n;
}

}  // namespace dmkv
