#include "lincheck.h"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>

namespace dmkv {
namespace {

constexpr int kAbsent = -1;
constexpr Tick kNever = ~Tick(0);

// One op of a single key's history, values interned to small ints.
struct LOp {
  KvOp op = KvOp::SEARCH;
  int arg = kAbsent;     // interned INSERT/UPDATE argument
  int result = kAbsent;  // interned SEARCH result (OK responses only)
  Status status = Status::OK;
  bool completed = false;
  Tick inv = 0;
  Tick res = kNever;
  ActorId actor = 0;
  int actor_prev = -1;  // latest completed same-actor op before this one
};

struct KeyHistory {
  std::string key;
  std::vector<LOp> ops;  // sorted by invocation tick
  int completed = 0;
};

struct Prepared {
  std::vector<KeyHistory> keys;
  u64 checked = 0, pending = 0, dropped = 0;
};

// Sequential semantics of one op against the entry value (kAbsent or an
// interned value id). For completed ops the observed status/result must
// match; pending ops apply whatever effect the current state dictates.
struct Step {
  bool admissible = true;
  int next = kAbsent;
};

Step apply(const LOp& o, int val) {
  Step st;
  st.next = val;
  switch (o.op) {
    case KvOp::SEARCH:
      if (!o.completed) return st;
      if (o.status == Status::OK)
        st.admissible = (val != kAbsent && val == o.result);
      else if (o.status == Status::NOT_FOUND)
        st.admissible = (val == kAbsent);
      else
        st.admissible = false;
      return st;
    case KvOp::INSERT: {
      Status want = Status::EXISTS;
      if (val == kAbsent) {
        want = Status::OK;
        st.next = o.arg;
      }
      if (o.completed) st.admissible = (o.status == want);
      return st;
    }
    case KvOp::UPDATE: {
      Status want = Status::NOT_FOUND;
      if (val != kAbsent) {
        want = Status::OK;
        st.next = o.arg;
      }
      if (o.completed) st.admissible = (o.status == want);
      return st;
    }
    case KvOp::DELETE: {
      Status want = Status::NOT_FOUND;
      if (val != kAbsent) {
        want = Status::OK;
        st.next = kAbsent;
      }
      if (o.completed) st.admissible = (o.status == want);
      return st;
    }
  }
  st.admissible = false;
  return st;
}

Prepared prepare(const std::vector<OpEvent>& events) {
  Prepared p;
  std::map<std::string, size_t> kidx;
  std::map<std::string, std::map<std::string, int>> interns;
  for (const OpEvent& e : events) {
    // ERROR and TABLE_FULL responses guarantee no index effect: no-ops.
    if (e.completed &&
        (e.status == Status::ERROR || e.status == Status::TABLE_FULL)) {
      p.dropped++;
      continue;
    }
    // A search a client crashed inside has neither effect nor response.
    if (!e.completed && e.op == KvOp::SEARCH) {
      p.pending++;
      continue;
    }
    auto [it, fresh] = kidx.emplace(e.key, p.keys.size());
    if (fresh) {
      p.keys.emplace_back();
      p.keys.back().key = e.key;
    }
    KeyHistory& kh = p.keys[it->second];
    std::map<std::string, int>& in = interns[e.key];
    auto intern = [&in](const std::string& s) {
      return in.emplace(s, int(in.size())).first->second;
    };
    LOp o;
    o.op = e.op;
    o.actor = e.actor;
    o.inv = e.inv_tick;
    o.completed = e.completed;
    if (e.op == KvOp::INSERT || e.op == KvOp::UPDATE) o.arg = intern(e.arg);
    if (e.completed) {
      o.res = e.res_tick;
      o.status = e.status;
      if (e.op == KvOp::SEARCH && e.status == Status::OK)
        o.result = intern(e.result);
      kh.completed++;
    } else {
      p.pending++;
    }
    kh.ops.push_back(o);
    if (e.completed) p.checked++;
  }
  for (KeyHistory& kh : p.keys) {
    std::stable_sort(kh.ops.begin(), kh.ops.end(),
                     [](const LOp& a, const LOp& b) { return a.inv < b.inv; });
    // Program order within a client: consecutive ops can share a tick (the
    // next invocation needs no fabric phase first), so the real-time rule
    // alone would call them concurrent. Chain each op to the latest
    // completed same-actor predecessor. A pending op starts no chain: its
    // effect may be replayed by the master long after the client's
    // restarted incarnation has moved on.
    std::map<ActorId, int> last;
    for (int i = 0; i < int(kh.ops.size()); i++) {
      auto it = last.find(kh.ops[size_t(i)].actor);
      kh.ops[size_t(i)].actor_prev = (it == last.end()) ? -1 : it->second;
      if (kh.ops[size_t(i)].completed) last[kh.ops[size_t(i)].actor] = i;
    }
  }
  return p;
}

// --------------------------------------------------------------------------
// Reference checker: plain recursion over admissible orders.

bool brute_rec(const KeyHistory& kh, std::vector<char>& placed, int val,
               int placed_completed) {
  const int n = int(kh.ops.size());
  if (placed_completed == kh.completed) return true;
  for (int i = 0; i < n; i++) {
    if (placed[size_t(i)]) continue;
    const LOp& o = kh.ops[size_t(i)];
    if (o.actor_prev >= 0 && !placed[size_t(o.actor_prev)]) continue;
    bool minimal = true;
    for (int j = 0; j < n && minimal; j++)
      if (j != i && !placed[size_t(j)] && kh.ops[size_t(j)].completed &&
          kh.ops[size_t(j)].res < o.inv)
        minimal = false;
    if (!minimal) continue;
    Step st = apply(o, val);
    if (!st.admissible) continue;
    placed[size_t(i)] = 1;
    if (brute_rec(kh, placed, st.next,
                  placed_completed + (o.completed ? 1 : 0)))
      return true;
    placed[size_t(i)] = 0;
  }
  return false;
}

bool brute_key(const KeyHistory& kh) {
  std::vector<char> placed(kh.ops.size(), 0);
  return brute_rec(kh, placed, kAbsent, 0);
}

// --------------------------------------------------------------------------
// Fast checker: depth-first over the same order space, but branching only
// inside the concurrency window and memoizing visited (placed-set, value)
// states so distinct interleavings that converge are explored once.

struct Frame {
  std::vector<u64> mask;
  int val = kAbsent;
  int placed_completed = 0;
  std::vector<int> cands;
  size_t ci = 0;
};

bool mask_get(const std::vector<u64>& m, int i) {
  return (m[size_t(i) >> 6] >> (i & 63)) & 1;
}
void mask_set(std::vector<u64>& m, int i) { m[size_t(i) >> 6] |= u64(1) << (i & 63); }

std::string memo_key(const std::vector<u64>& m, int val) {
  std::string k(reinterpret_cast<const char*>(m.data()), m.size() * 8);
  k.append(reinterpret_cast<const char*>(&val), sizeof(val));
  return k;
}

// Ops minimal in the remaining real-time order: i qualifies unless some
// other unplaced completed j responded strictly before i invoked. With
// ops sorted by invocation, every candidate lies at or before the second
// lowest unplaced response tick, so the scan stops there.
std::vector<int> candidates(const KeyHistory& kh, const std::vector<u64>& m) {
  const int n = int(kh.ops.size());
  Tick min1 = kNever, min2 = kNever;
  int min1_at = -1;
  for (int j = 0; j < n; j++) {
    if (mask_get(m, j) || !kh.ops[size_t(j)].completed) continue;
    Tick r = kh.ops[size_t(j)].res;
    if (r < min1) {
      min2 = min1;
      min1 = r;
      min1_at = j;
    } else if (r < min2) {
      min2 = r;
    }
  }
  std::vector<int> out;
  for (int i = 0; i < n; i++) {
    const LOp& o = kh.ops[size_t(i)];
    if (o.inv > min2) break;  // sorted by inv; no later op can qualify
    if (mask_get(m, i)) continue;
    Tick bound = (i == min1_at) ? min2 : min1;
    if (o.inv > bound) continue;
    if (o.actor_prev >= 0 && !mask_get(m, o.actor_prev)) continue;
    out.push_back(i);
  }
  return out;
}

bool check_key(const KeyHistory& kh, std::string* detail) {
  const int n = int(kh.ops.size());
  if (n == 0) return true;
  const size_t words = (size_t(n) + 63) / 64;
  std::unordered_set<std::string> seen;
  std::vector<Frame> stack;
  Frame root;
  root.mask.assign(words, 0);
  root.cands = candidates(kh, root.mask);
  stack.push_back(std::move(root));
  seen.insert(memo_key(stack[0].mask, stack[0].val));
  int best = -1;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.placed_completed == kh.completed) return true;
    if (f.placed_completed > best) best = f.placed_completed;
    if (f.ci >= f.cands.size()) {
      stack.pop_back();
      continue;
    }
    int i = f.cands[f.ci++];
    const LOp& o = kh.ops[size_t(i)];
    Step st = apply(o, f.val);
    if (!st.admissible) continue;
    Frame next;
    next.mask = f.mask;
    mask_set(next.mask, i);
    next.val = st.next;
    next.placed_completed = f.placed_completed + (o.completed ? 1 : 0);
    if (!seen.insert(memo_key(next.mask, next.val)).second) continue;
    next.cands = candidates(kh, next.mask);
    stack.push_back(std::move(next));
  }
  if (detail) {
    std::ostringstream os;
    os << "no admissible order for " << n << " ops (" << kh.completed
       << " completed); longest admissible prefix places " << best
       << " completed ops";
    *detail = os.str();
  }
  return false;
}

}  // namespace

std::string LinReport::summary() const {
  std::ostringstream os;
  if (ok) {
    os << "lincheck OK: keys=" << keys << " ops=" << checked_ops
       << " pending=" << pending_ops << " noop=" << dropped_ops;
  } else {
    os << "lincheck FAIL:";
    for (const LinIssue& i : issues) os << " [" << i.key << "] " << i.detail;
  }
  return os.str();
}

LinReport check_linearizable(const std::vector<OpEvent>& ops) {
  Prepared p = prepare(ops);
  LinReport r;
  r.keys = p.keys.size();
  r.checked_ops = p.checked;
  r.pending_ops = p.pending;
  r.dropped_ops = p.dropped;
  for (const KeyHistory& kh : p.keys) {
    std::string detail;
    if (!check_key(kh, &detail)) {
      r.ok = false;
      r.issues.push_back(LinIssue{kh.key, detail});
    }
  }
  return r;
}

bool lin_brute(const std::vector<OpEvent>& ops) {
  Prepared p = prepare(ops);
  for (const KeyHistory& kh : p.keys)
    if (!brute_key(kh)) return false;
  return true;
}

}  // namespace dmkv
