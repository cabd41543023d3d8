#pragma once

#include <string>
#include <vector>

#include "trace.h"

namespace dmkv {

struct LinIssue {
  std::string key;
  std::string detail;
};

// Result of checking one run's KV history. `dropped` counts completed
// ERROR/TABLE_FULL responses, which by contract left no trace in the index
// and therefore constrain nothing; `pending` counts ops whose client
// crashed before responding, which are free to take effect at any point
// after invocation — or never.
struct LinReport {
  bool ok = true;
  u64 keys = 0;
  u64 checked_ops = 0;
  u64 pending_ops = 0;
  u64 dropped_ops = 0;
  std::vector<LinIssue> issues;
  std::string summary() const;
};

// Checks the history for linearizability against the sequential map-entry
// semantics: SEARCH returns the current value or NOT_FOUND; INSERT creates
// (EXISTS if present); UPDATE overwrites (NOT_FOUND if absent); DELETE
// removes (NOT_FOUND if absent). Keys are independent entries, so the
// check decomposes per key; within a key it is a forward search over
// admissible orders, memoized on (placed-set, entry value), branching only
// among ops minimal in the real-time order.
LinReport check_linearizable(const std::vector<OpEvent>& ops);

// Exponential reference checker: enumerates admissible orders directly
// with no windowing and no memoization. Only for small histories; the
// tests use it to validate `check_linearizable` on fixtures where the
// answer is worked out by hand.
bool lin_brute(const std::vector<OpEvent>& ops);

}  // namespace dmkv
