#pragma once

#include <deque>
#include <vector>

#include "common.h"

namespace dmkv {

struct OwnedBlock {
  int region = 0;
  int block = 0;
  int cls = 0;
};

// Allocator state a restarted incarnation adopts from the master's
// recovery report: rebuilt free lists (allocation order), per-class chain
// tails, and the block set the crashed incarnation owned.
struct AllocRecovery {
  std::vector<std::deque<u64>> free_lists;
  std::vector<u64> tails;
  std::vector<OwnedBlock> owned;
};

}  // namespace dmkv
