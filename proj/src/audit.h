#pragma once

#include <string>
#include <vector>

#include "sim.h"

namespace dmkv {

struct AuditReport {
  bool ok = true;
  std::vector<std::string> violations;  // one-line witnesses
  u64 paths_exact = 0;    // responses whose RTT count was recomputed exactly
  u64 paths_bounded = 0;  // responses checked against the lower bound only
  u64 objects = 0;        // objects classified by the conservation audit
  u64 win_words = 0;      // acknowledged install words matched to the fabric
  u64 live_objects = 0;
  u64 free_listed = 0;
  u64 bit_pending = 0;
  u64 held_tails = 0;
  u64 recomputed_free = 0;  // dead unrestarted owners: free by re-derivation
  u64 lost_frees = 0;       // free bits stranded on crashed nodes
  std::string summary() const;
};

// Post-run invariant audit over the fabric's final bytes, the install log,
// the op trace, and the surviving allocator views.
//
//  - Effect existence: every acknowledged win word appears as a primary
//    index install at least as many times as it was claimed.
//  - Round-trip accounting: on paths free of master mediation, retries and
//    failures, the responded RTT count must equal 1 (the op's combined
//    first phase) + one per flagged phase + the winning rule's unflagged
//    cost (3/4/4); every other response must still cover its flags. Bare
//    replicated-slot rounds are held to read+2/3/3 (+1 for the primary
//    check read) whenever the run saw no master fail queries.
//  - Index integrity: every primary slot word names a parseable, CRC-clean,
//    non-invalidated, non-tombstone object whose key belongs to that group,
//    and no two primary words alias one object.
//  - Allocator conservation: every object of every granted block lands in
//    exactly one bucket per owner — indexed, on the owner's free list, free
//    bit pending, free bit stranded on a dead node, held chain tail — with
//    dead unrestarted owners' free set re-derived the way recovery derives
//    it. Bucket overlaps and unaccounted objects are violations.
//  - Fabric counters: no free bit was ever set twice.
AuditReport run_audits(const Sim& sim);

}  // namespace dmkv
