#pragma once

#include <algorithm>
#include <string_view>

#include "common.h"

namespace dmkv {

// FNV-1a 64 with a splitmix-style finalizer for avalanche; bit-stable
// everywhere, which the deterministic placement and index addressing need.
inline u64 hash64(std::string_view s, u64 seed = 0x243f6a8885a308d3ull) {
  u64 h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

inline u64 mix64(u64 x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Consistent-hash ring with virtual nodes over the *initial* node set.
// lookup(key, r, alive) walks clockwise collecting the first r distinct
// nodes that pass the alive filter; with the all-alive filter this is the
// fixed initial placement.
class Ring {
 public:
  Ring() = default;
  Ring(int num_nodes, u64 salt, int vnodes = 16) {
    for (NodeId n = 0; n < num_nodes; n++)
      for (int v = 0; v < vnodes; v++)
        points_.push_back({mix64(salt ^ (u64(n) << 24) ^ u64(v)), n});
    std::sort(points_.begin(), points_.end());
  }

  template <typename AliveFn>
  std::vector<NodeId> lookup(u64 key, int r, AliveFn alive) const {
    std::vector<NodeId> out;
    if (points_.empty()) return out;
    size_t i = std::lower_bound(points_.begin(), points_.end(),
                                std::pair<u64, NodeId>{mix64(key), -1}) -
               points_.begin();
    for (size_t step = 0; step < points_.size() && int(out.size()) < r; step++) {
      NodeId n = points_[(i + step) % points_.size()].second;
      if (!alive(n)) continue;
      if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    }
    return out;
  }

 private:
  std::vector<std::pair<u64, NodeId>> points_;
};

}  // namespace dmkv
