#include "layout.h"

#include "checksum.h"

namespace dmkv {

namespace {
inline u64 align_up(u64 v, u64 a) { return (v + a - 1) / a * a; }
}  // namespace

Layout::Layout(const Config& cfg)
    : ring_(cfg.num_nodes, cfg.placement_salt),
      r_(cfg.r),
      num_groups_(cfg.num_groups),
      slots_per_group_(cfg.slots_per_group),
      num_regions_(cfg.num_regions),
      region_size_(cfg.region_size),
      block_size_(cfg.block_size),
      classes_(cfg.size_classes()),
      salt_(cfg.placement_salt) {
  blocks_per_region_ = int(region_size_ / block_size_);
  index_base_ = 64;
  index_size_ = u64(num_groups_) * slots_per_group_ * 8;
  table_base_ = index_base_ + index_size_;
  u64 table_size = u64(num_regions_) * blocks_per_region_ * 8;
  bitmap_base_ = table_base_ + table_size;
  u64 bitmap_size = table_size;
  registry_base_ = bitmap_base_ + bitmap_size;
  u64 registry_size = u64(cfg.num_clients) * classes_.size() * 8;
  data_base_ = align_up(registry_base_ + registry_size, block_size_);
  node_size_ = data_base_ + u64(num_regions_) * region_size_;
  assert(node_size_ < (1ull << 40));
}

std::vector<NodeId> Layout::place_region(int region) const {
  return ring_.lookup(salt_ ^ 0x4e610full ^ (u64(region) << 20), r_,
                      [](NodeId) { return true; });
}

std::vector<NodeId> Layout::place_region_alive(int region,
                                               const std::vector<bool>& alive) const {
  std::vector<NodeId> out;
  for (NodeId n : place_region(region))
    if (alive[n]) out.push_back(n);
  return out;
}

std::vector<NodeId> Layout::place_group(int group, const std::vector<bool>& alive) const {
  return ring_.lookup(salt_ ^ 0x62073ull ^ (u64(group) << 20), r_,
                      [&](NodeId n) { return alive[n]; });
}

u8 kv_crc(const std::string& key, const std::string& value) {
  std::vector<u8> buf;
  buf.reserve(4 + key.size() + value.size());
  buf.push_back(u8(key.size()));
  buf.push_back(u8(key.size() >> 8));
  buf.push_back(u8(value.size()));
  buf.push_back(u8(value.size() >> 8));
  buf.insert(buf.end(), key.begin(), key.end());
  buf.insert(buf.end(), value.begin(), value.end());
  return crc8(buf.data(), buf.size());
}

}  // namespace dmkv
