#include "index.h"

namespace dmkv {

std::vector<u8> serialize_object(const std::string& key, const std::string& value,
                                 bool tombstone, const LogEntry& entry,
                                 u64 obj_size, bool log_enabled) {
  assert(kObjHeader + key.size() + value.size() + kEntrySize <= obj_size);
  std::vector<u8> out(obj_size, 0);
  put_u16(out.data(), u16(key.size()));
  put_u16(out.data() + 2, u16(value.size()));
  out[4] = tombstone ? kFlagTombstone : 0;
  out[5] = kv_crc(key, value);
  std::memcpy(out.data() + kObjHeader, key.data(), key.size());
  std::memcpy(out.data() + kObjHeader + key.size(), value.data(), value.size());
  if (log_enabled) entry.serialize(out.data() + obj_size - kEntrySize);
  return out;
}

std::optional<KvObject> parse_object(const std::vector<u8>& bytes) {
  if (bytes.size() < kObjHeader + kEntrySize) return std::nullopt;
  u16 klen = get_u16(bytes.data());
  u16 vlen = get_u16(bytes.data() + 2);
  if (kObjHeader + klen + vlen + kEntrySize > bytes.size()) return std::nullopt;
  if (klen == 0) return std::nullopt;
  KvObject o;
  o.key.assign(reinterpret_cast<const char*>(bytes.data() + kObjHeader), klen);
  o.value.assign(reinterpret_cast<const char*>(bytes.data() + kObjHeader + klen), vlen);
  o.invalid = (bytes[4] & kFlagInvalid) != 0;
  o.tombstone = (bytes[4] & kFlagTombstone) != 0;
  o.crc_ok = bytes[5] == kv_crc(o.key, o.value);
  o.entry = LogEntry::parse(bytes.data() + bytes.size() - kEntrySize);
  return o;
}

Route Cache::route(const std::string& key) {
  if (!enabled_) return Route::MISS;
  auto it = map_.find(key);
  if (it == map_.end()) return Route::MISS;
  CacheEntry& e = it->second.e;
  // Ratio from the counters as they stand, then count this access.
  double ratio = double(e.invalid) / double(e.access);
  e.access++;
  bump(key);
  return ratio > threshold_ ? Route::BYPASS : Route::HIT;
}

const CacheEntry* Cache::peek(const std::string& key) const {
  auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second.e;
}

void Cache::note_invalid(const std::string& key) {
  auto it = map_.find(key);
  if (it != map_.end()) it->second.e.invalid++;
}

void Cache::refresh(const std::string& key, int group, int slot, u64 word) {
  if (!enabled_) return;
  auto it = map_.find(key);
  if (it != map_.end()) {
    it->second.e.group = group;
    it->second.e.slot = slot;
    it->second.e.word = word;
    bump(key);
    return;
  }
  if (int(map_.size()) >= capacity_ && !lru_.empty()) {
    map_.erase(lru_.back());
    lru_.pop_back();
  }
  lru_.push_front(key);
  map_[key] = {lru_.begin(), CacheEntry{group, slot, word, 1, 0}};
}

void Cache::erase(const std::string& key) {
  auto it = map_.find(key);
  if (it == map_.end()) return;
  lru_.erase(it->second.it);
  map_.erase(it);
}

void Cache::clear() {
  lru_.clear();
  map_.clear();
}

void Cache::bump(const std::string& key) {
  auto it = map_.find(key);
  lru_.erase(it->second.it);
  lru_.push_front(key);
  it->second.it = lru_.begin();
}

}  // namespace dmkv
