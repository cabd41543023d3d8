#pragma once

#include <list>
#include <optional>
#include <string>
#include <unordered_map>

#include "hashing.h"
#include "layout.h"

namespace dmkv {

// Key -> index coordinates: group by hash mod capacity, fingerprint from
// the hash's low byte.
struct Locator {
  int group;
  u8 fp;
};
inline Locator locate(const std::string& key, int num_groups) {
  u64 h = hash64(key);
  return {int(h % u64(num_groups)), u8(h & 0xff)};
}

// Wire form of a KV object, minus the log entry (which LogEntry handles).
struct KvObject {
  std::string key;
  std::string value;
  bool invalid = false;
  bool tombstone = false;
  bool crc_ok = false;
  LogEntry entry;
};

// Object image for one write: header | key | value | pad | entry. The
// entry rides along unless logging is disabled, in which case its bytes
// stay zero (same size, same phases — content only).
std::vector<u8> serialize_object(const std::string& key, const std::string& value,
                                 bool tombstone, const LogEntry& entry,
                                 u64 obj_size, bool log_enabled);

// nullopt when the lengths don't fit the object: an unwritten or torn
// image. CRC mismatches parse fine with crc_ok = false so callers can
// distinguish torn from stale.
std::optional<KvObject> parse_object(const std::vector<u8>& bytes);

enum class Route : u8 { HIT, BYPASS, MISS };
inline const char* route_name(Route r) {
  switch (r) {
    case Route::HIT: return "hit";
    case Route::BYPASS: return "bypass";
    case Route::MISS: return "miss";
  }
  return "?";
}

struct CacheEntry {
  int group = 0;
  int slot = 0;
  u64 word = 0;  // cached slot word; ptr/class name the object
  u64 access = 1;
  u64 invalid = 0;
};

// Per-client LRU cache over index slots, with invalidation-ratio routing:
// entries whose invalid/access ratio exceeds the threshold are bypassed
// (their hits would mostly be stale) until enough clean reads dilute the
// ratio. route() counts the access; validation failures call note_invalid.
class Cache {
 public:
  Cache(int capacity, double threshold, bool enabled)
      : capacity_(capacity), threshold_(threshold), enabled_(enabled) {}

  Route route(const std::string& key);
  const CacheEntry* peek(const std::string& key) const;
  void note_invalid(const std::string& key);
  // Insert or update the mapping; never touches the counters of an
  // existing entry (ratio history survives refreshes).
  void refresh(const std::string& key, int group, int slot, u64 word);
  void erase(const std::string& key);
  void clear();
  size_t size() const { return map_.size(); }

 private:
  void bump(const std::string& key);  // LRU front

  int capacity_;
  double threshold_;
  bool enabled_;
  std::list<std::string> lru_;  // front = most recent
  struct Slot {
    std::list<std::string>::iterator it;
    CacheEntry e;
  };
  std::unordered_map<std::string, Slot> map_;
};

}  // namespace dmkv
