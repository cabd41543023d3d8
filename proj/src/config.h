#pragma once

#include <optional>
#include <string>
#include <vector>

#include "common.h"

namespace dmkv {

enum class TraceLevel : u8 { OFF, OPS, FULL };
enum class WorkloadKind : u8 { KV, SLOT };

// c0..c3 crash points of a write workflow: mid-KV-write, pre-commit,
// post-commit pre-primary-CAS, post-completion pre-background.
struct ClientCrash {
  ClientId cid;
  KvOp op;        // which op type triggers
  int nth;        // crash on the nth op of that type (1-based)
  int point;      // 0..3
  bool restart = false;
};

struct NodeCrash {
  NodeId node;
  Tick tick;
};

struct Config {
  u64 seed = 1;
  int num_nodes = 4;
  int num_clients = 2;
  int r = 3;

  // Index geometry.
  int num_groups = 16;
  int slots_per_group = 8;

  // Memory geometry.
  u64 region_size = 256 * 1024;
  u64 block_size = 4 * 1024;
  int num_regions = 4;

  // Workload.
  WorkloadKind workload = WorkloadKind::KV;
  int slot_writers = 2;           // workload=slot: concurrent bare writers
  int num_keys = 16;
  int ops_per_client = 100;
  std::string mix = "a";          // a|b|c|d
  double zipf_theta = 0.99;
  int value_size = 16;
  bool preload = true;
  bool verify = false;            // post-workload read-back of every key by client 1

  // Cache.
  bool cache_enabled = true;
  int cache_capacity = 128;
  double cache_threshold = 0.5;

  // Logging (criterion-7 control: off suppresses entry persistence but
  // keeps the phase structure; crash recovery unsupported when off).
  bool log_enabled = true;

  // Master / failure model.
  int lease_ticks = 10;
  int max_spin = 10000;
  int reclaim_interval = 64;      // requests between background scans; 0 = off

  TraceLevel trace = TraceLevel::OPS;
  bool exhaustive = false;
  bool por = true;                // sleep-set reduction in exhaustive mode

  std::vector<ClientCrash> client_crashes;
  std::vector<NodeCrash> node_crashes;

  u64 placement_salt = 0x5eedf00dd15ca55eull;

  // Derived.
  std::vector<u64> size_classes() const;  // powers of two, max(64, block/64)..block
  int class_of(u64 size) const;           // smallest class fitting size, -1 if none

  std::string to_text() const;             // canonical key=value form (one line per key)
  void validate() const;                   // throws ConfigError
};

struct ConfigError {
  std::string message;
};

// Strict parser: unknown keys, malformed values, or violated bounds raise
// ConfigError (CLI exit code 2). Blank lines and '#' comments are ignored.
Config parse_scenario(const std::string& text);

}  // namespace dmkv
