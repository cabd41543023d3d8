#include "config.h"

#include <charconv>
#include <sstream>

namespace dmkv {

std::vector<u64> Config::size_classes() const {
  std::vector<u64> out;
  u64 lo = std::max<u64>(64, block_size / 64);  // one u64 bitmap word per block
  for (u64 c = lo; c <= block_size; c *= 2) out.push_back(c);
  return out;
}

int Config::class_of(u64 size) const {
  auto classes = size_classes();
  for (size_t i = 0; i < classes.size(); i++)
    if (size <= classes[i]) return int(i);
  return -1;
}

void Config::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError{m}; };
  if (num_nodes < 1 || num_nodes > 64) fail("nodes must be in 1..64");
  if (r < 1 || r > num_nodes) fail("r must be in 1..nodes");
  if (num_clients < 1 || num_clients > 64) fail("clients must be in 1..64");
  if (num_groups < 1 || num_groups > 4096) fail("groups must be in 1..4096");
  if (slots_per_group < 1 || slots_per_group > 32) fail("slots_per_group must be in 1..32");
  if (region_size % block_size != 0) fail("region size must be a multiple of block size");
  if ((block_size & (block_size - 1)) != 0 || block_size < 64) fail("block size must be a power of two >= 64");
  if ((region_size & (region_size - 1)) != 0) fail("region size must be a power of two");
  if (num_regions < 1 || num_regions > 1024) fail("regions must be in 1..1024");
  if (zipf_theta < 0 || zipf_theta >= 2) fail("zipf theta must be in [0,2)");
  if (value_size < 1 || value_size > 4000) fail("value_size must be in 1..4000");
  if (mix != "a" && mix != "b" && mix != "c" && mix != "d") fail("mix must be one of a,b,c,d");
  if (cache_threshold < 0 || cache_threshold > 1) fail("cache_threshold must be in [0,1]");
  if (lease_ticks < 1) fail("lease_ticks must be >= 1");
  if (num_keys < 1) fail("keys must be >= 1");
  if (workload == WorkloadKind::SLOT && (slot_writers < 1 || slot_writers > num_clients))
    fail("slot_writers must be in 1..clients");
  if (exhaustive && num_clients > 3) fail("exhaustive mode is bounded to clients <= 3");
  if (exhaustive && workload == WorkloadKind::KV && num_keys > 2)
    fail("exhaustive mode is bounded to keys <= 2");
  // Smallest object must fit header + key + value + 22-byte entry; checked
  // again per request, but catch hopeless configs early.
  if (class_of(8 + 1 + u64(value_size) + 22) < 0) fail("value_size exceeds largest size class");
  for (const auto& c : client_crashes) {
    if (c.cid < 1 || c.cid > num_clients) fail("crash_client: bad client id");
    if (c.point < 0 || c.point > 3) fail("crash_client: point must be c0..c3");
    if (c.nth < 1) fail("crash_client: occurrence must be >= 1");
    if (c.op == KvOp::SEARCH) fail("crash_client: crash points apply to write ops");
    if (!log_enabled) fail("crash_client requires log=1 (recovery needs the operation log)");
  }
  for (const auto& c : node_crashes)
    if (c.node < 0 || c.node >= num_nodes) fail("crash_node: bad node id");
}

std::string Config::to_text() const {
  std::ostringstream o;
  o << "seed=" << seed << ";nodes=" << num_nodes << ";clients=" << num_clients
    << ";r=" << r << ";groups=" << num_groups << ";slots_per_group=" << slots_per_group
    << ";region_size=" << region_size << ";block_size=" << block_size
    << ";regions=" << num_regions
    << ";workload=" << (workload == WorkloadKind::KV ? "kv" : "slot")
    << ";slot_writers=" << slot_writers << ";keys=" << num_keys
    << ";ops=" << ops_per_client << ";mix=" << mix << ";zipf=" << zipf_theta
    << ";value_size=" << value_size << ";preload=" << (preload ? 1 : 0)
    << ";verify=" << (verify ? 1 : 0)
    << ";cache=" << (cache_enabled ? 1 : 0) << ";cache_capacity=" << cache_capacity
    << ";cache_threshold=" << cache_threshold << ";log=" << (log_enabled ? 1 : 0)
    << ";lease_ticks=" << lease_ticks << ";max_spin=" << max_spin
    << ";reclaim_interval=" << reclaim_interval
    << ";trace=" << (trace == TraceLevel::FULL ? "full" : trace == TraceLevel::OPS ? "ops" : "off")
    << ";mode=" << (exhaustive ? "exhaustive" : "random") << ";por=" << (por ? 1 : 0);
  for (const auto& c : client_crashes)
    o << ";crash_client=" << c.cid << ":" << kvop_name(c.op) << ":" << c.nth
      << ":c" << c.point << (c.restart ? ":restart" : "");
  for (const auto& c : node_crashes) o << ";crash_node=" << c.node << ":" << c.tick;
  return o.str();
}

namespace {

u64 parse_u64(const std::string& k, const std::string& v) {
  u64 out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError{"bad integer for key '" + k + "': " + v};
  return out;
}

double parse_double(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw ConfigError{"bad number for key '" + k + "': " + v};
  }
}

bool parse_bool(const std::string& k, const std::string& v) {
  if (v == "1" || v == "on" || v == "true") return true;
  if (v == "0" || v == "off" || v == "false") return false;
  throw ConfigError{"bad boolean for key '" + k + "': " + v};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) { out.push_back(cur); cur.clear(); }
    else cur.push_back(c);
  }
  out.push_back(cur);
  return out;
}

KvOp parse_op(const std::string& s) {
  if (s == "insert") return KvOp::INSERT;
  if (s == "update") return KvOp::UPDATE;
  if (s == "delete") return KvOp::DELETE;
  if (s == "search") return KvOp::SEARCH;
  throw ConfigError{"bad op name: " + s};
}

}  // namespace

Config parse_scenario(const std::string& text) {
  Config cfg;
  std::string line;
  std::istringstream in(text);
  int lineno = 0;
  auto handle = [&](const std::string& key, const std::string& val) {
    if (key == "seed") cfg.seed = parse_u64(key, val);
    else if (key == "nodes") cfg.num_nodes = int(parse_u64(key, val));
    else if (key == "clients") cfg.num_clients = int(parse_u64(key, val));
    else if (key == "r") cfg.r = int(parse_u64(key, val));
    else if (key == "groups") cfg.num_groups = int(parse_u64(key, val));
    else if (key == "slots_per_group") cfg.slots_per_group = int(parse_u64(key, val));
    else if (key == "region_size") cfg.region_size = parse_u64(key, val);
    else if (key == "block_size") cfg.block_size = parse_u64(key, val);
    else if (key == "regions") cfg.num_regions = int(parse_u64(key, val));
    else if (key == "workload") {
      if (val == "kv") cfg.workload = WorkloadKind::KV;
      else if (val == "slot") cfg.workload = WorkloadKind::SLOT;
      else throw ConfigError{"workload must be kv or slot"};
    }
    else if (key == "slot_writers") cfg.slot_writers = int(parse_u64(key, val));
    else if (key == "keys") cfg.num_keys = int(parse_u64(key, val));
    else if (key == "ops") cfg.ops_per_client = int(parse_u64(key, val));
    else if (key == "mix") cfg.mix = val;
    else if (key == "zipf") cfg.zipf_theta = parse_double(key, val);
    else if (key == "value_size") cfg.value_size = int(parse_u64(key, val));
    else if (key == "preload") cfg.preload = parse_bool(key, val);
    else if (key == "verify") cfg.verify = parse_bool(key, val);
    else if (key == "cache") cfg.cache_enabled = parse_bool(key, val);
    else if (key == "cache_capacity") cfg.cache_capacity = int(parse_u64(key, val));
    else if (key == "cache_threshold") cfg.cache_threshold = parse_double(key, val);
    else if (key == "log") cfg.log_enabled = parse_bool(key, val);
    else if (key == "lease_ticks") cfg.lease_ticks = int(parse_u64(key, val));
    else if (key == "max_spin") cfg.max_spin = int(parse_u64(key, val));
    else if (key == "reclaim_interval") cfg.reclaim_interval = int(parse_u64(key, val));
    else if (key == "trace") {
      if (val == "full") cfg.trace = TraceLevel::FULL;
      else if (val == "ops") cfg.trace = TraceLevel::OPS;
      else if (val == "off") cfg.trace = TraceLevel::OFF;
      else throw ConfigError{"trace must be full, ops, or off"};
    }
    else if (key == "mode") {
      if (val == "exhaustive") cfg.exhaustive = true;
      else if (val == "random") cfg.exhaustive = false;
      else throw ConfigError{"mode must be random or exhaustive"};
    }
    else if (key == "por") cfg.por = parse_bool(key, val);
    else if (key == "crash_client") {
      auto parts = split(val, ':');
      if (parts.size() != 4 && parts.size() != 5)
        throw ConfigError{"crash_client wants cid:op:nth:cK[:restart]"};
      ClientCrash c;
      c.cid = int(parse_u64(key, parts[0]));
      c.op = parse_op(parts[1]);
      c.nth = int(parse_u64(key, parts[2]));
      if (parts[3].size() != 2 || parts[3][0] != 'c' || parts[3][1] < '0' || parts[3][1] > '3')
        throw ConfigError{"crash_client point must be c0..c3"};
      c.point = parts[3][1] - '0';
      if (parts.size() == 5) {
        if (parts[4] != "restart") throw ConfigError{"crash_client trailer must be restart"};
        c.restart = true;
      }
      cfg.client_crashes.push_back(c);
    }
    else if (key == "crash_node") {
      auto parts = split(val, ':');
      if (parts.size() != 2) throw ConfigError{"crash_node wants node:tick"};
      cfg.node_crashes.push_back({int(parse_u64(key, parts[0])), parse_u64(key, parts[1])});
    }
    else throw ConfigError{"unknown scenario key: " + key};
  };

  auto handle_line = [&](std::string l) {
    auto hash = l.find('#');
    if (hash != std::string::npos) l = l.substr(0, hash);
    while (!l.empty() && (l.back() == ' ' || l.back() == '\t' || l.back() == '\r')) l.pop_back();
    size_t start = l.find_first_not_of(" \t");
    if (start == std::string::npos) return;
    l = l.substr(start);
    // Allow ';'-joined pairs so a trace header's scenario line round-trips.
    for (const auto& kv : split(l, ';')) {
      if (kv.empty()) continue;
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError{"line " + std::to_string(lineno) + ": expected key=value, got '" + kv + "'"};
      handle(kv.substr(0, eq), kv.substr(eq + 1));
    }
  };

  while (std::getline(in, line)) {
    lineno++;
    handle_line(line);
  }
  cfg.validate();
  return cfg;
}

}  // namespace dmkv
