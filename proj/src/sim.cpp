#include "sim.h"

#include <sstream>

#include "client.h"
#include "json.hpp"
#include "master.h"

namespace dmkv {

Sim::Sim(const Config& cfg)
    : cfg_(cfg),
      layout_(cfg_),
      trace_(cfg_.trace),
      fab_(cfg_, layout_),
      sched_(fab_, trace_),
      choice_rng_(cfg_.seed ^ 0x5c4ed01eb00c5ull) {
  trace_.header(cfg_.to_text());
  view_alive_.assign(size_t(cfg_.num_nodes), true);
  size_t nc = size_t(cfg_.num_clients) + 1;  // indexed by cid, slot 0 unused
  client_alive_.assign(nc, true);
  declared_dead_.assign(nc, false);
  next_index_.assign(nc, 0);
  restart_req_.assign(nc, false);
  plans_.resize(nc);
  for (const ClientCrash& c : cfg_.client_crashes)
    if (c.cid >= 1 && c.cid <= cfg_.num_clients)
      plans_[size_t(c.cid)].push_back(c);
  preload_barrier_.remaining = cfg_.num_clients;
  work_barrier_.remaining = cfg_.num_clients;

  sched_.set_choice([this](const std::vector<ChoiceOption>& opts) {
    return size_t(choice_rng_.below(opts.size()));
  });
  sched_.set_rpc_sink(
      [this](ActorId from, const FabricOp& op, u64 phase, size_t idx) {
        if (op.rpc != RpcKind::FAIL_QUERY) {
          // Prepare acks and lease renewals are implicit in this model;
          // answer instantly so the phase completes.
          sched_.complete_rpc(phase, idx, 0);
          return;
        }
        if (from == kMaster) {
          // The master querying its own inbox would deadlock. A zero reply
          // reads as "round evaporated", so the redo that asked simply
          // drops its request — legal for an unresponded op.
          bump("master_self_query");
          sched_.complete_rpc(phase, idx, 0);
          return;
        }
        MasterMsg m;
        m.kind = MasterMsg::FAIL_QUERY;
        m.from = from;
        m.group = int(op.rpc_a);
        m.slot = int(op.rpc_b);
        m.v_old = op.rpc_c;
        m.phase = phase;
        m.idx = idx;
        inbox_.push(m);
      });
  wire_crash_timers();
}

// Out of line so unique_ptr sees the complete actor types.
Sim::~Sim() = default;

void Sim::wire_crash_timers() {
  for (const NodeCrash& nc : cfg_.node_crashes) {
    sched_.add_timer(nc.tick, [this, nc] {
      if (!fab_.node_alive(nc.node)) return;
      fab_.crash_node(nc.node);
      trace_.event(sched_.now(), kMaster, "crash", nc.node, 0, "node");
      MasterMsg m;
      m.kind = MasterMsg::MN_CRASHED;
      m.node = nc.node;
      inbox_.push(m);
    });
  }
}

bool Sim::all_acked() const {
  for (ClientId c = 1; c <= cfg_.num_clients; c++)
    if (!client_alive_[size_t(c)] && !declared_dead_[size_t(c)]) return false;
  return true;
}

void Sim::commit_change() {
  view_alive_ = fab_.alive();
  epoch_++;
  prepare_active_ = false;
  membership_cv_.notify_all();
}

void Sim::on_client_crashed(ClientId cid, int next_index, bool restart) {
  client_alive_[size_t(cid)] = false;
  next_index_[size_t(cid)] = next_index;
  restart_req_[size_t(cid)] = restart;
  trace_.event(sched_.now(), ActorId(cid), "crash", kMasterNode, 0,
               restart ? "client_restarting" : "client");
  if (!restart) {
    // This incarnation will never reach the workload barrier.
    work_barrier_.remaining--;
    if (work_barrier_.remaining <= 0) work_barrier_.cv.notify_all();
  }
  // A crashed client stops renewing its lease; expiry declares it dead,
  // releases any prepare waiting on its ack, and queues its recovery.
  sched_.add_timer(sched_.now() + Tick(cfg_.lease_ticks), [this, cid] {
    if (client_alive_[size_t(cid)] || declared_dead_[size_t(cid)]) return;
    declared_dead_[size_t(cid)] = true;
    bump("leases_expired");
    MasterMsg m;
    m.kind = MasterMsg::CLIENT_DEAD;
    m.cid = cid;
    inbox_.push(m);
    ack_cv_.notify_all();
  });
}

void Sim::restart_client(ClientId cid, AllocRecovery rec) {
  bump("client_restarts");
  client_alive_[size_t(cid)] = true;
  declared_dead_[size_t(cid)] = false;
  restart_req_[size_t(cid)] = false;
  trace_.event(sched_.now(), ActorId(cid), "restart", kMasterNode, 0,
               "client");
  clients_[size_t(cid) - 1] = std::make_unique<ClientActor>(
      *this, cid, next_index_[size_t(cid)],
      std::optional<AllocRecovery>(std::move(rec)));
  clients_[size_t(cid) - 1]->start();
}

const ClientActor* Sim::client(ClientId cid) const {
  if (cid < 1 || size_t(cid) > clients_.size()) return nullptr;
  return clients_[size_t(cid) - 1].get();
}

const std::vector<ClientCrash>& Sim::crash_plans(ClientId cid) const {
  static const std::vector<ClientCrash> kNone;
  if (cid < 1 || size_t(cid) >= plans_.size()) return kNone;
  return plans_[size_t(cid)];
}

bool Sim::run() {
  master_ = std::make_unique<MasterActor>(*this);
  for (ClientId c = 1; c <= cfg_.num_clients; c++)
    clients_.push_back(
        std::make_unique<ClientActor>(*this, c, 0, std::nullopt));
  master_->start();
  for (auto& c : clients_) c->start();
  while (sched_.step()) {
  }
  return !sched_.halted();
}

std::string Sim::stats_json() const {
  nlohmann::json j;
  j["ticks"] = sched_.now();
  j["ops_applied"] = sched_.ops_applied();
  static const char* kOpNames[] = {"read", "write", "cas",
                                   "faa",  "alloc", "rpc"};
  for (size_t i = 0; i < 6; i++)
    j["fabric"][kOpNames[i]] = sched_.op_counts()[i];
  j["fenced_attempts"] = fab_.fenced_attempts();
  j["failed_ops"] = fab_.failed_ops();
  j["double_set_bits"] = fab_.double_set_bits();
  j["epoch"] = epoch_;
  for (const auto& [k, v] : stats_) j["counters"][k] = v;
  static const char* kKvNames[] = {"search", "insert", "update", "delete"};
  for (size_t o = 0; o < 4; o++) {
    if (rtt_hist_[o].empty()) continue;
    nlohmann::json h;
    u64 total = 0, n = 0;
    for (const auto& [rtts, count] : rtt_hist_[o]) {
      h[std::to_string(rtts)] = count;
      total += u64(rtts) * count;
      n += count;
    }
    j["rtts"][kKvNames[o]]["hist"] = h;
    j["rtts"][kKvNames[o]]["mean"] = n ? double(total) / double(n) : 0.0;
  }
  return j.dump(2);
}

}  // namespace dmkv
