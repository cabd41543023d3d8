#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "common.h"
#include "config.h"

namespace dmkv {

// One KV invocation/response pair (response absent = pending, e.g. the op a
// client crashed inside). Feeds the linearizability checker and the audits.
struct OpEvent {
  ActorId actor = 0;
  KvOp op = KvOp::SEARCH;
  std::string key;
  std::string arg;           // value argument for insert/update
  Tick inv_tick = 0;
  bool completed = false;
  Tick res_tick = 0;
  Status status = Status::ERROR;
  std::string result;        // search result value
  int rtts = 0;
  std::string path;          // comma-joined path flags, e.g. "win,r1,hit"
};

// Trace: '#' header lines, then 'E' fabric/system events (trace=full only)
// and 'T' op invoke/respond lines. Text is append-only and byte-stable for
// a given (scenario, seed).
class Trace {
 public:
  explicit Trace(TraceLevel level = TraceLevel::OPS) : level_(level) {}

  void header(const std::string& scenario_text) {
    text_ += "# scenario ";
    text_ += scenario_text;
    text_ += '\n';
  }

  void event(Tick tick, ActorId actor, const std::string& kind, NodeId node,
             u64 offset, const std::string& outcome) {
    if (level_ != TraceLevel::FULL) return;
    std::ostringstream o;
    o << "E " << tick << ' ' << actor << ' ' << kind << ' ';
    if (node == kMasterNode) o << "M";
    else o << node;
    o << ' ' << offset << ' ' << outcome << '\n';
    text_ += o.str();
  }

  // Returns the op index used to later close the event.
  size_t invoke(Tick tick, ActorId actor, KvOp op, const std::string& key,
                const std::string& arg) {
    OpEvent e;
    e.actor = actor;
    e.op = op;
    e.key = key;
    e.arg = arg;
    e.inv_tick = tick;
    ops_.push_back(e);
    if (level_ != TraceLevel::OFF) {
      std::ostringstream o;
      o << "T " << tick << ' ' << actor << " inv " << kvop_name(op) << ' ' << key;
      if (op == KvOp::INSERT || op == KvOp::UPDATE) o << ' ' << arg;
      o << '\n';
      text_ += o.str();
    }
    return ops_.size() - 1;
  }

  void respond(size_t idx, Tick tick, Status status, const std::string& result,
               int rtts, const std::string& path) {
    OpEvent& e = ops_[idx];
    e.completed = true;
    e.res_tick = tick;
    e.status = status;
    e.result = result;
    e.rtts = rtts;
    e.path = path;
    if (level_ != TraceLevel::OFF) {
      std::ostringstream o;
      o << "T " << tick << ' ' << e.actor << " res " << kvop_name(e.op) << ' '
        << e.key << ' ' << status_name(status);
      if (e.op == KvOp::SEARCH && status == Status::OK) o << ' ' << result;
      o << " rtts=" << rtts << " path=" << path << '\n';
      text_ += o.str();
    }
  }

  const std::string& text() const { return text_; }
  const std::vector<OpEvent>& ops() const { return ops_; }
  TraceLevel level() const { return level_; }

 private:
  TraceLevel level_;
  std::string text_;
  std::vector<OpEvent> ops_;
};

struct ParsedTrace {
  std::string scenario_text;  // from the '# scenario ' header, may be empty
  std::vector<OpEvent> ops;
};

struct TraceParseError {
  std::string message;
};

// Parses T lines (and the scenario header) back into OpEvents; E lines are
// skipped. Throws TraceParseError on malformed input.
ParsedTrace parse_trace(const std::string& text);

}  // namespace dmkv
