#include "trace.h"

#include <map>

namespace dmkv {

namespace {

std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

KvOp op_from(const std::string& s) {
  if (s == "search") return KvOp::SEARCH;
  if (s == "insert") return KvOp::INSERT;
  if (s == "update") return KvOp::UPDATE;
  if (s == "delete") return KvOp::DELETE;
  throw TraceParseError{"unknown op: " + s};
}

Status status_from(const std::string& s) {
  if (s == "ok") return Status::OK;
  if (s == "not_found") return Status::NOT_FOUND;
  if (s == "exists") return Status::EXISTS;
  if (s == "table_full") return Status::TABLE_FULL;
  if (s == "error") return Status::ERROR;
  throw TraceParseError{"unknown status: " + s};
}

}  // namespace

ParsedTrace parse_trace(const std::string& text) {
  ParsedTrace out;
  // Per-actor stack of open invocations; ops nest one-deep per actor.
  std::map<ActorId, size_t> open;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.empty()) continue;
    auto bad = [&](const std::string& why) {
      throw TraceParseError{"line " + std::to_string(lineno) + ": " + why};
    };
    if (line[0] == '#') {
      const std::string tag = "# scenario ";
      if (line.rfind(tag, 0) == 0) out.scenario_text = line.substr(tag.size());
      continue;
    }
    if (line[0] == 'E') continue;
    if (line[0] != 'T') bad("expected T/E/# line");
    auto t = tokens(line);
    // T <tick> <actor> inv|res <op> <key> ...
    if (t.size() < 6) bad("short T line");
    Tick tick = 0;
    ActorId actor = 0;
    try {
      tick = std::stoull(t[1]);
      actor = std::stoi(t[2]);
    } catch (...) {
      bad("bad tick/actor");
    }
    KvOp op = op_from(t[4]);
    const std::string& key = t[5];
    if (t[3] == "inv") {
      if (open.count(actor)) bad("actor has two open invocations");
      OpEvent e;
      e.actor = actor;
      e.op = op;
      e.key = key;
      e.inv_tick = tick;
      if (op == KvOp::INSERT || op == KvOp::UPDATE) {
        if (t.size() < 7) bad("inv missing value");
        e.arg = t[6];
      }
      open[actor] = out.ops.size();
      out.ops.push_back(e);
    } else if (t[3] == "res") {
      auto it = open.find(actor);
      if (it == open.end()) bad("response without invocation");
      OpEvent& e = out.ops[it->second];
      if (e.op != op || e.key != key) bad("response does not match open invocation");
      if (t.size() < 7) bad("short res line");
      e.completed = true;
      e.res_tick = tick;
      e.status = status_from(t[6]);
      size_t i = 7;
      if (e.op == KvOp::SEARCH && e.status == Status::OK) {
        if (t.size() < 8) bad("search ok without value");
        e.result = t[i++];
      }
      for (; i < t.size(); i++) {
        if (t[i].rfind("rtts=", 0) == 0) e.rtts = std::stoi(t[i].substr(5));
        else if (t[i].rfind("path=", 0) == 0) e.path = t[i].substr(5);
        else bad("unknown res field: " + t[i]);
      }
      open.erase(it);
    } else {
      bad("T line must be inv or res");
    }
  }
  return out;
}

}  // namespace dmkv
