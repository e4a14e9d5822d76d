#include "poirot/report.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "poirot/error.hpp"

#ifndef POIROT_VERSION
#define POIROT_VERSION "0.0.0"
#endif

namespace poirot::report {

using json = nlohmann::ordered_json;
using leakage::PoiRecord;
using leakage::Reason;

const char* version() noexcept { return POIROT_VERSION; }

SolverInfo solver_info(const solver::SolverConfig& c) {
  return {c.backend == solver::Backend::BruteForce ? "brute-force" : "smt", c.timeout_seconds, c.oracle_cap};
}

Summary summarize(const Report& r) {
  Summary s;
  for (const auto& p : r.records) {
    ++s.records;
    if (p.vulnerable) ++s.flagged;
    if (p.status == solver::OptStatus::Suboptimal) ++s.suboptimal;
    if (p.status == solver::OptStatus::Timeout) ++s.timeout;
    if (p.status == solver::OptStatus::Unsat) ++s.unsat;
  }
  return s;
}

namespace {

std::string hex(std::uint64_t v, unsigned width) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%0*llx", static_cast<int>((width + 3) / 4), static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex(const std::string& s) {
  if (s.rfind("0x", 0) != 0) throw Error("expected a hex string, got '" + s + "'");
  return std::stoull(s.substr(2), nullptr, 16);
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

std::string fixed2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::optional<Reason> reason_from(const std::string& s) {
  for (Reason r : {Reason::ForcedMax, Reason::TwoClassDeterminer, Reason::DiscriminantUnsat, Reason::BlockedPairUnsat,
                   Reason::EntropyLow, Reason::Continuity}) {
    if (s == leakage::reason_name(r)) return r;
  }
  return std::nullopt;
}

solver::OptStatus status_from(const std::string& s) {
  for (auto st : {solver::OptStatus::Optimal, solver::OptStatus::Suboptimal, solver::OptStatus::Unsat,
                  solver::OptStatus::Timeout}) {
    if (s == solver::status_name(st)) return st;
  }
  throw Error("unknown status '" + s + "'");
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

json value_json(const BitVector& v) {
  return json{{"width", v.width()}, {"value", hex(v.value(), v.width())}, {"signed", v.signed_value()}};
}

BitVector value_from(const json& j) { return BitVector(j.at("width").get<unsigned>(), parse_hex(j.at("value"))); }

json witness_json(const leakage::Witness& w) {
  json inputs = json::object();
  for (const auto& [k, v] : w.inputs) inputs[k] = value_json(v);
  return json{{"inputs", inputs}, {"value", value_json(w.value)}};
}

leakage::Witness witness_from(const json& j) {
  leakage::Witness w{{}, value_from(j.at("value"))};
  for (const auto& [k, v] : j.at("inputs").items()) w.inputs.insert_or_assign(k, value_from(v));
  return w;
}

json reasons_json(const std::vector<Reason>& rs) {
  json a = json::array();
  for (Reason r : rs) a.push_back(leakage::reason_name(r));
  return a;
}

std::vector<Reason> reasons_from(const json& j) {
  std::vector<Reason> out;
  for (const auto& s : j) {
    auto r = reason_from(s.get<std::string>());
    if (!r) throw Error("unknown reason '" + s.get<std::string>() + "'");
    out.push_back(*r);
  }
  return out;
}

json metric_json(const leakage::MetricResult& m) {
  json j{{"max", opt(m.max)},
         {"min", opt(m.min)},
         {"status", solver::status_name(m.status)},
         {"flagged", m.flagged},
         {"reasons", reasons_json(m.reasons)},
         {"determiner", m.determiner},
         {"domain", m.domain ? json::array({value_json(m.domain->first), value_json(m.domain->second)}) : json(nullptr)},
         {"queries", m.queries}};
  return j;
}

void metric_from(const json& j, leakage::MetricResult& m) {
  m.max = opt_from<unsigned>(j.at("max"));
  m.min = opt_from<unsigned>(j.at("min"));
  m.status = status_from(j.at("status"));
  m.flagged = j.at("flagged");
  m.reasons = reasons_from(j.at("reasons"));
  m.determiner = j.at("determiner");
  if (!j.at("domain").is_null()) m.domain = std::make_pair(value_from(j["domain"][0]), value_from(j["domain"][1]));
  m.queries = j.at("queries");
}

json record_json(const PoiRecord& p) {
  json j;
  j["address"] = p.address;
  j["original_address"] = p.original_address;
  j["iterations"] = p.iterations;
  j["opcode"] = mir::opcode_name(p.opcode);
  j["dest"] = p.dest;
  j["width"] = p.width;
  j["line"] = p.line;
  j["expr"] = p.expr;
  j["dhw"] = p.dhw ? metric_json(*p.dhw) : json(nullptr);
  if (p.hd) {
    json h = metric_json(*p.hd);
    h["mode"] = p.hd->mode == leakage::HdMode::Value ? "value" : "transition";
    h["prev_fallback"] = p.hd->prev_fallback;
    j["hd"] = h;
  } else {
    j["hd"] = nullptr;
  }
  if (p.entropy) {
    j["entropy"] = json{{"value", round2(p.entropy->value)},
                        {"classes", p.entropy->classes},
                        {"unknown_classes", p.entropy->unknown_classes},
                        {"flagged", p.entropy->flagged},
                        {"queries", p.entropy->queries}};
  } else {
    j["entropy"] = nullptr;
  }
  j["vulnerable"] = p.vulnerable;
  j["reasons"] = reasons_json(p.reasons);
  j["witnesses"] = p.w1 && p.w2 ? json{{"w1", witness_json(*p.w1)}, {"w2", witness_json(*p.w2)}} : json(nullptr);
  j["status"] = solver::status_name(p.status);
  j["queries"] = p.queries;
  j["continuity_source"] = opt(p.continuity_source);
  j["notes"] = p.notes;
  return j;
}

PoiRecord record_from(const json& j) {
  PoiRecord p;
  p.address = j.at("address");
  p.original_address = j.at("original_address");
  p.iterations = j.at("iterations").get<std::vector<unsigned>>();
  const auto op = mir::opcode_from_name(j.at("opcode").get<std::string>());
  if (!op) throw Error("unknown opcode in report");
  p.opcode = *op;
  p.dest = j.at("dest");
  p.width = j.at("width");
  p.line = j.at("line");
  p.expr = j.at("expr");
  if (!j.at("dhw").is_null()) {
    p.dhw.emplace();
    metric_from(j["dhw"], *p.dhw);
  }
  if (!j.at("hd").is_null()) {
    p.hd.emplace();
    metric_from(j["hd"], *p.hd);
    p.hd->mode = j["hd"].at("mode") == "value" ? leakage::HdMode::Value : leakage::HdMode::Transition;
    p.hd->prev_fallback = j["hd"].at("prev_fallback");
  }
  if (!j.at("entropy").is_null()) {
    const json& e = j["entropy"];
    p.entropy.emplace();
    p.entropy->value = e.at("value");
    p.entropy->classes = e.at("classes").get<std::vector<unsigned>>();
    p.entropy->unknown_classes = e.at("unknown_classes").get<std::vector<unsigned>>();
    p.entropy->flagged = e.at("flagged");
    p.entropy->queries = e.at("queries");
  }
  p.vulnerable = j.at("vulnerable");
  p.reasons = reasons_from(j.at("reasons"));
  if (!j.at("witnesses").is_null()) {
    p.w1 = witness_from(j["witnesses"].at("w1"));
    p.w2 = witness_from(j["witnesses"].at("w2"));
  }
  p.status = status_from(j.at("status"));
  p.queries = j.at("queries");
  p.continuity_source = opt_from<std::uint32_t>(j.at("continuity_source"));
  p.notes = j.at("notes").get<std::vector<std::string>>();
  return p;
}

json models_json(const leakage::AnalysisConfig& a) {
  json m = json::array();
  if (a.dhw) m.push_back("dhw");
  if (a.hd_value) m.push_back("hd");
  if (a.hd_transition) m.push_back("hd-transition");
  if (a.entropy) m.push_back("entropy");
  return m;
}

// Text cell for a max/min pair.
std::string bounds(const leakage::MetricResult* m) {
  if (!m) return "-";
  if (!m->max && !m->min) return "none";
  auto s = [](const std::optional<unsigned>& v) { return v ? std::to_string(*v) : std::string("?"); };
  return s(m->max) + "/" + s(m->min);
}

}  // namespace

std::string render_json(const Report& r) {
  const Summary s = summarize(r);
  json j;
  j["tool"] = json{{"name", "poirot"}, {"version", r.version}};
  j["program"] = json{{"name", r.program.name},
                      {"hash", hex(r.program.hash, 64)},
                      {"unroll", json{{"default", r.program.unroll_default}, {"bounds", r.program.unroll_bounds}}}};
  j["config"] = json{{"models", models_json(r.analysis)},
                     {"nu", opt(r.analysis.nu)},
                     {"determiner_floor", r.analysis.determiner_floor},
                     {"entropy_threshold", r.analysis.entropy_threshold},
                     {"discriminant_bit", opt(r.analysis.discriminant_bit)},
                     {"continuity", r.analysis.continuity},
                     {"canonical_witnesses", r.analysis.canonical_witnesses},
                     {"backend", r.solver.backend},
                     {"timeout", r.solver.timeout_seconds},
                     {"oracle_cap", r.solver.oracle_cap}};
  json recs = json::array();
  for (const auto& p : r.records) recs.push_back(record_json(p));
  j["records"] = recs;
  j["summary"] = json{{"records", s.records},
                      {"flagged", s.flagged},
                      {"suboptimal", s.suboptimal},
                      {"timeout", s.timeout},
                      {"unsat", s.unsat}};
  return j.dump(2) + "\n";
}

Report parse_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Report r;
    r.version = j.at("tool").at("version");
    const json& p = j.at("program");
    r.program.name = p.at("name");
    r.program.hash = parse_hex(p.at("hash"));
    r.program.unroll_default = p.at("unroll").at("default");
    r.program.unroll_bounds = p.at("unroll").at("bounds").get<std::map<std::string, unsigned>>();
    const json& c = j.at("config");
    r.analysis.dhw = r.analysis.hd_value = r.analysis.hd_transition = r.analysis.entropy = false;
    for (const auto& m : c.at("models")) {
      if (m == "dhw") r.analysis.dhw = true;
      if (m == "hd") r.analysis.hd_value = true;
      if (m == "hd-transition") r.analysis.hd_transition = true;
      if (m == "entropy") r.analysis.entropy = true;
    }
    r.analysis.nu = opt_from<unsigned>(c.at("nu"));
    r.analysis.determiner_floor = c.at("determiner_floor");
    r.analysis.entropy_threshold = c.at("entropy_threshold");
    r.analysis.discriminant_bit = opt_from<unsigned>(c.at("discriminant_bit"));
    r.analysis.continuity = c.at("continuity");
    r.analysis.canonical_witnesses = c.at("canonical_witnesses");
    r.solver.backend = c.at("backend");
    r.solver.timeout_seconds = c.at("timeout");
    r.solver.oracle_cap = c.at("oracle_cap");
    for (const auto& rec : j.at("records")) r.records.push_back(record_from(rec));
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

std::string render_text(const Report& r) {
  std::ostringstream os;
  os << "; poirot " << r.version << "  " << r.program.name << "  " << hex(r.program.hash, 64) << "\n";
  os << ";  addr  opcode dest         dhw max/min   d max/min     H\n";
  char buf[256];
  for (const auto& p : r.records) {
    const std::string entropy = p.entropy ? fixed2(p.entropy->value) : "-";
    std::snprintf(buf, sizeof buf, "0x%04x  %-6s %-12s %-13s %-13s %-5s", p.address, mir::opcode_name(p.opcode),
                  p.dest.empty() ? "-" : p.dest.c_str(), bounds(p.dhw ? &*p.dhw : nullptr).c_str(),
                  bounds(p.hd ? &*p.hd : nullptr).c_str(), entropy.c_str());
    std::string line = buf;
    if (p.vulnerable) {
      line += "  vulnerable [";
      for (std::size_t i = 0; i < p.reasons.size(); ++i) line += (i ? ", " : "") + std::string(leakage::reason_name(p.reasons[i]));
      line += "]";
    }
    if (p.status == solver::OptStatus::Suboptimal || p.status == solver::OptStatus::Timeout) {
      line += std::string(" (") + solver::status_name(p.status) + ")";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  const Summary s = summarize(r);
  os << "; " << s.records << " records, " << s.flagged << " flagged, " << s.suboptimal << " suboptimal, " << s.timeout
     << " timeout\n";
  return os.str();
}

namespace {

json t_json(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return std::round(t * 1e6) / 1e6;
}

}  // namespace

namespace {

json tvla_json(const tvla::TvlaResult& t) {
  json points = json::array();
  for (std::size_t j = 0; j < t.t.size(); ++j) {
    points.push_back(json{{"address", t.a.addresses[j]},
                          {"t", t_json(t.t[j])},
                          {"leak", std::abs(t.t[j]) >= t.threshold}});
  }
  json j{{"poi", t.poi_address},
         {"classes", json::array({t.vectors.class_a, t.vectors.class_b})},
         {"traces_per_class", t.vectors.a.size()},
         {"model",
          json{{"alpha", t.a.model.alpha},
               {"offset", t.a.model.offset},
               {"sigma", t.a.model.sigma},
               {"mode", t.a.model.mode == tvla::LeakMode::HammingWeight ? "hw" : "hd-transition"},
               {"seed", t.a.model.seed}}},
         {"threshold", t.threshold},
         {"points", points},
         {"poi_t", t_json(t.poi_t)},
         {"leak", t.leak},
         {"leak_at_4_5", t.leak_conventional},
         {"warnings", t.vectors.warnings}};
  return j;
}

}  // namespace

std::string render_tvla_json(const tvla::TvlaResult& t) { return tvla_json(t).dump(2) + "\n"; }

std::string render_tvla_pairs_json(const std::vector<tvla::TvlaResult>& ts) {
  json all = json::array();
  for (const auto& t : ts) all.push_back(tvla_json(t));
  return all.dump(2) + "\n";
}

std::string render_tvla_pairs_text(const std::vector<tvla::TvlaResult>& ts) {
  std::ostringstream os;
  if (!ts.empty()) {
    char head[64];
    std::snprintf(head, sizeof head, "; poi 0x%04x, ", ts.front().poi_address);
    os << head << ts.size() << " class pairs, threshold " << ts.front().threshold << "\n";
  }
  std::size_t leaks = 0;
  for (const auto& t : ts) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%3u vs %-3u |t| = %10.3f", t.vectors.class_a, t.vectors.class_b, t.poi_t);
    os << buf << (t.leak ? "  leak" : "") << "\n";
    leaks += t.leak;
  }
  os << "; " << leaks << " of " << ts.size() << " pairs leak\n";
  return os.str();
}

std::string render_tvla_text(const tvla::TvlaResult& t) {
  std::ostringstream os;
  os << "; classes " << t.vectors.class_a << " vs " << t.vectors.class_b << ", " << t.vectors.a.size()
     << " traces each, threshold " << t.threshold << "\n";
  for (const auto& w : t.vectors.warnings) os << "; warning: " << w << "\n";
  char buf[96];
  for (std::size_t j = 0; j < t.t.size(); ++j) {
    std::snprintf(buf, sizeof buf, "0x%04x  t = %10.3f", t.a.addresses[j], t.t[j]);
    os << buf;
    if (std::abs(t.t[j]) >= t.threshold) os << "  leak";
    if (t.a.addresses[j] == t.poi_address) os << "  <- poi";
    os << "\n";
  }
  os << (t.leak ? "leak" : "no leak") << " at 0x";
  std::snprintf(buf, sizeof buf, "%04x", t.poi_address);
  os << buf << " (|t| = " << fixed2(t.poi_t) << ")\n";
  return os.str();
}

}  // namespace poirot::report
