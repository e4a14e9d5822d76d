#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poirot/leakage.hpp"
#include "poirot/solver.hpp"
#include "poirot/tvla.hpp"

namespace poirot::report {

/// Library version string.
const char* version() noexcept;

struct ProgramInfo {
  std::string name;
  std::uint64_t hash = 0;
  unsigned unroll_default = 8;
  std::map<std::string, unsigned> unroll_bounds;
};

/// The parts of the solver configuration that can change results.
struct SolverInfo {
  std::string backend = "smt";
  double timeout_seconds = 60;
  unsigned oracle_cap = 20;
};

SolverInfo solver_info(const solver::SolverConfig& c);

struct Report {
  ProgramInfo program;
  leakage::AnalysisConfig analysis;
  SolverInfo solver;
  std::vector<leakage::PoiRecord> records;
  std::string version = report::version();
};

struct Summary {
  std::size_t records = 0;
  std::size_t flagged = 0;
  std::size_t suboptimal = 0;
  std::size_t timeout = 0;
  std::size_t unsat = 0;
};

Summary summarize(const Report& r);

/// Annotated listing, one line per analyzed instruction, then a summary line.
std::string render_text(const Report& r);

/// Pretty-printed JSON with a fixed key order. η̃ is rounded to two decimals.
std::string render_json(const Report& r);

/// Inverse of render_json up to η̃ rounding. Throws Error on malformed input.
Report parse_json(const std::string& text);

std::string render_tvla_text(const tvla::TvlaResult& t);
std::string render_tvla_json(const tvla::TvlaResult& t);

/// One line (text) or one array element (JSON) per class pair.
std::string render_tvla_pairs_text(const std::vector<tvla::TvlaResult>& ts);
std::string render_tvla_pairs_json(const std::vector<tvla::TvlaResult>& ts);

}  // namespace poirot::report
