#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "poirot/solver.hpp"

namespace poirot::test {

inline std::optional<std::string> solver_path() {
  if (const char* env = std::getenv("POIROT_SOLVER"); env && *env) return std::string(env);
  const std::string built = POIROT_TEST_SOLVER;
  if (!built.empty() && std::filesystem::exists(built)) return built;
  return std::nullopt;
}

inline solver::SolverConfig smt_config() {
  solver::SolverConfig c;
  c.solver_path = solver_path().value_or("z3");
  c.timeout_seconds = 30;
  return c;
}

inline solver::SolverConfig brute_config(unsigned cap = 20) {
  solver::SolverConfig c;
  c.backend = solver::Backend::BruteForce;
  c.oracle_cap = cap;
  return c;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fixture(const std::string& name) { return read_file(std::string(POIROT_FIXTURES) + "/" + name); }

}  // namespace poirot::test

#define POIROT_REQUIRE_SOLVER()                                         \
  do {                                                                  \
    if (!::poirot::test::solver_path()) GTEST_SKIP() << "no SMT solver"; \
  } while (0)
