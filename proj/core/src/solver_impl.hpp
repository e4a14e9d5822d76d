#pragma once

#include <chrono>
#include <functional>
#include <memory>

#include "poirot/solver.hpp"

namespace poirot::solver::detail {

std::unique_ptr<Session> make_smt_session(const SolverConfig& cfg);
std::unique_ptr<Session> make_brute_force_session(const SolverConfig& cfg);

using Clock = std::chrono::steady_clock;

/// Exhaustive search over the free bits of `vars` under `assertions`.
/// `visit` receives each satisfying model together with the values of `extra`
/// and returns false to stop. Returns false when the deadline expired.
bool enumerate(const std::vector<Expr>& assertions, const std::vector<VarInfo>& vars, const std::vector<Expr>& extra,
               unsigned cap, std::optional<Clock::time_point> deadline,
               const std::function<bool(const Model&, const std::vector<std::uint64_t>&)>& visit);

}  // namespace poirot::solver::detail
