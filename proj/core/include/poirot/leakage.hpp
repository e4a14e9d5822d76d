#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poirot/expr.hpp"
#include "poirot/solver.hpp"
#include "poirot/symexec.hpp"

namespace poirot::leakage {

enum class Reason { ForcedMax, TwoClassDeterminer, DiscriminantUnsat, BlockedPairUnsat, EntropyLow, Continuity };

const char* reason_name(Reason r) noexcept;

enum class HdMode { Value, Transition };

struct AnalysisConfig {
  bool dhw = true;
  bool hd_value = false;
  bool hd_transition = false;
  bool entropy = false;
  /// Distinguishability threshold; defaults to the register width.
  std::optional<unsigned> nu;
  unsigned determiner_floor = 2;
  double entropy_threshold = 1.00;
  /// Bit the discriminant check requires to differ across every distinct
  /// pair; defaults to the MSB.
  std::optional<unsigned> discriminant_bit;
  bool continuity = true;
  /// Replace each witness's secrets by the smallest inputs giving the same value.
  bool canonical_witnesses = true;
  unsigned jobs = 1;
};

/// Two renamed copies of a record's expression. Every variable of the copy
/// carries the suffix "'"; publics are pinned equal across copies.
struct SelfComposedPair {
  Expr r;
  Expr r_prime;
  std::vector<Expr> pinning;
  Expr distinct;
  std::vector<VarInfo> secrets;
  std::vector<VarInfo> publics;

  solver::Formula formula() const;
};

/// Input assignment (unprimed names) and the resulting value.
struct Witness {
  Env inputs;
  BitVector value;
};

struct MetricResult {
  std::optional<unsigned> max;
  std::optional<unsigned> min;
  solver::OptStatus status = solver::OptStatus::Unsat;
  std::optional<Witness> w1;
  std::optional<Witness> w2;
  bool flagged = false;
  std::vector<Reason> reasons;
  std::vector<std::string> notes;
  unsigned queries = 0;
  /// Set when the blocked-pair check proved exactly these two values exist.
  std::optional<std::pair<BitVector, BitVector>> domain;
  bool determiner = false;
};

struct HdResult : MetricResult {
  HdMode mode = HdMode::Value;
  /// Transition mode with no previous value: distance to zero was used.
  bool prev_fallback = false;
};

struct EntropyResult {
  double value = 0.0;
  /// Satisfiable ω classes.
  std::vector<unsigned> classes;
  /// Classes whose probe timed out.
  std::vector<unsigned> unknown_classes;
  bool flagged = false;
  std::vector<std::string> notes;
  unsigned queries = 0;
};

struct PoiRecord {
  std::uint32_t address = 0;
  std::uint32_t original_address = 0;
  std::vector<unsigned> iterations;
  mir::Opcode opcode = mir::Opcode::Mov;
  std::string dest;
  unsigned width = 0;
  std::size_t line = 0;
  std::string expr;

  std::optional<MetricResult> dhw;
  std::optional<HdResult> hd;
  std::optional<EntropyResult> entropy;

  /// Representative witness pair (dhw first, then hd).
  std::optional<Witness> w1;
  std::optional<Witness> w2;
  bool vulnerable = false;
  std::vector<Reason> reasons;
  std::vector<std::string> notes;
  solver::OptStatus status = solver::OptStatus::Optimal;
  unsigned queries = 0;
  /// Address of the flagged record this one inherited its result from.
  std::optional<std::uint32_t> continuity_source;
};

SelfComposedPair self_compose(const symexec::StepRecord& rec);

/// Min/max search over the differential Hamming weight |ω(r) − ω(r′)|.
MetricResult analyze_dhw(const SelfComposedPair& pair, const AnalysisConfig& cfg, solver::Session& s);

/// Value mode: ω(r xor r′) over the pair.
HdResult analyze_hd(const SelfComposedPair& pair, const AnalysisConfig& cfg, solver::Session& s);

/// Transition mode: ω(new xor prev) over a single copy.
HdResult analyze_hd_transition(const symexec::StepRecord& rec, const AnalysisConfig& cfg, solver::Session& s);

/// Entropy over the satisfiable ω classes.
EntropyResult analyze_entropy(const symexec::StepRecord& rec, const AnalysisConfig& cfg, solver::Session& s);

/// Entropy of the normalized binomial priors of the given classes of F_n.
double class_entropy(unsigned n, const std::vector<unsigned>& classes);

/// Two values exactly, at least `floor` apart in Hamming weight.
bool detect_determiner(const MetricResult& m, unsigned floor = 2);

/// Proves, for the publics of `w`, whether `e` takes only the two values
/// {v1, v2}: true iff e ∉ {v1, v2} is unsatisfiable.
std::optional<bool> blocked_pair_unsat(const Expr& e, const Env& publics, const BitVector& v1, const BitVector& v2,
                                       solver::Session& s);

struct DomainProbe {
  std::vector<BitVector> values;
  /// True when the last probe was UNSAT, i.e. `values` is the whole domain.
  bool complete = false;
};

/// Enumerates up to `limit` distinct values of `e` by blocking each model.
DomainProbe probe_domain(const Expr& e, unsigned limit, solver::Session& s);

/// Every tainted arithmetic/logical record of `state`, analyzed per `cfg`, in address order.
std::vector<PoiRecord> analyze_trace(const symexec::SymbolicState& state, const AnalysisConfig& cfg,
                                     const solver::SolverConfig& scfg);

/// Full analysis of one record in a fresh session.
PoiRecord analyze_record(const symexec::StepRecord& rec, const AnalysisConfig& cfg, const solver::SolverConfig& scfg);

// ---------------------------------------------------------------------------
// Exhaustive reference, independent of the solver path.

struct OracleResult {
  /// Empty when no two distinct values exist under equal publics.
  std::optional<unsigned> dhw_max, dhw_min, hd_max, hd_min;
  std::optional<unsigned> transition_max, transition_min;
  std::vector<unsigned> classes;
  double entropy = 0.0;
};

/// Input bits the oracle charges against its cap: 2 × secret + public.
unsigned oracle_bits(const symexec::StepRecord& rec);

/// Enumerates each copy separately per public assignment. Throws
/// OracleInfeasibleError when oracle_bits exceeds `cap`.
OracleResult exhaustive_metrics(const symexec::StepRecord& rec, unsigned cap);

}  // namespace poirot::leakage
