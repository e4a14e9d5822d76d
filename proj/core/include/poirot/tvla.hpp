#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "poirot/leakage.hpp"
#include "poirot/mir.hpp"
#include "poirot/solver.hpp"
#include "poirot/symexec.hpp"

namespace poirot::tvla {

/// Two sets of full input assignments driving one record into two ω classes.
struct TestVectorSet {
  std::vector<Env> a;
  std::vector<Env> b;
  std::uint32_t address = 0;
  unsigned class_a = 0;
  unsigned class_b = 0;
  std::vector<std::string> warnings;
};

struct VectorConfig {
  unsigned count = 100;
  std::uint64_t seed = 1;
  /// Draw the public inputs at random (shared by A[i] and B[i]) instead of
  /// fixing them to the first witness.
  bool random_publics = false;
  /// Classes for sets A and B; the witnesses' classes when unset.
  std::optional<std::pair<unsigned, unsigned>> classes;
};

/// Samples `count` assignments per class by solving ω(dest) = c with random
/// bit hints and blocking, starting from the witnesses. Every vector is
/// re-evaluated; classes that run dry are padded by repetition with a warning.
TestVectorSet gen_test_vectors(const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                               const VectorConfig& cfg, const solver::SolverConfig& scfg);

enum class LeakMode { HammingWeight, HdTransition };

struct LeakModel {
  double alpha = 1.0;
  double offset = 0.0;
  double sigma = 1.0;
  LeakMode mode = LeakMode::HammingWeight;
  std::uint64_t seed = 1;
};

struct TraceSet {
  /// traces × points.
  std::vector<std::vector<double>> samples;
  /// Instruction address of each point.
  std::vector<std::uint32_t> addresses;
  std::uint64_t program_hash = 0;
  LeakModel model;

  std::size_t traces() const noexcept { return samples.size(); }
  std::size_t points() const noexcept { return addresses.size(); }
};

/// Per-instruction result of concrete execution.
struct ConcreteStep {
  std::uint32_t address = 0;
  unsigned width = 0;
  std::optional<std::uint64_t> value;
  /// Previous value of the destination register.
  std::optional<std::uint64_t> prev;
};

/// Straight-line interpreter over machine words. Unset inputs read as zero.
std::vector<ConcreteStep> execute(const mir::Function& f, const Env& inputs);

/// One trace per input. Trace k draws its noise from a generator seeded with
/// hash(model.seed, first_index + k), so any partition of the work agrees.
TraceSet simulate_traces(const mir::Function& f, const std::vector<Env>& inputs, const LeakModel& m,
                         std::uint64_t first_index = 0);

/// Welch's t per point. Equal constant columns give 0; unequal ones ±infinity.
std::vector<double> welch_t(const TraceSet& a, const TraceSet& b);

inline constexpr double kDefaultThreshold = 10.0;
inline constexpr double kConventionalThreshold = 4.5;

struct TvlaConfig {
  VectorConfig vectors;
  LeakModel model;
  double threshold = kDefaultThreshold;
};

struct TvlaResult {
  TestVectorSet vectors;
  TraceSet a;
  TraceSet b;
  std::vector<double> t;
  std::uint32_t poi_address = 0;
  /// |t| at the target point.
  double poi_t = 0.0;
  double threshold = kDefaultThreshold;
  bool leak = false;
  /// |t| ≥ 4.5 at the target point.
  bool leak_conventional = false;
};

/// Generates vectors for `poi`, simulates both sets and tests every point.
TvlaResult run_tvla(const mir::Function& f, const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                    const TvlaConfig& cfg, const solver::SolverConfig& scfg);

/// ω classes of the PoI reachable under the first witness's publics.
std::vector<unsigned> reachable_classes(const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                                        const solver::SolverConfig& scfg);

/// run_tvla for every pair of reachable classes (lower class in set A), in
/// lexicographic order. The max-Δω witness pair is one of them.
std::vector<TvlaResult> run_tvla_class_pairs(const mir::Function& f, const symexec::SymbolicState& state,
                                             const leakage::PoiRecord& poi, const TvlaConfig& cfg,
                                             const solver::SolverConfig& scfg);

/// Header row "trace,p<address>..." then one row per trace.
void write_csv(const TraceSet& t, std::ostream& os);

/// "PSCT", u32 version, u64 traces, u64 points, then f64 samples row-major,
/// all little-endian.
void write_binary(const TraceSet& t, std::ostream& os);

/// Samples only; addresses are numbered 0.. and metadata is left default.
TraceSet read_binary(std::istream& is);

}  // namespace poirot::tvla
