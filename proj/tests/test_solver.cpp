#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "poirot/error.hpp"
#include "poirot/solver.hpp"
#include "random_expr.hpp"
#include "test_support.hpp"

using namespace poirot;
using namespace poirot::solver;

namespace {

Expr mask_of(const Expr& x) { return ashr(sub(x, Expr::constant(8, 64)), Expr::constant(8, 7)); }

// Self-composed cadd mask: r1 over x, r1' over x', r1 != r1'.
struct MaskPair {
  Expr x = Expr::var("x", 8, true);
  Expr xp = Expr::var("x'", 8, true);
  Expr r = mask_of(x);
  Expr rp = mask_of(xp);
  Formula formula() const { return Formula{{ne(r, rp)}}; }
  Objective dhw(Direction d) const {
    return Objective{encode_abs_diff(encode_popcount(r), encode_popcount(rp)), d, 0, 8};
  }
};

std::vector<SolverConfig> backends() {
  std::vector<SolverConfig> out{test::brute_config()};
  if (test::solver_path()) out.push_back(test::smt_config());
  return out;
}

}  // namespace

TEST(Popcount, Width) {
  EXPECT_EQ(popcount_width(1), 1U);
  EXPECT_EQ(popcount_width(8), 4U);
  EXPECT_EQ(popcount_width(16), 5U);
  EXPECT_EQ(popcount_width(32), 6U);
  EXPECT_EQ(popcount_width(64), 7U);
  EXPECT_EQ(encode_popcount(Expr::var("v", 8, false)).width(), 4U);
}

TEST(Popcount, Constants) {
  const Expr all = encode_popcount(Expr::constant(8, 0xFF));
  ASSERT_TRUE(all.is_const());
  EXPECT_EQ(all.value().value(), 8U);
  for (unsigned n : {1U, 7U, 8U, 33U, 64U}) EXPECT_TRUE(encode_popcount(Expr::constant(n, 0)).is_const(0));
  EXPECT_EQ(encode_popcount(Expr::constant(64, ~0ULL)).value().value(), 64U);
}

TEST(Popcount, ExhaustiveF8) {
  const Expr v = Expr::var("v", 8, false);
  const Expr p = encode_popcount(v);
  for (unsigned x = 0; x < 256; ++x) {
    ASSERT_EQ(eval(p, {{"v", BitVector(8, x)}}).value(), static_cast<unsigned>(std::popcount(x)));
  }
}

TEST(Popcount, CorruptionHook) {
  solver::testing::set_popcount_corruption(true);
  const Expr p = encode_popcount(Expr::var("v", 8, false));
  solver::testing::set_popcount_corruption(false);
  EXPECT_EQ(eval(p, {{"v", BitVector(8, 1)}}).value(), 0U);
  EXPECT_FALSE(solver::testing::popcount_corruption());
}

TEST(AbsDiff, Exhaustive) {
  const Expr a = Expr::var("a", 4, false);
  const Expr b = Expr::var("b", 4, false);
  const Expr d = encode_abs_diff(a, b);
  EXPECT_EQ(d.width(), 5U);
  for (unsigned x = 0; x < 16; ++x) {
    for (unsigned y = 0; y < 16; ++y) {
      const Env env{{"a", BitVector(4, x)}, {"b", BitVector(4, y)}};
      ASSERT_EQ(eval(d, env).value(), static_cast<unsigned>(std::abs(static_cast<int>(x) - static_cast<int>(y))));
    }
  }
}

TEST(CheckSat, Basics) {
  for (const auto& cfg : backends()) {
    const Expr x = Expr::var("x", 8, false);
    const auto sat = check_sat(Formula{{eq(x, Expr::constant(8, 5))}}, cfg);
    ASSERT_EQ(sat.status, SatStatus::Sat);
    EXPECT_EQ(sat.model.at("x"), BitVector(8, 5));
    EXPECT_EQ(check_sat(Formula{{Expr::make(Op::Not, {Expr::make(Op::Eq, {x, x})})}}, cfg).status, SatStatus::Unsat);
  }
}

TEST(CheckSat, MaskHasNoClassThree) {
  MaskPair m;
  for (const auto& cfg : backends()) {
    Formula f = m.formula();
    f.assertions.push_back(eq(encode_popcount(m.r), Expr::constant(4, 3)));
    EXPECT_EQ(check_sat(f, cfg).status, SatStatus::Unsat);
  }
}

TEST(Session, PushPopAndDeclare) {
  for (const auto& cfg : backends()) {
    auto s = open_session(cfg);
    const Expr x = Expr::var("x", 4, false);
    const Expr y = Expr::var("y", 4, false);
    s->add(ult(x, Expr::constant(4, 3)));
    s->push();
    s->add(eq(x, Expr::constant(4, 9)));
    EXPECT_EQ(s->check().status, SatStatus::Unsat);
    s->pop();
    s->declare(y);
    const auto r = s->check();
    ASSERT_EQ(r.status, SatStatus::Sat);
    EXPECT_LT(r.model.at("x").value(), 3U);
    EXPECT_EQ(r.model.count("y"), 1U);
    s->push();
    const Expr z = Expr::var("z", 6, true);
    s->add(eq(z, Expr::constant(6, 33)));
    EXPECT_EQ(s->check().model.at("z").value(), 33U);
    s->pop();
    // z was declared inside the popped frame and may be declared again.
    s->push();
    s->add(eq(z, Expr::constant(6, 34)));
    EXPECT_EQ(s->check().model.at("z").value(), 34U);
    s->pop();
    EXPECT_THROW(s->pop(), SolverError);
    EXPECT_THROW(s->add(x), TypeError);
    EXPECT_EQ(s->check_count(), 4U);
  }
}

TEST(Optimize, MaskPair) {
  MaskPair m;
  for (const auto& cfg : backends()) {
    const auto hi = optimize(m.formula(), m.dhw(Direction::Maximize), cfg);
    ASSERT_EQ(hi.status, OptStatus::Optimal);
    EXPECT_EQ(*hi.value, 8U);
    const auto lo = optimize(m.formula(), m.dhw(Direction::Minimize), cfg);
    ASSERT_EQ(lo.status, OptStatus::Optimal);
    EXPECT_EQ(*lo.value, 8U);
    const Model& w = *lo.model;
    EXPECT_EQ(diff_hw(eval(m.r, w), eval(m.rp, w)), 8U);
    EXPECT_LE(lo.checks, 1U + static_cast<unsigned>(std::ceil(std::log2(9.0))));
  }
}

TEST(Optimize, Unsat) {
  const Expr x = Expr::var("x", 8, false);
  Formula f{{ne(x, x)}};
  f.assertions[0] = Expr::make(Op::Not, {Expr::make(Op::Eq, {x, x})});
  for (const auto& cfg : backends()) {
    const auto r = optimize(f, Objective{encode_popcount(x), Direction::Maximize, 0, 8}, cfg);
    EXPECT_EQ(r.status, OptStatus::Unsat);
    EXPECT_FALSE(r.value);
    EXPECT_FALSE(r.model);
  }
}

TEST(Optimize, ObjectiveVarsOutsideFormula) {
  const Expr x = Expr::var("x", 1, false);
  for (const auto& cfg : backends()) {
    const auto r = optimize(Formula{}, Objective{encode_popcount(x), Direction::Maximize, 0, 1}, cfg);
    EXPECT_EQ(*r.value, 1U);
    EXPECT_EQ(r.model->at("x").value(), 1U);
  }
}

TEST(Optimize, CheckCountBound) {
  const Expr x = Expr::var("x", 16, false);
  for (const auto& cfg : backends()) {
    for (std::uint64_t target : {0ULL, 1ULL, 7ULL, 15ULL, 16ULL}) {
      auto s = open_session(cfg);
      s->add(ule(encode_popcount(x), Expr::constant(5, target)));
      const auto r = optimize(*s, Objective{encode_popcount(x), Direction::Maximize, 0, 16});
      EXPECT_EQ(*r.value, target);
      EXPECT_LE(r.checks, 1U + static_cast<unsigned>(std::ceil(std::log2(17.0))));
    }
  }
}

TEST(Optimize, TimeoutKeepsBestBound) {
  // Only x in {0..3} or x = all-ones; the brute-force walk reaches all-ones too late.
  const Expr x = Expr::var("x", 32, false);
  SolverConfig cfg = test::brute_config(40);
  cfg.timeout_seconds = 0.05;
  Formula f{{bit_or(ule(x, Expr::constant(32, 3)), eq(x, Expr::constant(32, 0xFFFFFFFF)))}};
  const auto r = optimize(f, Objective{encode_popcount(x), Direction::Maximize, 0, 32}, cfg);
  EXPECT_EQ(r.status, OptStatus::Suboptimal);
  EXPECT_EQ(*r.value, 0U);

  Formula g{{eq(x, Expr::constant(32, 0xFFFFFFFF))}};
  EXPECT_EQ(optimize(g, Objective{encode_popcount(x), Direction::Maximize, 0, 32}, cfg).status, OptStatus::Timeout);
}

TEST(BruteForce, Basics) {
  const Expr x = Expr::var("x", 1, false);
  const auto r = brute_force_opt(Formula{}, Objective{encode_popcount(x), Direction::Maximize, 0, 1});
  EXPECT_EQ(r.status, OptStatus::Optimal);
  EXPECT_EQ(*r.value, 1U);

  MaskPair m;
  EXPECT_EQ(*brute_force_opt(m.formula(), m.dhw(Direction::Maximize)).value, 8U);
  EXPECT_EQ(*brute_force_opt(m.formula(), m.dhw(Direction::Minimize)).value, 8U);
  EXPECT_EQ(brute_force_opt(Formula{{Expr::constant(1, 0)}}, m.dhw(Direction::Minimize)).status, OptStatus::Unsat);
}

TEST(BruteForce, Cap) {
  const Expr a = Expr::var("a", 16, true);
  const Expr b = Expr::var("a'", 16, true);
  const Expr r = sign_ext(extract(a, 15, 15), 31);
  const Expr rp = sign_ext(extract(b, 15, 15), 31);
  const Objective o{encode_abs_diff(encode_popcount(r), encode_popcount(rp)), Direction::Maximize, 0, 32};
  try {
    brute_force_opt(Formula{{ne(r, rp)}}, o);
    FAIL();
  } catch (const OracleInfeasibleError& e) {
    EXPECT_EQ(e.bits(), 32U);
    EXPECT_EQ(e.cap(), 20U);
  }
  // Narrower copy of the same shape fits under the default cap.
  const Expr c = Expr::var("c", 8, true);
  const Expr cp = Expr::var("c'", 8, true);
  const Expr q = sign_ext(extract(c, 7, 7), 31);
  const Expr qp = sign_ext(extract(cp, 7, 7), 31);
  const Objective oq{encode_abs_diff(encode_popcount(q), encode_popcount(qp)), Direction::Minimize, 0, 32};
  EXPECT_EQ(*brute_force_opt(Formula{{ne(q, qp)}}, oq).value, 32U);
}

TEST(BruteForce, PinnedPublicsCountOnce) {
  const Expr p = Expr::var("p", 12, false);
  const Expr pp = Expr::var("p'", 12, false);
  const Expr s = Expr::var("s", 4, true);
  const Expr sp = Expr::var("s'", 4, true);
  Formula f{{eq(p, pp), ne(bit_xor(zero_ext(s, 8), p), bit_xor(zero_ext(sp, 8), pp))}};
  const auto r = brute_force_opt(f, Objective{encode_popcount(bit_xor(s, sp)), Direction::Maximize, 0, 4}, 20);
  EXPECT_EQ(*r.value, 4U);
  EXPECT_EQ(r.model->at("p"), r.model->at("p'"));
}

TEST(SmtLib, Emission) {
  const Expr x = Expr::var("x", 8, true);
  const Expr shared = sub(x, Expr::constant(8, 64));
  const Expr e = bit_and(shared, bit_not(shared));
  const std::string s = to_smtlib(e);
  EXPECT_NE(s.find("(let ((?t0 (bvsub |x| (_ bv64 8))))"), std::string::npos) << s;
  const std::string script = to_smtlib_script(Formula{{eq(e, Expr::constant(8, 0))}});
  EXPECT_NE(script.find("(declare-const |x| (_ BitVec 8))"), std::string::npos);
  EXPECT_NE(script.find("(check-sat)"), std::string::npos);
}

TEST(Smt, MissingSolverBinary) {
  SolverConfig cfg;
  cfg.solver_path = "/nonexistent/solver-binary";
  EXPECT_THROW(check_sat(Formula{}, cfg), SolverError);
}

TEST(Smt, OneShotMode) {
  POIROT_REQUIRE_SOLVER();
  SolverConfig cfg = test::smt_config();
  cfg.incremental = false;
  MaskPair m;
  auto s = open_session(cfg);
  s->add(m.formula().assertions[0]);
  s->push();
  s->add(eq(m.r, Expr::constant(8, 0)));
  const auto r = s->check();
  ASSERT_EQ(r.status, SatStatus::Sat);
  EXPECT_EQ(eval(m.rp, r.model).value(), 0xFFU);
  s->pop();
  EXPECT_EQ(optimize(*s, m.dhw(Direction::Minimize)).value, 8U);
}

TEST(OracleAgreement, RandomFormulas) {
  POIROT_REQUIRE_SOLVER();
  const SolverConfig smt = test::smt_config();
  auto session = open_session(smt);
  unsigned agreed = 0;
  for (unsigned seed = 0; seed < 220; ++seed) {
    const unsigned wa = 1 + seed % 6;
    const unsigned wb = 12 - wa - (seed % 3);
    const Expr a = Expr::var("a", wa, true);
    const Expr b = Expr::var("b", wb, false);
    const unsigned w = 1 + seed % 10;
    test::ExprGen gen(seed, {a, b});
    const Expr target = gen.make(4, w);
    const Expr c1 = gen.make(3, w);
    const Expr c2 = gen.make(3, w);
    Formula f{{gen.pick(4) == 0 ? ule(c1, c2) : ne(c1, c2)}};
    const Direction dir = seed % 2 ? Direction::Maximize : Direction::Minimize;
    const Objective obj{encode_popcount(target), dir, 0, w};

    const OptResult oracle = brute_force_opt(f, obj, 20);
    session->push();
    for (const auto& x : f.assertions) session->add(x);
    const OptResult got = optimize(*session, obj);
    session->pop();
    ASSERT_EQ(got.status == OptStatus::Unsat, oracle.status == OptStatus::Unsat) << seed;
    ASSERT_EQ(got.value, oracle.value) << "seed " << seed << " " << to_string(target);
    if (got.model) ASSERT_EQ(eval(obj.expr, *got.model).value(), *got.value);
    ++agreed;
  }
  EXPECT_GE(agreed, 200U);
}
