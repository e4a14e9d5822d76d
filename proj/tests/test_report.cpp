#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "poirot/error.hpp"
#include "poirot/report.hpp"
#include "test_support.hpp"

using namespace poirot;
using namespace poirot::report;

namespace {

solver::SolverConfig backend() { return test::solver_path() ? test::smt_config() : test::brute_config(24); }

Report analyze(const std::string& fixture, leakage::AnalysisConfig cfg) {
  const mir::Function f = mir::unroll(mir::parse(test::fixture(fixture)).functions.at(0));
  Report r;
  r.program.name = f.name;
  r.program.hash = mir::fnv1a(mir::render(f));
  r.analysis = cfg;
  r.solver = solver_info(backend());
  r.records = leakage::analyze_trace(symexec::run(f, mir::declared_taint(f)), cfg, backend());
  return r;
}

leakage::AnalysisConfig all_models() {
  leakage::AnalysisConfig c;
  c.hd_value = true;
  c.entropy = true;
  return c;
}

// A record built by hand so the text layout is checked without a solver.
leakage::PoiRecord hand_record() {
  leakage::PoiRecord p;
  p.address = 0x12;
  p.opcode = mir::Opcode::Asr;
  p.dest = "r1";
  p.width = 8;
  p.expr = "(x >>s 0x7)";
  leakage::MetricResult m;
  m.max = 8;
  m.min = 8;
  m.status = solver::OptStatus::Optimal;
  m.flagged = true;
  m.reasons = {leakage::Reason::ForcedMax};
  p.dhw = m;
  leakage::EntropyResult e;
  e.value = 1.0;
  e.classes = {0, 8};
  e.flagged = true;
  p.entropy = e;
  p.vulnerable = true;
  p.reasons = {leakage::Reason::ForcedMax, leakage::Reason::EntropyLow};
  p.w1 = leakage::Witness{{{"x", BitVector(8, 0)}}, BitVector(8, 0)};
  p.w2 = leakage::Witness{{{"x", BitVector(8, 0x80)}}, BitVector(8, 0xFF)};
  p.status = solver::OptStatus::Suboptimal;
  return p;
}

}  // namespace

TEST(Text, HandRecordLayout) {
  Report r;
  r.program.name = "f";
  r.program.hash = 0xABC;
  r.version = "9.9";
  r.records = {hand_record()};
  const std::string want =
      "; poirot 9.9  f  0x0000000000000abc\n"
      ";  addr  opcode dest         dhw max/min   d max/min     H\n"
      "0x0012  asr    r1           8/8           -             1.00   vulnerable [forced-max, entropy-low] "
      "(suboptimal)\n"
      "; 1 records, 1 flagged, 1 suboptimal, 0 timeout\n";
  EXPECT_EQ(render_text(r), want);
}

TEST(Json, HandRecordFields) {
  Report r;
  r.records = {hand_record()};
  const auto j = nlohmann::json::parse(render_json(r));
  const auto& rec = j["records"][0];
  EXPECT_EQ(rec["address"], 0x12);
  EXPECT_EQ(rec["opcode"], "asr");
  EXPECT_EQ(rec["dhw"]["max"], 8);
  EXPECT_EQ(rec["dhw"]["reasons"], nlohmann::json::array({"forced-max"}));
  EXPECT_TRUE(rec["hd"].is_null());
  EXPECT_EQ(rec["entropy"]["value"], 1.0);
  EXPECT_EQ(rec["witnesses"]["w2"]["value"]["value"], "0xff");
  EXPECT_EQ(rec["witnesses"]["w2"]["value"]["signed"], -1);
  EXPECT_EQ(rec["witnesses"]["w2"]["inputs"]["x"]["signed"], -128);
  EXPECT_EQ(rec["status"], "suboptimal");
  EXPECT_EQ(j["summary"]["flagged"], 1);
  EXPECT_EQ(j["summary"]["suboptimal"], 1);
  EXPECT_EQ(j["tool"]["name"], "poirot");
}

TEST(Json, EntropyIsRoundedToTwoDecimals) {
  Report r;
  auto p = hand_record();
  p.entropy->value = 2.5437;
  r.records = {p};
  EXPECT_EQ(nlohmann::json::parse(render_json(r))["records"][0]["entropy"]["value"], 2.54);
}

TEST(Json, RoundTripAndMalformedInput) {
  const Report r = analyze("cadd.mir", all_models());
  const std::string text = render_json(r);
  const Report back = parse_json(text);
  EXPECT_EQ(render_json(back), text);
  EXPECT_EQ(render_text(back), render_text(r));
  ASSERT_EQ(back.records.size(), 5U);
  EXPECT_EQ(back.records[1].w2->value.width(), 8U);

  EXPECT_THROW(parse_json("{"), Error);
  EXPECT_THROW(parse_json("{\"records\": 3}"), Error);
  auto j = nlohmann::json::parse(text);
  j["records"][0]["status"] = "maybe";
  EXPECT_THROW(parse_json(j.dump()), Error);
}

TEST(Summary, CountsCadd) {
  const Report r = analyze("cadd.mir", all_models());
  const Summary s = summarize(r);
  EXPECT_EQ(s.records, 5U);
  EXPECT_EQ(s.flagged, 2U);  // mask and its complement
  EXPECT_EQ(s.suboptimal, 0U);
  EXPECT_EQ(s.timeout, 0U);
}

TEST(Determinism, ByteIdenticalAcrossRunsAndJobs) {
  leakage::AnalysisConfig cfg = all_models();
  const std::string one = render_json(analyze("ctcmp.mir", cfg));
  EXPECT_EQ(render_json(analyze("ctcmp.mir", cfg)), one);
  cfg.jobs = 4;
  EXPECT_EQ(render_json(analyze("ctcmp.mir", cfg)), one);
}

TEST(Tvla, InfinityIsAString) {
  tvla::TvlaResult t;
  t.a.addresses = {0, 1};
  t.t = {std::numeric_limits<double>::infinity(), 1.23456789};
  t.threshold = 10;
  t.poi_t = t.t[0];
  t.leak = true;
  const auto j = nlohmann::json::parse(render_tvla_json(t));
  EXPECT_EQ(j["points"][0]["t"], "inf");
  EXPECT_EQ(j["points"][0]["leak"], true);
  EXPECT_DOUBLE_EQ(j["points"][1]["t"].get<double>(), 1.234568);
  EXPECT_EQ(j["poi_t"], "inf");
  EXPECT_NE(render_tvla_text(t).find("leak at 0x0000"), std::string::npos);
}
