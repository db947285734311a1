#include <gtest/gtest.h>

#include <fstream>

#include "fairprice/case_io.hpp"
#include "fairprice/three_area.hpp"
#include "test_util.hpp"

using namespace fairprice;

namespace {

const char* kMinimal = R"(function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 0 1 1.1 0.9;
  2 1 80 0 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 0 0 1 100 1 200 10 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
  1 2 0 0.2 0 150 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.02 15 0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

}  // namespace

TEST(Matpower, MinimalTwoBusHandValues) {
  const auto c = parse_matpower(kMinimal, "tiny");
  ASSERT_EQ(c.n_bus(), 2);
  EXPECT_EQ(c.ref_bus, 0);
  EXPECT_DOUBLE_EQ(c.load[1], 80);
  EXPECT_DOUBLE_EQ(c.gen_min[0], 10);
  EXPECT_DOUBLE_EQ(c.gen_max[0], 200);
  EXPECT_NEAR(c.cost_quad[0], 0.02, 1e-12);
  EXPECT_NEAR(c.cost_lin[0], 15, 1e-9);
  ASSERT_EQ(c.n_line(), 1);
  EXPECT_DOUBLE_EQ(c.lines[0].susceptance, 5.0);
  EXPECT_DOUBLE_EQ(c.lines[0].limit, 150);
}

TEST(Matpower, Case14Shape) {
  const auto c = load_case(test_data("cases/case14.m"));
  EXPECT_EQ(c.n_bus(), 14);
  EXPECT_EQ(c.n_line(), 20);
  EXPECT_EQ(c.bus_ids[c.ref_bus], 1);
  EXPECT_NEAR(c.load.sum(), 259.0, 1e-9);
}

TEST(Matpower, OtherBenchmarksLoad) {
  EXPECT_EQ(load_case(test_data("cases/case24_ieee_rts.m")).n_bus(), 24);
  EXPECT_EQ(load_case(test_data("cases/case39.m")).n_bus(), 39);
  EXPECT_EQ(load_case(test_data("cases/case57.m")).n_bus(), 57);
  EXPECT_EQ(load_case(test_data("cases/case118.m")).n_bus(), 118);
}

TEST(Matpower, PiecewiseLinearCostRejected) {
  const auto text = replace(kMinimal, "2 0 0 3 0.02 15 0;", "1 0 0 2 0 0 100 2000;");
  try {
    parse_matpower(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.line(), 0);
    EXPECT_NE(std::string(e.what()).find("piecewise"), std::string::npos);
  }
}

TEST(Matpower, MalformedNumberReportsLineAndColumn) {
  const auto text = replace(kMinimal, "2 1 80 0", "2 1 8x0 0");
  try {
    parse_matpower(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6);
    EXPECT_EQ(e.column(), 7);
  }
}

TEST(Matpower, MissingTable) {
  const auto text = replace(kMinimal, "mpc.gencost", "mpc.other");
  EXPECT_THROW(parse_matpower(text), ParseError);
}

TEST(Matpower, FileErrorsKeepLocation) {
  TempDir tmp;
  const auto path = (tmp.path / "bad.m").string();
  std::ofstream(path) << replace(kMinimal, "2 1 80 0", "2 1 8x0 0");
  try {
    load_case(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6);
    EXPECT_NE(std::string(e.what()).find("bad.m"), std::string::npos);
  }
}

TEST(Matpower, NoReferenceBus) {
  const auto text = replace(kMinimal, "1 3 0  0", "1 2 0  0");
  EXPECT_THROW(parse_matpower(text), ParseError);
}

TEST(Matpower, ZeroQuadraticCostIsFloored) {
  const auto text = replace(kMinimal, "2 0 0 3 0.02 15 0;", "2 0 0 2 15 0;");
  const auto c = parse_matpower(text, "tiny", {1e-3, 30});
  EXPECT_DOUBLE_EQ(c.cost_quad[0], 1e-3);
  EXPECT_EQ(c.metadata.floored_buses, std::vector<int>{1});
}

TEST(CaseJson, RoundTripIsIdentity) {
  for (const char* name : {"case14.m", "case24_ieee_rts.m", "case39.m", "toy3.json"}) {
    const auto c = load_case(test_data("cases/" + std::string(name)));
    const auto back = case_from_json(nlohmann::json::parse(case_to_json(c).dump()));
    EXPECT_EQ(back, c) << name;
  }
}

TEST(CaseJson, WrongFormatTagRejected) {
  auto j = case_to_json(toy3());
  j["format"] = "something-else";
  EXPECT_THROW(case_from_json(j), ParseError);
  auto k = case_to_json(toy3());
  k["lines"][0]["from"] = 77;
  EXPECT_THROW(case_from_json(k), ValidationError);
}

TEST(ThreeArea, StructureAndFeasibleLimits) {
  const auto c = make_three_area(load_case(test_data("cases/case24_ieee_rts.m")));
  EXPECT_EQ(c.n_bus(), 73);
  const auto area = load_case(test_data("cases/case24_ieee_rts.m"));
  EXPECT_EQ(c.n_line(), 3 * area.n_line() + 6);
  EXPECT_NEAR(c.load.sum(), 3 * area.load.sum(), 1e-6);
  EXPECT_NO_THROW(validate(c));
}
