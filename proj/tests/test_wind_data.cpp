#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fairprice/wind_data.hpp"

using namespace fairprice;

namespace {

const char* kFixture =
    "Date,ActivePower,WindSpeed,WindDirection,Blade1PitchAngle\n"
    "2019-01-01,1800,10.5,370,1.5\n"
    "2019-01-02,NaN,9.0,180,0.5\n"
    "2019-01-03,-50,2.0,-90,0\n"
    "2019-01-04,4000,15.0,90,8\n"
    "2019-01-05,900,7.5,45,\n";

}  // namespace

TEST(WindCsv, FiveRowFixture) {
  std::istringstream in(kFixture);
  const auto ds = parse_wind_csv(in);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dropped, 2);  // NaN power, empty pitch
  EXPECT_EQ(ds.clipped, 2);  // -50 and 4000 against 3600
  EXPECT_DOUBLE_EQ(ds.records[0].power, 0.5);
  EXPECT_DOUBLE_EQ(ds.records[0].direction, 10.0);
  EXPECT_DOUBLE_EQ(ds.records[1].power, 0.0);
  EXPECT_DOUBLE_EQ(ds.records[1].direction, 270.0);
  EXPECT_DOUBLE_EQ(ds.records[2].power, 1.0);
}

TEST(WindCsv, AllZeroPowerIsValid) {
  std::istringstream in(
      "ActivePower,WindSpeed,WindDirection,Blade1PitchAngle\n0,1,0,0\n0,2,10,0\n");
  const auto ds = parse_wind_csv(in);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.records[1].power, 0.0);
}

TEST(WindCsv, MissingColumnNamesIt) {
  std::istringstream in("ActivePower,WindSpeed,Blade1PitchAngle\n1,2,3\n");
  try {
    parse_wind_csv(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("WindDirection"), std::string::npos);
  }
}

TEST(WindCsv, NoUsableRows) {
  std::istringstream in("ActivePower,WindSpeed,WindDirection,Blade1PitchAngle\nx,y,z,w\n");
  EXPECT_THROW(parse_wind_csv(in), ValidationError);
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = synthesize_wind(200, 5);
  const auto b = synthesize_wind(200, 5);
  const auto c = synthesize_wind(200, 6);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].power, b.records[i].power);
    EXPECT_EQ(a.records[i].speed, b.records[i].speed);
    differ |= a.records[i].power != c.records[i].power;
  }
  EXPECT_TRUE(differ);
}

TEST(Synthetic, StillAirGivesNoPower) {
  EXPECT_EQ(synth_power_curve(0.0), 0.0);
  EXPECT_EQ(synth_power_curve(2.9), 0.0);
  EXPECT_NEAR(synth_power_curve(12.0), 1.0, 1e-12);
  EXPECT_EQ(synth_power_curve(26.0), 0.0);
}

TEST(Synthetic, BinnedPowerRisesWithSpeed) {
  const auto ds = synthesize_wind(5000, 3);
  std::vector<double> sum(5, 0.0);
  std::vector<int> cnt(5, 0);
  for (const auto& r : ds.records) {
    EXPECT_GE(r.power, 0.0);
    EXPECT_LE(r.power, 1.0);
    const int bin = static_cast<int>(r.speed / 2.5);  // 0-2.5, ..., 10-12.5 m/s
    if (bin < 5) {
      sum[bin] += r.power;
      ++cnt[bin];
    }
  }
  for (int b = 1; b < 5; ++b) {
    ASSERT_GT(cnt[b], 0);
    EXPECT_GT(sum[b] / cnt[b], sum[b - 1] / cnt[b - 1]);
  }
}

TEST(Split, DisjointAndDeterministic) {
  auto ds = synthesize_wind(100, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.records[i].speed = static_cast<double>(i);
  const auto [tr, te] = split(ds, {60, 40, 9});
  std::set<double> seen;
  for (const auto& r : tr.records) seen.insert(r.speed);
  for (const auto& r : te.records) EXPECT_FALSE(seen.count(r.speed));
  EXPECT_EQ(seen.size(), 60u);

  const auto [tr2, te2] = split(ds, {60, 40, 9});
  for (std::size_t i = 0; i < tr.size(); ++i) EXPECT_EQ(tr.records[i].speed, tr2.records[i].speed);
  const auto [tr3, te3] = split(ds, {60, 40, 10});
  bool differ = false;
  for (std::size_t i = 0; i < tr.size(); ++i) differ |= tr.records[i].speed != tr3.records[i].speed;
  EXPECT_TRUE(differ);
  EXPECT_THROW(split(ds, {80, 40, 1}), ValidationError);
}

TEST(Split, SeedsGiveDistinctSplits) {
  auto ds = synthesize_wind(200, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.records[i].speed = static_cast<double>(i);
  std::set<std::vector<double>> seen;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<double> ids;
    for (const auto& r : split(ds, {100, 100, seed}).first.records) ids.push_back(r.speed);
    seen.insert(ids);
  }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Normalizer, TrainStatistics) {
  const auto ds = synthesize_wind(300, 2);
  const auto nz = fit_normalizer(ds, 1000);
  const auto X = nz.features(ds);
  for (int k = 0; k < kFeatureCount; ++k) {
    EXPECT_NEAR(X.row(k).mean(), 0.0, 1e-12);
    EXPECT_NEAR((X.row(k).array().square()).mean(), 1.0, 1e-9);
  }
  EXPECT_TRUE(nz.warnings.empty());
}

TEST(Normalizer, ConstantFeatureWarnsAndStaysFinite) {
  auto ds = synthesize_wind(50, 2);
  for (auto& r : ds.records) r.pitch = 3.0;
  const auto nz = fit_normalizer(ds, 1000);
  ASSERT_EQ(nz.warnings.size(), 1u);
  EXPECT_NE(nz.warnings[0].find("pitch"), std::string::npos);
  EXPECT_TRUE(nz.features(ds).allFinite());
}

TEST(Normalizer, DirectionWrapsSmoothly) {
  WindRecord a, b;
  a.direction = 359.5;
  b.direction = 0.5;
  EXPECT_LT((encode_features(a) - encode_features(b)).norm(), 0.02);
}

TEST(Normalizer, TargetRoundTrip) {
  const auto ds = synthesize_wind(20, 4);
  const auto nz = fit_normalizer(ds, 750);
  const auto y = nz.targets_mw(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_DOUBLE_EQ(nz.to_fraction(y[static_cast<Eigen::Index>(i)]), ds.records[i].power);
  }
}
