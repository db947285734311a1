#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fairprice/metrics.hpp"

using namespace fairprice;

namespace {

ScenarioEvaluation scen(double w_hat, double w, std::vector<double> d, bool congested = true) {
  ScenarioEvaluation e;
  e.w_hat = w_hat;
  e.w = w;
  e.pi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d.size()), 20.0);
  e.pi_hat = e.pi;
  for (std::size_t i = 0; i < d.size(); ++i) e.pi_hat[static_cast<Eigen::Index>(i)] += d[i];
  e.congested = congested;
  return e;
}

std::vector<ScenarioEvaluation> random_set(std::mt19937_64& rng, int m, int n) {
  std::normal_distribution<double> g;
  std::vector<ScenarioEvaluation> ev;
  for (int k = 0; k < m; ++k) {
    std::vector<double> d(n);
    for (auto& v : d) v = 3 * g(rng);
    ev.push_back(scen(g(rng), g(rng), d));
  }
  return ev;
}

}  // namespace

TEST(Rmse, ForecastHandValues) {
  EXPECT_DOUBLE_EQ(rmse_w({scen(3, 0, {0}), scen(0, 4, {0})}), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(rmse_w({scen(5, 5, {0})}), 0.0);
}

TEST(Rmse, PriceOverScenarioBusPairs) {
  // Errors {3, 4} and {0, 0}: mean square 25/4.
  EXPECT_DOUBLE_EQ(rmse_price({scen(0, 0, {3, 4}), scen(0, 0, {0, 0})}), 2.5);
}

TEST(Cvar, WorstTenPercent) {
  std::vector<ScenarioEvaluation> ev;
  for (int k = 0; k < 9; ++k) ev.push_back(scen(0, 0, {1, 1}));
  ev.push_back(scen(0, 0, {6, 8}));
  // Worst scenario has per-bus mean square 50.
  EXPECT_DOUBLE_EQ(cvar_price(ev), std::sqrt(50.0));
  ev.push_back(scen(0, 0, {0, 0}));
  // Eleven scenarios: ceil(1.1) = 2 worst, {50, 1}.
  EXPECT_DOUBLE_EQ(cvar_price(ev), std::sqrt(25.5));
}

TEST(Cvar, NeedsTenScenarios) {
  std::vector<ScenarioEvaluation> ev(9, scen(0, 0, {1}));
  EXPECT_THROW(cvar_price(ev), ValidationError);
  EXPECT_THROW(cvar_price({}), ValidationError);
}

TEST(Cvar, NeverBelowRmse) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto ev = random_set(rng, 10 + t, 4);
    EXPECT_GE(cvar_price(ev) + 1e-12, rmse_price(ev));
  }
}

TEST(Alpha, HandArithmetic) {
  // Non-reference bus mean |error| 2.0, reference 0.5.
  std::vector<ScenarioEvaluation> ev{scen(0, 0, {1.0, -0.5}), scen(0, 0, {-3.0, 0.5})};
  EXPECT_DOUBLE_EQ(alpha_fairness(ev, 1), 1.5);
}

TEST(Alpha, ZeroWhenErrorsUniform) {
  std::vector<ScenarioEvaluation> ev{scen(1, 0, {2, 2, 2}, false), scen(0, 1, {-1, -1, -1}, false)};
  EXPECT_EQ(alpha_fairness(ev, 0), 0.0);
}

TEST(Alpha, InvariantToPermutationAndDuplication) {
  std::mt19937_64 rng(11);
  auto ev = random_set(rng, 30, 5);
  const double a = alpha_fairness(ev, 2);
  std::shuffle(ev.begin(), ev.end(), rng);
  EXPECT_NEAR(alpha_fairness(ev, 2), a, 1e-12);
  auto twice = ev;
  twice.insert(twice.end(), ev.begin(), ev.end());
  EXPECT_NEAR(alpha_fairness(twice, 2), a, 1e-12);
  EXPECT_GE(a, 0.0);
}

TEST(Alpha, RejectsBadInput) {
  EXPECT_THROW(alpha_fairness({}, 0), ValidationError);
  EXPECT_THROW(alpha_fairness({scen(0, 0, {1, 2})}, 5), ValidationError);
  EXPECT_THROW(rmse_price({scen(0, 0, {1, 2}), scen(0, 0, {1})}), ValidationError);
}

TEST(Report, EvaluateAndCsv) {
  std::vector<ScenarioEvaluation> ev;
  for (int k = 0; k < 10; ++k) ev.push_back(scen(k, 0, {1, 1}, k < 4));
  const auto r = evaluate(ev, 0);
  EXPECT_EQ(r.scenarios, 10u);
  EXPECT_DOUBLE_EQ(r.congested_fraction, 0.4);
  EXPECT_DOUBLE_EQ(r.rmse_price, 1.0);
  EXPECT_DOUBLE_EQ(r.alpha, 0.0);
  EXPECT_EQ(r.to_csv().substr(0, 6), "rmse_w");
}

TEST(Report, GainPercent) {
  EXPECT_DOUBLE_EQ(gain_percent(2.0, 1.5), -25.0);
  EXPECT_DOUBLE_EQ(gain_percent(0.0, 0.0), 0.0);
}

TEST(Report, TableMarkdownHasRowPerCase) {
  TableRow a{"14_ieee", 14, 100, 1.0, {}, MetricsReport{}};
  TableRow b{"24_ieee", 15, 1000, 0.75, {}, std::nullopt};
  b.deepwp.rmse_price = 2.0;
  const auto md = table1_markdown({a, b});
  EXPECT_NE(md.find("| 14_ieee |"), std::string::npos);
  EXPECT_NE(md.find("| 24_ieee |"), std::string::npos);
  EXPECT_NE(md.find("---"), std::string::npos);
}
