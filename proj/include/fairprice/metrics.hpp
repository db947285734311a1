#pragma once

// Forecast and price-error statistics over a set of evaluated scenarios.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fairprice/error.hpp"

namespace fairprice {

/// One test scenario: forecast and actual wind (MW), prices under each.
struct ScenarioEvaluation {
  double w_hat = 0.0;
  double w = 0.0;
  Eigen::VectorXd pi_hat;
  Eigen::VectorXd pi;
  bool congested = false;  // at the actual wind

  Eigen::VectorXd delta() const { return pi_hat - pi; }
};

namespace detail {

inline void require_nonempty(const std::vector<ScenarioEvaluation>& ev) {
  if (ev.empty()) throw ValidationError("empty evaluation set");
  const auto n = ev.front().pi.size();
  for (const auto& e : ev) {
    if (e.pi.size() != n || e.pi_hat.size() != n) {
      throw ValidationError("price vectors differ in length across scenarios");
    }
  }
}

inline double scenario_price_ms(const ScenarioEvaluation& e) {
  return e.pi.size() ? e.delta().squaredNorm() / static_cast<double>(e.pi.size()) : 0.0;
}

}  // namespace detail

inline double rmse_w(const std::vector<ScenarioEvaluation>& ev) {
  if (ev.empty()) throw ValidationError("empty evaluation set");
  double s = 0;
  for (const auto& e : ev) s += (e.w_hat - e.w) * (e.w_hat - e.w);
  return std::sqrt(s / static_cast<double>(ev.size()));
}

/// Root mean over all scenario x bus pairs.
inline double rmse_price(const std::vector<ScenarioEvaluation>& ev) {
  detail::require_nonempty(ev);
  double s = 0;
  for (const auto& e : ev) s += detail::scenario_price_ms(e);
  return std::sqrt(s / static_cast<double>(ev.size()));
}

/// Price RMSE over the worst ceil(tail * m) scenarios, ranked by per-scenario RMSE over
/// buses. Ties go to the lower scenario index.
inline double cvar_price(const std::vector<ScenarioEvaluation>& ev, double tail = 0.10) {
  detail::require_nonempty(ev);
  if (!(tail > 0 && tail <= 1)) throw ValidationError("tail fraction must lie in (0, 1]");
  const auto m = ev.size();
  const auto need = static_cast<std::size_t>(std::ceil(1.0 / tail - 1e-12));
  if (m < need) {
    throw ValidationError("tail metric needs at least " + std::to_string(need) +
                          " scenarios, got " + std::to_string(m));
  }
  const auto k = static_cast<std::size_t>(std::ceil(tail * static_cast<double>(m) - 1e-9));
  std::vector<double> ms(m);
  for (std::size_t i = 0; i < m; ++i) ms[i] = detail::scenario_price_ms(ev[i]);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ms[a] > ms[b]; });
  double s = 0;
  for (std::size_t j = 0; j < k; ++j) s += ms[order[j]];
  return std::sqrt(s / static_cast<double>(k));
}

/// Mean |price error| per bus.
inline Eigen::VectorXd bus_error_profile(const std::vector<ScenarioEvaluation>& ev) {
  detail::require_nonempty(ev);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(ev.front().pi.size());
  for (const auto& e : ev) acc += e.delta().cwiseAbs();
  return acc / static_cast<double>(ev.size());
}

/// Largest gap between any bus's mean |price error| and the reference bus's.
inline double alpha_fairness(const std::vector<ScenarioEvaluation>& ev, int ref_bus) {
  const Eigen::VectorXd prof = bus_error_profile(ev);
  if (ref_bus < 0 || ref_bus >= prof.size()) throw ValidationError("reference bus out of range");
  return (prof.array() - prof[ref_bus]).abs().maxCoeff();
}

struct MetricsReport {
  double rmse_w = 0.0;      // MWh
  double rmse_price = 0.0;  // $/MWh
  double cvar_price = 0.0;  // $/MWh
  double alpha = 0.0;       // $/MWh
  Eigen::VectorXd bus_profile;
  std::size_t scenarios = 0;
  double congested_fraction = 0.0;

  static std::string csv_header() {
    return "rmse_w,rmse_price,cvar_price,alpha,scenarios,congested_fraction";
  }
  std::string csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%zu,%.6g", rmse_w, rmse_price,
                  cvar_price, alpha, scenarios, congested_fraction);
    return buf;
  }
  std::string to_csv() const { return csv_header() + "\n" + csv_row() + "\n"; }
};

inline MetricsReport evaluate(const std::vector<ScenarioEvaluation>& ev, int ref_bus,
                              double tail = 0.10) {
  MetricsReport r;
  r.rmse_w = rmse_w(ev);
  r.rmse_price = rmse_price(ev);
  r.cvar_price = cvar_price(ev, tail);
  r.bus_profile = bus_error_profile(ev);
  r.alpha = alpha_fairness(ev, ref_bus);
  r.scenarios = ev.size();
  r.congested_fraction =
      static_cast<double>(std::count_if(ev.begin(), ev.end(), [](const auto& e) { return e.congested; })) /
      static_cast<double>(ev.size());
  return r;
}

/// Relative change of `b` against `a`, in percent. Zero when both are zero.
inline double gain_percent(double a, double b) {
  if (a == 0.0) return b == 0.0 ? 0.0 : std::copysign(INFINITY, b);
  return 100.0 * (b - a) / std::abs(a);
}

struct TableRow {
  std::string case_name;
  int bus = 0;
  double capacity = 0.0;
  double fbar_scale = 1.0;
  MetricsReport deepwp;
  std::optional<MetricsReport> deepwp_plus;
};

/// Markdown table shaped like the benchmark summary: forecast and price errors of the
/// price-agnostic model, then the price-aware model with gains.
inline std::string table1_markdown(const std::vector<TableRow>& rows) {
  auto fmt = [](double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  auto gain = [](double a, double b) {
    if (a == 0.0 && b == 0.0) return std::string("---");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.1f%%", gain_percent(a, b));
    return std::string(buf);
  };
  std::string s =
      "| case | bus | capacity MW | fbar-scale | DeepWP RMSE(w) MWh | DeepWP RMSE(pi) $/MWh | "
      "DeepWP CVaR(pi) $/MWh | DeepWP alpha $/MWh | DeepWP+ RMSE(w) | gain | DeepWP+ RMSE(pi) | "
      "gain | DeepWP+ CVaR(pi) | gain | DeepWP+ alpha | gain |\n"
      "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    s += "| " + r.case_name + " | " + std::to_string(r.bus) + " | " + fmt(r.capacity) + " | " +
         fmt(r.fbar_scale) + " | " + fmt(r.deepwp.rmse_w) + " | " + fmt(r.deepwp.rmse_price) +
         " | " + fmt(r.deepwp.cvar_price) + " | " + fmt(r.deepwp.alpha) + " | ";
    if (r.deepwp_plus) {
      const auto& p = *r.deepwp_plus;
      s += fmt(p.rmse_w) + " | " + gain(r.deepwp.rmse_w, p.rmse_w) + " | " + fmt(p.rmse_price) +
           " | " + gain(r.deepwp.rmse_price, p.rmse_price) + " | " + fmt(p.cvar_price) + " | " +
           gain(r.deepwp.cvar_price, p.cvar_price) + " | " + fmt(p.alpha) + " | " +
           gain(r.deepwp.alpha, p.alpha) + " |\n";
    } else {
      s += "- | - | - | - | - | - | - | - |\n";
    }
  }
  s += "\nRMSE(pi) is the root mean over scenario x bus pairs; CVaR(pi) is the same over the "
       "worst 10% of scenarios ranked by per-scenario RMSE; alpha uses the reference bus.\n";
  return s;
}

}  // namespace fairprice
