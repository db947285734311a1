#pragma once

// Differentiation of the market-clearing layer. At a dual optimum with free set I
// (multipliers strictly positive) the stationarity conditions read
//   Q_II l_I = 2 q_I(w),
// so locally dl_I/dw = 2 Q_II^-1 (dq_I/dw) and the prices, linear in l, follow.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fairprice/error.hpp"
#include "fairprice/opf.hpp"

namespace fairprice {

/// Classification of dual rows at a solution. "Active" rows sit at their bound
/// (multiplier zero); "inactive" rows carry a positive multiplier.
struct ActiveSetPartition {
  std::vector<int> active;
  std::vector<int> inactive;
  /// Smallest of: the inactive multipliers and the dual-gradient slack of active rows.
  double margin = 0.0;

  bool operator==(const ActiveSetPartition& o) const { return inactive == o.inactive; }
};

struct PriceJacobian {
  Matrix J;  // n_bus x n_bus, d pi / d w
  bool degenerate = false;
  double margin = 0.0;
};

struct DiffOptions {
  /// Multipliers at or below tau_act * (1 + |l|_inf) are treated as zero.
  double tau_act = 1e-7;
  /// Partitions with a smaller margin are flagged degenerate.
  double tau_strict = 1e-7;
};

/// Splits rows into zero and positive multipliers. Rows whose tight-pair partner carries the
/// multiplier are excluded from the margin: their slack is the pair's width by construction.
inline ActiveSetPartition partition(const ConstraintSystem& sys, const DualQp& qp,
                                    const DualSolution& dual, const Vector& wind,
                                    const DiffOptions& opts = {}) {
  const int m = qp.rows();
  const double tau = opts.tau_act * (1.0 + dual.lambda.lpNorm<Eigen::Infinity>());
  ActiveSetPartition out;
  std::vector<int> partner(m, -1);
  for (auto [i, j] : sys.tight_pairs) {
    partner[i] = j;
    partner[j] = i;
  }
  for (int i = 0; i < m; ++i) {
    (dual.lambda[i] > tau ? out.inactive : out.active).push_back(i);
  }
  const Vector grad = qp.gradient(dual.lambda, qp.q(wind));
  double margin = std::numeric_limits<double>::infinity();
  for (int i : out.inactive) margin = std::min(margin, dual.lambda[i]);
  for (int i : out.active) {
    if (partner[i] >= 0 && dual.lambda[partner[i]] > tau) continue;
    margin = std::min(margin, -grad[i]);
  }
  out.margin = margin;
  return out;
}

/// Factorized inactive block and the maps needed for Jacobian products. Built once per
/// solution; `jacobian` and `vjp` reuse it.
class PriceSensitivity {
 public:
  PriceSensitivity(const ConstraintSystem& sys, const DualQp& qp, const DualSolution& dual,
                   const PtdfMatrix& ptdf, const Vector& wind, const DiffOptions& opts = {})
      : part_(partition(sys, qp, dual, wind, opts)) {
    const int n = sys.n_bus();
    const RowBlocks& rb = sys.blocks;
    const int k = static_cast<int>(part_.inactive.size());
    degenerate_ = !(part_.margin > opts.tau_strict);

    // pi = P l with P = [1, -1, -F', F', 0, 0] by row block.
    price_map_ = Matrix::Zero(n, k);
    wind_map_ = Matrix::Zero(k, n);
    Matrix AI(k, n);
    for (int r = 0; r < k; ++r) {
      const int row = part_.inactive[r];
      AI.row(r) = qp.A.row(row);
      wind_map_.row(r) = qp.q_wind.row(row);
      switch (rb.kind(row)) {
        case RowBlocks::Kind::BalancePlus:
          price_map_.col(r).setOnes();
          break;
        case RowBlocks::Kind::BalanceMinus:
          price_map_.col(r).setConstant(-1.0);
          break;
        case RowBlocks::Kind::FlowUpper:
          price_map_.col(r) = -ptdf.F.row(row - rb.flow_upper(0)).transpose();
          break;
        case RowBlocks::Kind::FlowLower:
          price_map_.col(r) = ptdf.F.row(row - rb.flow_lower(0)).transpose();
          break;
        default:
          break;
      }
    }
    const Matrix QII = AI * qp.inv_quad.asDiagonal() * AI.transpose();
    if (k > 0) {
      llt_.compute(QII);
      bool ok = llt_.info() == Eigen::Success;
      if (ok) {
        const Vector d = llt_.matrixLLT().diagonal();
        ok = d.minCoeff() > 1e-7 * d.maxCoeff();
      }
      if (!ok) {
        degenerate_ = true;
        pinv_ = QII.completeOrthogonalDecomposition().pseudoInverse();
      }
    }
  }

  const ActiveSetPartition& partition_info() const { return part_; }
  bool degenerate() const { return degenerate_; }

  PriceJacobian jacobian() const {
    PriceJacobian out;
    out.degenerate = degenerate_;
    out.margin = part_.margin;
    if (part_.inactive.empty()) {
      out.J = Matrix::Zero(price_map_.rows(), wind_map_.cols());
    } else {
      out.J = 2.0 * price_map_ * solve(wind_map_);
    }
    return out;
  }

  /// J' u without forming J.
  Vector vjp(const Vector& upstream) const {
    if (upstream.size() != price_map_.rows()) throw ValidationError("cotangent has wrong length");
    if (part_.inactive.empty()) return Vector::Zero(wind_map_.cols());
    return 2.0 * wind_map_.transpose() * solve(price_map_.transpose() * upstream);
  }

 private:
  template <typename Rhs>
  Matrix solve(const Rhs& rhs) const {
    if (pinv_) return *pinv_ * rhs;
    return llt_.solve(rhs);
  }

  ActiveSetPartition part_;
  bool degenerate_ = false;
  Matrix price_map_;
  Matrix wind_map_;
  Eigen::LLT<Matrix> llt_;
  std::optional<Matrix> pinv_;
};

inline PriceJacobian price_jacobian(const MarketClearing& market, const DualSolution& dual,
                                    const Vector& wind, const DiffOptions& opts = {}) {
  return PriceSensitivity(market.system(), market.qp(), dual, market.ptdf(), wind, opts)
      .jacobian();
}

inline Vector price_vjp(const Vector& upstream, const PriceSensitivity& ctx) {
  return ctx.vjp(upstream);
}

struct FiniteDiffResult {
  PriceJacobian central;
  /// Active-set change between the +h and -h evaluations along the wind column.
  bool kink = false;
  Vector forward_slope;   // (pi(w+h) - pi(w)) / h, wind column
  Vector backward_slope;  // (pi(w) - pi(w-h)) / h, wind column
};

/// Central finite differences of the full solve-then-price pipeline. With `all_columns`
/// the non-wind directions are perturbed too (both signs, so the injection may turn
/// negative there).
inline FiniteDiffResult finite_diff_jacobian(const MarketClearing& market, double wind_mw,
                                             double h = -1.0, bool all_columns = true,
                                             const DiffOptions& opts = {}) {
  const int n = market.network().n_bus();
  const int wb = market.wind_bus();
  if (h <= 0) h = 1e-4 * market.capacity();
  if (wind_mw - h < 0 || wind_mw + h > market.capacity()) {
    throw ValidationError("finite-difference stencil leaves [0, capacity]");
  }
  const Vector base = market.injection(wind_mw);
  auto prices_at = [&](const Vector& w, ActiveSetPartition* part) {
    auto dual = solve_dual(market.system(), market.qp(), w);
    if (part) *part = partition(market.system(), market.qp(), dual, w, opts);
    return lmp(dual, market.ptdf()).pi;
  };

  FiniteDiffResult out;
  out.central.J = Matrix::Zero(n, n);
  ActiveSetPartition p_center, p_plus, p_minus;
  const Vector pi0 = prices_at(base, &p_center);
  for (int col = 0; col < n; ++col) {
    if (!all_columns && col != wb) continue;
    Vector wp = base, wm = base;
    wp[col] += h;
    wm[col] -= h;
    const bool is_wind = col == wb;
    const Vector pp = prices_at(wp, is_wind ? &p_plus : nullptr);
    const Vector pm = prices_at(wm, is_wind ? &p_minus : nullptr);
    out.central.J.col(col) = (pp - pm) / (2 * h);
    if (is_wind) {
      out.forward_slope = (pp - pi0) / h;
      out.backward_slope = (pi0 - pm) / h;
      out.kink = !(p_plus == p_minus) || !(p_plus == p_center);
    }
  }
  out.central.margin = p_center.margin;
  out.central.degenerate = out.kink || !(p_center.margin > opts.tau_strict);
  return out;
}

struct GradcheckRow {
  int point_id = 0;
  std::string kind;  // "random" or "kink"
  double wind_mw = 0.0;
  double margin = 0.0;
  double max_rel_err = 0.0;
  bool degenerate = false;
  /// Largest difference between Jacobian rows along the wind column; zero when all buses
  /// respond identically (no congestion).
  double row_spread = 0.0;
  double slope_gap = 0.0;  // |forward - backward| one-sided slope difference
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  int infeasible_skipped = 0;
  double tolerance = 1e-4;

  int nondegenerate_count() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const auto& r) {
      return !r.degenerate;
    }));
  }
  double worst_error() const {
    double w = 0.0;
    for (const auto& r : rows) {
      if (!r.degenerate) w = std::max(w, r.max_rel_err);
    }
    return w;
  }
  bool kinks_flagged() const {
    return std::all_of(rows.begin(), rows.end(), [](const auto& r) {
      return r.kind != "kink" || r.degenerate;
    });
  }
  bool passed() const { return worst_error() <= tolerance && kinks_flagged(); }

  std::string to_csv() const {
    std::string s = "point_id,kind,wind_mw,margin,max_rel_err,degenerate,row_spread,slope_gap\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%d,%s,%.10g,%.6g,%.6g,%d,%.6g,%.6g\n", r.point_id,
                    r.kind.c_str(), r.wind_mw, r.margin, r.max_rel_err, r.degenerate ? 1 : 0,
                    r.row_spread, r.slope_gap);
      s += buf;
    }
    return s;
  }
};

struct GradcheckOptions {
  int points = 50;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  /// Margin required for a sampled point to count as non-degenerate.
  double min_margin = 1e-6;
  /// Number of active-set switch points located by bisection and checked for flagging.
  int kinks = 3;
  double step = -1.0;
  /// Random cotangents per point, in addition to the unit vectors at every bus.
  int random_cotangents = 3;
};

/// Compares VJP-implied directional derivatives with central differences at random wind
/// levels, then locates active-set switches along the wind axis and checks they are
/// flagged as degenerate.
inline GradcheckReport gradcheck(const MarketClearing& market, const GradcheckOptions& opts = {}) {
  const int n = market.network().n_bus();
  const int wb = market.wind_bus();
  const double cap = market.capacity();
  const double h = opts.step > 0 ? opts.step : 1e-4 * cap;
  DiffOptions dopts;
  dopts.tau_strict = opts.min_margin;

  GradcheckReport report;
  report.tolerance = opts.tolerance;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unif(h, cap - h);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto check_point = [&](double w, const std::string& kind, int id) -> std::optional<GradcheckRow> {
    const Vector inj = market.injection(w);
    DualSolution dual;
    FiniteDiffResult fd;
    try {
      dual = solve_dual(market.system(), market.qp(), inj);
      solve_primal(market.system(), market.network(), inj);
      fd = finite_diff_jacobian(market, w, h, false, dopts);
    } catch (const InfeasibleError&) {
      ++report.infeasible_skipped;
      return std::nullopt;
    } catch (const ValidationError&) {
      ++report.infeasible_skipped;
      return std::nullopt;
    }
    PriceSensitivity sens(market.system(), market.qp(), dual, market.ptdf(), inj, dopts);
    GradcheckRow row;
    row.point_id = id;
    row.kind = kind;
    row.wind_mw = w;
    row.margin = sens.partition_info().margin;
    row.degenerate = sens.degenerate() || fd.kink;
    row.slope_gap = (fd.forward_slope - fd.backward_slope).lpNorm<Eigen::Infinity>();
    const Vector fd_col = fd.central.J.col(wb);
    row.row_spread = fd_col.maxCoeff() - fd_col.minCoeff();
    double worst = 0.0;
    for (int k = 0; k < n + opts.random_cotangents; ++k) {
      Vector u = Vector::Zero(n);
      if (k < n) {
        u[k] = 1.0;
      } else {
        for (int i = 0; i < n; ++i) u[i] = normal(rng);
      }
      const double analytic = sens.vjp(u)[wb];
      const double numeric = u.dot(fd_col);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    row.max_rel_err = worst;
    return row;
  };

  int id = 0;
  int attempts = 0;
  while (report.nondegenerate_count() < opts.points && attempts < 20 * opts.points) {
    ++attempts;
    if (auto row = check_point(unif(rng), "random", id)) {
      report.rows.push_back(*row);
      ++id;
    }
  }

  // Locate active-set switches on a grid and bisect each to the switching level.
  if (opts.kinks > 0) {
    const int grid = 200;
    auto support = [&](double w) -> std::optional<ActiveSetPartition> {
      try {
        const Vector inj = market.injection(w);
        auto dual = solve_dual(market.system(), market.qp(), inj);
        return partition(market.system(), market.qp(), dual, inj, dopts);
      } catch (const Error&) {
        return std::nullopt;
      }
    };
    int found = 0;
    double last_kink = -1e300;
    auto prev = support(h);
    double prev_w = h;
    for (int g = 1; g <= grid && found < opts.kinks; ++g) {
      const double w = h + (cap - 2 * h) * g / grid;
      auto cur = support(w);
      if (prev && cur && !(*prev == *cur)) {
        double lo = prev_w, hi = w;
        for (int b = 0; b < 60 && hi - lo > 1e-12 * cap; ++b) {
          const double mid = 0.5 * (lo + hi);
          auto s = support(mid);
          if (!s) break;
          (*s == *prev ? lo : hi) = mid;
        }
        const double kink_w = std::clamp(0.5 * (lo + hi), h, cap - h);
        if (kink_w - last_kink < 2 * h) {
          prev = cur;
          prev_w = w;
          continue;
        }
        last_kink = kink_w;
        if (auto row = check_point(kink_w, "kink", id)) {
          report.rows.push_back(*row);
          ++id;
          ++found;
        }
      }
      prev = cur;
      prev_w = w;
    }
  }
  return report;
}

}  // namespace fairprice
