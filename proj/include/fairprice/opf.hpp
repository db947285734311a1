#pragma once

// DC-OPF market clearing: constraint assembly, primal interior-point solve, bound-constrained
// dual solve, price extraction and duality diagnostics.
//
// The primal is   min p'Cp + c'p   s.t.  A p >= b(w),   b(w) = b_base + b_wind w.
// Its Lagrangian dual, with Q = A C^-1 A' and q(w) = 1/2 A C^-1 c + b(w), is
//                 max q(w)'l - 1/4 l'Q l - 1/4 c'C^-1 c   s.t.  l >= 0,
// and the primal is recovered from p = 1/2 C^-1 (A'l - c).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairprice/error.hpp"
#include "fairprice/network.hpp"

namespace fairprice {

/// Row layout of the stacked constraint matrix.
struct RowBlocks {
  int n_bus = 0;
  int n_line = 0;

  enum class Kind { BalancePlus, BalanceMinus, FlowUpper, FlowLower, GenUpper, GenLower };

  int balance_plus() const { return 0; }
  int balance_minus() const { return 1; }
  int flow_upper(int line) const { return 2 + line; }
  int flow_lower(int line) const { return 2 + n_line + line; }
  int gen_upper(int bus) const { return 2 + 2 * n_line + bus; }
  int gen_lower(int bus) const { return 2 + 2 * n_line + n_bus + bus; }
  int size() const { return 2 + 2 * n_line + 2 * n_bus; }

  Kind kind(int row) const {
    if (row == 0) return Kind::BalancePlus;
    if (row == 1) return Kind::BalanceMinus;
    if (row < 2 + n_line) return Kind::FlowUpper;
    if (row < 2 + 2 * n_line) return Kind::FlowLower;
    if (row < 2 + 2 * n_line + n_bus) return Kind::GenUpper;
    return Kind::GenLower;
  }
};

/// Stacked inequality form A p >= b_base + b_wind w of the market clearing.
struct ConstraintSystem {
  Matrix A;
  Vector b_base;
  Matrix b_wind;
  RowBlocks blocks;

  Matrix F;
  Vector load;
  Vector limits;
  Vector gen_lo;
  Vector gen_hi;      // upper bounds after widening fixed buses by `tight_gap`
  Vector cost_lin;
  Vector cost_quad;   // strictly positive on every bus
  std::vector<bool> dispatchable;
  /// Rows that form an (almost) equality pair: the balance rows and both bound rows of
  /// every non-dispatchable bus.
  std::vector<std::pair<int, int>> tight_pairs;
  double tight_gap = 1e-9;

  int rows() const { return static_cast<int>(A.rows()); }
  int n_bus() const { return static_cast<int>(A.cols()); }

  Vector b(const Vector& wind) const { return b_base + b_wind * wind; }

  double objective(const Vector& p) const {
    return p.dot(cost_quad.cwiseProduct(p)) + cost_lin.dot(p);
  }
};

/// Concave dual of the market clearing, maximized over the non-negative orthant.
struct DualQp {
  Matrix Q;
  Vector q_base;
  Matrix q_wind;
  double constant = 0.0;
  /// Upper estimate of the largest eigenvalue of Q.
  double q_norm = 0.0;

  // Factored form Q = A diag(inv_quad) A', used for cheap products.
  Matrix A;
  Vector inv_quad;

  int rows() const { return static_cast<int>(Q.rows()); }

  Vector q(const Vector& wind) const { return q_base + q_wind * wind; }

  Vector apply_Q(const Vector& lambda) const {
    return A * inv_quad.cwiseProduct(A.transpose() * lambda);
  }

  double objective(const Vector& lambda, const Vector& q_vec) const {
    return q_vec.dot(lambda) - 0.25 * lambda.dot(apply_Q(lambda)) + constant;
  }

  Vector gradient(const Vector& lambda, const Vector& q_vec) const {
    return q_vec - 0.5 * apply_Q(lambda);
  }
};

struct PrimalSolution {
  Vector p;          // MW per bus
  double objective = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

struct SolverDiagnostics {
  int iterations = 0;
  int restarts = 0;
  int polish_attempts = 0;
  bool polished = false;
  bool converged = false;
  double kkt_residual = std::numeric_limits<double>::infinity();
};

struct DualSolution {
  Vector lambda;
  double objective = 0.0;
  RowBlocks blocks;
  SolverDiagnostics diagnostics;

  double balance() const {
    return lambda[blocks.balance_plus()] - lambda[blocks.balance_minus()];
  }
  Vector flow_upper() const { return lambda.segment(blocks.flow_upper(0), blocks.n_line); }
  Vector flow_lower() const { return lambda.segment(blocks.flow_lower(0), blocks.n_line); }
  Vector gen_upper() const { return lambda.segment(blocks.gen_upper(0), blocks.n_bus); }
  Vector gen_lower() const { return lambda.segment(blocks.gen_lower(0), blocks.n_bus); }

  /// Total flow multiplier mass; positive exactly when the instance is congested.
  double congestion_mass() const { return flow_upper().sum() + flow_lower().sum(); }
};

struct PriceVector {
  Vector pi;  // $/MWh per bus
};

struct AssembleOptions {
  double tight_gap = 1e-9;
};

/// Builds the stacked constraint system and its dual. Buses without dispatchable generation
/// get the mean dispatchable quadratic cost; their output is pinned by the bound rows so the
/// choice does not move the optimum.
inline std::pair<ConstraintSystem, DualQp> assemble(const NetworkCase& c, const PtdfMatrix& ptdf,
                                                   const AssembleOptions& opts = {}) {
  const int n = c.n_bus();
  const int e = c.n_line();
  if (ptdf.rows() != e || ptdf.cols() != n) {
    throw ValidationError("PTDF shape does not match the case");
  }
  ConstraintSystem sys;
  sys.blocks = RowBlocks{n, e};
  sys.F = ptdf.F;
  sys.load = c.load;
  sys.limits.resize(e);
  for (int l = 0; l < e; ++l) sys.limits[l] = c.lines[l].limit;
  sys.tight_gap = opts.tight_gap;
  sys.gen_lo = c.gen_min;
  sys.gen_hi = c.gen_max;
  sys.cost_lin = c.cost_lin;
  sys.cost_quad = c.cost_quad;
  sys.dispatchable.assign(n, false);

  double quad_sum = 0.0;
  int quad_count = 0;
  for (int i = 0; i < n; ++i) {
    if (c.dispatchable(i)) {
      sys.dispatchable[i] = true;
      if (!(c.cost_quad[i] > 0) || !std::isfinite(1.0 / c.cost_quad[i])) {
        throw ValidationError("quadratic cost at bus " + std::to_string(c.bus_ids[i]) +
                              " is not invertible; apply the cost floor first");
      }
      quad_sum += c.cost_quad[i];
      ++quad_count;
    }
  }
  const double neutral_quad = quad_count ? quad_sum / quad_count : 1.0;
  for (int i = 0; i < n; ++i) {
    if (!sys.dispatchable[i]) {
      sys.cost_quad[i] = neutral_quad;
      sys.gen_hi[i] = sys.gen_lo[i] + opts.tight_gap;
    }
  }

  const RowBlocks& rb = sys.blocks;
  const int m = rb.size();
  sys.A = Matrix::Zero(m, n);
  sys.b_base = Vector::Zero(m);
  sys.b_wind = Matrix::Zero(m, n);
  const double total_load = c.load.sum();

  sys.A.row(rb.balance_plus()).setOnes();
  sys.b_base[rb.balance_plus()] = total_load - opts.tight_gap;
  sys.b_wind.row(rb.balance_plus()).setConstant(-1.0);
  sys.A.row(rb.balance_minus()).setConstant(-1.0);
  sys.b_base[rb.balance_minus()] = -total_load - opts.tight_gap;
  sys.b_wind.row(rb.balance_minus()).setOnes();
  sys.tight_pairs.emplace_back(rb.balance_plus(), rb.balance_minus());

  const Vector Fd = ptdf.F * c.load;
  for (int l = 0; l < e; ++l) {
    // F(p + w - d) <= fbar   and   F(p + w - d) >= -fbar
    sys.A.row(rb.flow_upper(l)) = -ptdf.F.row(l);
    sys.b_base[rb.flow_upper(l)] = -sys.limits[l] - Fd[l];
    sys.b_wind.row(rb.flow_upper(l)) = ptdf.F.row(l);
    sys.A.row(rb.flow_lower(l)) = ptdf.F.row(l);
    sys.b_base[rb.flow_lower(l)] = -sys.limits[l] + Fd[l];
    sys.b_wind.row(rb.flow_lower(l)) = -ptdf.F.row(l);
  }
  for (int i = 0; i < n; ++i) {
    sys.A(rb.gen_upper(i), i) = -1.0;
    sys.b_base[rb.gen_upper(i)] = -sys.gen_hi[i];
    sys.A(rb.gen_lower(i), i) = 1.0;
    sys.b_base[rb.gen_lower(i)] = sys.gen_lo[i];
    if (!sys.dispatchable[i]) sys.tight_pairs.emplace_back(rb.gen_upper(i), rb.gen_lower(i));
  }

  DualQp qp;
  qp.A = sys.A;
  qp.inv_quad = sys.cost_quad.cwiseInverse();
  qp.Q = sys.A * qp.inv_quad.asDiagonal() * sys.A.transpose();
  qp.q_base = 0.5 * sys.A * qp.inv_quad.cwiseProduct(sys.cost_lin) + sys.b_base;
  qp.q_wind = sys.b_wind;
  qp.constant = -0.25 * sys.cost_lin.dot(qp.inv_quad.cwiseProduct(sys.cost_lin));

  // Power iteration on the n x n Gram form, which shares the nonzero spectrum of Q.
  const Vector s = qp.inv_quad.cwiseSqrt();
  const Matrix gram = s.asDiagonal() * (sys.A.transpose() * sys.A) * s.asDiagonal();
  Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  double est = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector u = gram * v;
    const double norm = u.norm();
    if (norm == 0) break;
    const double next = v.dot(u);
    v = u / norm;
    if (std::abs(next - est) <= 1e-10 * std::abs(next)) {
      est = next;
      break;
    }
    est = next;
  }
  // Power iteration approaches from below; the margin keeps the step safe.
  qp.q_norm = 1.05 * std::max(est, 1e-12);
  return {std::move(sys), std::move(qp)};
}

namespace detail {

/// Primal-dual interior point (Mehrotra predictor-corrector) for
///   min 1/2 x'diag(h)x + g'x   s.t.  E x = e,  G x >= b.
struct QpResult {
  Vector x;
  Vector y;
  Vector z;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

inline QpResult interior_point(const Vector& hdiag, const Vector& g, const Matrix& E,
                               const Vector& e, const Matrix& G, const Vector& b,
                               int max_iter = 200, double tol = 1e-10) {
  const int n = static_cast<int>(g.size());
  const int me = static_cast<int>(E.rows());
  const int mi = static_cast<int>(G.rows());
  QpResult r;
  r.x = Vector::Zero(n);
  r.y = Vector::Zero(me);
  Vector s = (G * r.x - b).cwiseMax(1.0);
  r.z = Vector::Ones(mi);

  const double scale_d = 1.0 + g.lpNorm<Eigen::Infinity>();
  const double scale_p = 1.0 + std::max(b.size() ? b.lpNorm<Eigen::Infinity>() : 0.0,
                                        e.size() ? e.lpNorm<Eigen::Infinity>() : 0.0);

  auto solve_kkt = [&](const Vector& w, const Vector& rhs_x, const Vector& rhs_y,
                       Vector& dx, Vector& dy) {
    Matrix K = Matrix::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = G.transpose() * w.asDiagonal() * G;
    K.topLeftCorner(n, n).diagonal() += hdiag;
    K.topRightCorner(n, me) = -E.transpose();
    K.bottomLeftCorner(me, n) = E;
    Vector rhs(n + me);
    rhs << rhs_x, rhs_y;
    Vector sol = K.partialPivLu().solve(rhs);
    dx = sol.head(n);
    dy = sol.tail(me);
  };

  auto step_to_boundary = [](const Vector& v, const Vector& dv) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
    }
    return a;
  };

  {
    // Starting point from one affine-scaling step taken from a unit guess.
    const Vector rd = hdiag.cwiseProduct(r.x) + g - E.transpose() * r.y - G.transpose() * r.z;
    const Vector re = E * r.x - e;
    const Vector ri = G * r.x - s - b;
    const Vector w = r.z.cwiseQuotient(s);
    const Vector rc = s.cwiseProduct(r.z);
    Vector dx, dy;
    solve_kkt(w, -rd - G.transpose() * (rc + r.z.cwiseProduct(ri)).cwiseQuotient(s), -re, dx, dy);
    const Vector ds = G * dx + ri;
    const Vector dz = -(rc + r.z.cwiseProduct(ds)).cwiseQuotient(s);
    r.x += dx;
    r.y += dy;
    s = (s + ds).cwiseAbs().cwiseMax(1.0);
    r.z = (r.z + dz).cwiseAbs().cwiseMax(1.0);
  }

  for (int it = 0; it < max_iter; ++it) {
    r.iterations = it;
    const Vector rd = hdiag.cwiseProduct(r.x) + g - E.transpose() * r.y - G.transpose() * r.z;
    const Vector re = E * r.x - e;
    const Vector ri = G * r.x - s - b;
    const double mu = mi ? s.dot(r.z) / mi : 0.0;
    r.residual = std::max({rd.lpNorm<Eigen::Infinity>() / scale_d,
                           me ? re.lpNorm<Eigen::Infinity>() / scale_p : 0.0,
                           mi ? ri.lpNorm<Eigen::Infinity>() / scale_p : 0.0, mu / scale_d});
    if (r.residual <= tol) {
      r.converged = true;
      return r;
    }
    if (!r.x.allFinite() || r.z.lpNorm<Eigen::Infinity>() > 1e14) break;

    const Vector w = r.z.cwiseQuotient(s);
    auto direction = [&](const Vector& rc, Vector& dx, Vector& dy, Vector& ds, Vector& dz) {
      // ds = G dx + ri,  dz = -S^-1 (rc + Z ds)
      const Vector rhs_x = -rd - G.transpose() * (rc + r.z.cwiseProduct(ri)).cwiseQuotient(s);
      solve_kkt(w, rhs_x, -re, dx, dy);
      ds = G * dx + ri;
      dz = -(rc + r.z.cwiseProduct(ds)).cwiseQuotient(s);
    };

    Vector dx, dy, ds, dz;
    direction(s.cwiseProduct(r.z), dx, dy, ds, dz);
    const double a_aff = std::min(step_to_boundary(s, ds), step_to_boundary(r.z, dz));
    const double mu_aff = mi ? (s + a_aff * ds).dot(r.z + a_aff * dz) / mi : 0.0;
    const double sigma = mu > 0 ? std::min(1.0, std::pow(mu_aff / mu, 3)) : 0.0;
    const Vector rc = s.cwiseProduct(r.z) + ds.cwiseProduct(dz) -
                      Vector::Constant(mi, sigma * mu);
    direction(rc, dx, dy, ds, dz);
    const double a = std::min(
        1.0, 0.995 * std::min(step_to_boundary(s, ds), step_to_boundary(r.z, dz)));
    r.x += a * dx;
    r.y += a * dy;
    s += a * ds;
    r.z += a * dz;
  }
  return r;
}

}  // namespace detail

/// Solves the primal market clearing with an interior-point method, independently of the
/// dual route. Buses without dispatchable generation are pinned at their lower bound and
/// the balance row is imposed as an exact equality.
inline PrimalSolution solve_primal(const ConstraintSystem& sys, const NetworkCase& c,
                                   const Vector& wind) {
  const int n = sys.n_bus();
  const RowBlocks& rb = sys.blocks;
  if (wind.size() != n) throw ValidationError("forecast vector has wrong length");
  if ((wind.array() < 0).any()) throw ValidationError("negative wind forecast");
  if (c.wind_bus && c.wind_capacity > 0) {
    for (int i = 0; i < n; ++i) {
      if (i != *c.wind_bus && wind[i] != 0) {
        throw ValidationError("wind forecast has support outside the wind bus");
      }
    }
    if (wind[*c.wind_bus] > c.wind_capacity * (1 + 1e-12)) {
      throw ValidationError("wind forecast exceeds installed capacity");
    }
  }

  const double residual_demand = sys.load.sum() - wind.sum();
  double lo_sum = 0.0, hi_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    lo_sum += sys.gen_lo[i];
    hi_sum += sys.dispatchable[i] ? sys.gen_hi[i] : sys.gen_lo[i];
  }
  if (residual_demand > hi_sum + 1e-9) {
    throw InfeasibleError("infeasible clearing: demand net of wind (" +
                          std::to_string(residual_demand) +
                          " MW) exceeds total generation capacity (" + std::to_string(hi_sum) +
                          " MW)");
  }
  if (residual_demand < lo_sum - 1e-9) {
    throw InfeasibleError("infeasible clearing: minimum generation (" + std::to_string(lo_sum) +
                          " MW) exceeds demand net of wind (" +
                          std::to_string(residual_demand) + " MW)");
  }

  std::vector<int> free_idx;
  for (int i = 0; i < n; ++i) {
    if (sys.dispatchable[i]) free_idx.push_back(i);
  }
  const int nf = static_cast<int>(free_idx.size());
  Vector fixed = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (!sys.dispatchable[i]) fixed[i] = sys.gen_lo[i];
  }

  Vector hdiag(nf), g(nf);
  Matrix E(1, nf);
  for (int k = 0; k < nf; ++k) {
    hdiag[k] = 2.0 * sys.cost_quad[free_idx[k]];
    g[k] = sys.cost_lin[free_idx[k]];
    E(0, k) = 1.0;
  }
  Vector e(1);
  e[0] = residual_demand - fixed.sum();

  const int e_line = rb.n_line;
  Matrix G(2 * e_line + 2 * nf, nf);
  Vector h(2 * e_line + 2 * nf);
  const Vector bw = sys.b(wind);
  for (int l = 0; l < e_line; ++l) {
    for (int k = 0; k < nf; ++k) {
      G(l, k) = sys.A(rb.flow_upper(l), free_idx[k]);
      G(e_line + l, k) = sys.A(rb.flow_lower(l), free_idx[k]);
    }
    h[l] = bw[rb.flow_upper(l)] - sys.A.row(rb.flow_upper(l)).dot(fixed);
    h[e_line + l] = bw[rb.flow_lower(l)] - sys.A.row(rb.flow_lower(l)).dot(fixed);
  }
  G.bottomRows(2 * nf).setZero();
  for (int k = 0; k < nf; ++k) {
    G(2 * e_line + k, k) = -1.0;
    h[2 * e_line + k] = -sys.gen_hi[free_idx[k]];
    G(2 * e_line + nf + k, k) = 1.0;
    h[2 * e_line + nf + k] = sys.gen_lo[free_idx[k]];
  }

  auto res = detail::interior_point(hdiag, g, E, e, G, h);
  if (!res.converged) {
    throw InfeasibleError(
        "primal interior-point method did not converge (residual " +
        std::to_string(res.residual) +
        "); the flow limits likely admit no dispatch for this forecast");
  }
  PrimalSolution out;
  out.p = fixed;
  for (int k = 0; k < nf; ++k) out.p[free_idx[k]] = res.x[k];
  out.objective = sys.objective(out.p);
  out.iterations = res.iterations;
  out.residual = res.residual;
  return out;
}

struct DualSolveOptions {
  int max_iterations = 200000;
  double kkt_tolerance = 1e-8;
  /// Finish with an exact solve on the identified free set.
  bool polish = true;
  int polish_every = 200;
  /// Return the last iterate instead of throwing when the budget runs out.
  bool allow_unconverged = false;
  std::optional<Vector> initial;
};

namespace detail {

inline double kkt_residual(const Vector& lambda, const Vector& grad, double scale) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const double v = lambda[i] > 0 ? std::abs(grad[i]) : std::max(grad[i], 0.0);
    r = std::max(r, v);
  }
  return r / scale;
}

inline void canonicalize_pairs(Vector& lambda, const std::vector<std::pair<int, int>>& pairs) {
  for (auto [i, j] : pairs) {
    const double d = lambda[i] - lambda[j];
    lambda[i] = std::max(d, 0.0);
    lambda[j] = std::max(-d, 0.0);
  }
}

/// Active-set refinement from an approximate dual point: solves the stationarity equations
/// on the positive set, dropping negative multipliers and adding violated rows, until the
/// KKT conditions hold to `tol` or the step budget is exhausted.
inline std::optional<Vector> polish_dual(const DualQp& qp, const Vector& q_vec,
                                         const std::vector<std::pair<int, int>>& pairs,
                                         Vector guess, double tol, double scale) {
  const int m = qp.rows();
  canonicalize_pairs(guess, pairs);
  std::vector<char> free(m, 0);
  for (int i = 0; i < m; ++i) free[i] = guess[i] > 0;

  for (int step = 0; step < 60; ++step) {
    std::vector<int> idx;
    for (int i = 0; i < m; ++i) {
      if (free[i]) idx.push_back(i);
    }
    Vector lambda = Vector::Zero(m);
    if (!idx.empty()) {
      const int k = static_cast<int>(idx.size());
      Matrix AI(k, qp.A.cols());
      Vector qI(k);
      for (int r = 0; r < k; ++r) {
        AI.row(r) = qp.A.row(idx[r]);
        qI[r] = q_vec[idx[r]];
      }
      const Matrix QII = AI * qp.inv_quad.asDiagonal() * AI.transpose();
      Eigen::LDLT<Matrix> ldlt(QII);
      const Vector D = ldlt.vectorD();
      const double dmax = D.cwiseAbs().maxCoeff();
      if (ldlt.info() != Eigen::Success || D.minCoeff() <= 1e-11 * std::max(dmax, 1e-300)) {
        return std::nullopt;
      }
      const Vector lI = 2.0 * ldlt.solve(qI);
      int worst = -1;
      double worst_val = 0.0;
      for (int r = 0; r < k; ++r) {
        if (lI[r] < worst_val) {
          worst_val = lI[r];
          worst = idx[r];
        }
      }
      if (worst >= 0 && worst_val < -1e-12 * scale) {
        free[worst] = 0;
        continue;
      }
      for (int r = 0; r < k; ++r) lambda[idx[r]] = std::max(lI[r], 0.0);
    }
    const Vector grad = qp.gradient(lambda, q_vec);
    int add = -1;
    double add_val = tol * scale;
    for (int i = 0; i < m; ++i) {
      if (!free[i] && grad[i] > add_val) {
        add_val = grad[i];
        add = i;
      }
    }
    if (add < 0) {
      if (kkt_residual(lambda, grad, scale) <= tol) return lambda;
      return std::nullopt;
    }
    free[add] = 1;
  }
  return std::nullopt;
}

}  // namespace detail

/// Maximizes the dual over the non-negative orthant with restarted accelerated projected
/// gradient ascent, periodically refined by an exact solve on the identified free set.
inline DualSolution solve_dual(const ConstraintSystem& sys, const DualQp& qp, const Vector& wind,
                               const DualSolveOptions& opts = {}) {
  const int m = qp.rows();
  if (wind.size() != sys.n_bus()) throw ValidationError("forecast vector has wrong length");
  const Vector q_vec = qp.q(wind);
  const double scale = 1.0 + q_vec.lpNorm<Eigen::Infinity>();
  const double inv_l = 2.0 / qp.q_norm;  // gradient Lipschitz constant is q_norm / 2

  DualSolution out;
  out.blocks = sys.blocks;
  SolverDiagnostics& diag = out.diagnostics;

  auto finish = [&](Vector lambda, bool polished) {
    const Vector grad = qp.gradient(lambda, q_vec);
    diag.kkt_residual = detail::kkt_residual(lambda, grad, scale);
    diag.polished = polished;
    diag.converged = diag.kkt_residual <= opts.kkt_tolerance;
    out.objective = qp.objective(lambda, q_vec);
    out.lambda = std::move(lambda);
  };

  Vector x = Vector::Zero(m);
  if (opts.initial) {
    if (opts.initial->size() != m) throw ValidationError("warm start has wrong length");
    x = opts.initial->cwiseMax(0.0);
    if (opts.polish) {
      ++diag.polish_attempts;
      if (auto p = detail::polish_dual(qp, q_vec, sys.tight_pairs, x, opts.kkt_tolerance,
                                       scale)) {
        finish(std::move(*p), true);
        return out;
      }
    }
  }

  Vector y = x;
  Vector x_old = x;
  double t = 1.0;
  std::vector<char> last_support;
  int stable_checks = 0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    diag.iterations = it;
    x_old = x;
    const Vector grad_y = qp.gradient(y, q_vec);
    x = (y + inv_l * grad_y).cwiseMax(0.0);
    if ((y - x).dot(x - x_old) > 0) {
      // Momentum points against the ascent step: restart from the current iterate.
      ++diag.restarts;
      t = 1.0;
      y = x;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x + ((t - 1.0) / t_next) * (x - x_old);
    t = t_next;

    if (it % 10 == 0) {
      const Vector grad = qp.gradient(x, q_vec);
      const double res = detail::kkt_residual(x, grad, scale);
      if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > 1e13) {
        throw InfeasibleError("dual is unbounded; the primal clearing is infeasible");
      }
      std::vector<char> support(m);
      for (int i = 0; i < m; ++i) support[i] = x[i] > 0;
      stable_checks = support == last_support ? stable_checks + 1 : 0;
      last_support = std::move(support);
      const bool try_polish = opts.polish && (res <= opts.kkt_tolerance || stable_checks == 3 ||
                                              it % opts.polish_every == 0);
      if (try_polish) {
        ++diag.polish_attempts;
        if (auto p = detail::polish_dual(qp, q_vec, sys.tight_pairs, x, opts.kkt_tolerance,
                                         scale)) {
          finish(std::move(*p), true);
          return out;
        }
      }
      if (res <= opts.kkt_tolerance) {
        finish(x, false);
        return out;
      }
    }
  }
  if (opts.polish) {
    ++diag.polish_attempts;
    if (auto p =
            detail::polish_dual(qp, q_vec, sys.tight_pairs, x, opts.kkt_tolerance, scale)) {
      finish(std::move(*p), true);
      return out;
    }
  }
  finish(x, false);
  if (!diag.converged && !opts.allow_unconverged) {
    throw ConvergenceError("dual solver hit its iteration budget of " +
                               std::to_string(opts.max_iterations),
                           diag.kkt_residual);
  }
  return out;
}

/// Primal dispatch from the stationarity map p = 1/2 C^-1 (A'l - c).
inline PrimalSolution recover_primal(const DualSolution& dual, const ConstraintSystem& sys) {
  if (dual.lambda.size() != sys.rows()) throw ValidationError("dual vector has wrong length");
  PrimalSolution out;
  out.p = 0.5 * (sys.A.transpose() * dual.lambda - sys.cost_lin).cwiseQuotient(sys.cost_quad);
  out.objective = sys.objective(out.p);
  return out;
}

/// Locational marginal prices: system price minus PTDF-weighted congestion rents.
inline PriceVector lmp(const DualSolution& dual, const PtdfMatrix& ptdf) {
  PriceVector out;
  out.pi = Vector::Constant(ptdf.cols(), dual.balance()) -
           ptdf.F.transpose() * (dual.flow_upper() - dual.flow_lower());
  // The reference column is zero, so this is exact already; pin it against rounding.
  out.pi[ptdf.ref_bus] = dual.balance();
  return out;
}

inline double duality_gap(const PrimalSolution& primal, const DualSolution& dual) {
  return std::abs(primal.objective - dual.objective) / std::max(1.0, std::abs(primal.objective));
}

/// Largest scaled violation of primal feasibility (balance, flows, bounds) at `p`.
inline double primal_infeasibility(const ConstraintSystem& sys, const Vector& p,
                                   const Vector& wind) {
  const Vector slack = sys.A * p - sys.b(wind);
  const double scale = 1.0 + sys.b(wind).lpNorm<Eigen::Infinity>();
  return std::max(0.0, -slack.minCoeff()) / scale;
}

/// Largest scaled complementarity product lambda_i * (A_i p - b_i).
inline double complementarity(const ConstraintSystem& sys, const DualSolution& dual,
                              const Vector& p, const Vector& wind) {
  const Vector slack = sys.A * p - sys.b(wind);
  const double scale = (1.0 + sys.b(wind).lpNorm<Eigen::Infinity>()) *
                       (1.0 + dual.lambda.lpNorm<Eigen::Infinity>());
  return dual.lambda.cwiseProduct(slack).cwiseAbs().maxCoeff() / scale;
}

/// Lines whose flow is within `tol` MW of its limit.
inline std::vector<int> binding_lines(const ConstraintSystem& sys, const Vector& p,
                                      const Vector& wind, double tol = 1e-6) {
  const Vector flow = sys.F * (p + wind - sys.load);
  std::vector<int> out;
  for (int l = 0; l < flow.size(); ++l) {
    if (std::abs(flow[l]) >= sys.limits[l] - tol * (1.0 + sys.limits[l])) out.push_back(l);
  }
  return out;
}

/// Case, PTDF, constraint system and dual bundled for repeated clearing at different
/// wind forecasts. Immutable after construction.
class MarketClearing {
 public:
  explicit MarketClearing(NetworkCase net, const AssembleOptions& opts = {})
      : net_(std::move(net)) {
    validate(net_);
    if (!net_.wind_bus) throw ValidationError("case '" + net_.name + "' has no wind farm");
    ptdf_ = compute_ptdf(net_);
    auto [sys, qp] = assemble(net_, ptdf_, opts);
    system_ = std::move(sys);
    qp_ = std::move(qp);
  }

  const NetworkCase& network() const { return net_; }
  const PtdfMatrix& ptdf() const { return ptdf_; }
  const ConstraintSystem& system() const { return system_; }
  const DualQp& qp() const { return qp_; }
  int wind_bus() const { return *net_.wind_bus; }
  double capacity() const { return net_.wind_capacity; }

  Vector injection(double wind_mw) const { return wind_injection(net_, wind_mw); }

  DualSolution solve(double wind_mw, const DualSolveOptions& opts = {}) const {
    return solve_dual(system_, qp_, injection(wind_mw), opts);
  }

  PriceVector prices(const DualSolution& dual) const { return lmp(dual, ptdf_); }

 private:
  NetworkCase net_;
  PtdfMatrix ptdf_;
  ConstraintSystem system_;
  DualQp qp_;
};

}  // namespace fairprice
