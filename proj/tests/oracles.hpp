#pragma once

// Test-side reference implementations. Nothing here calls into the library's solvers:
// flows come from a Laplacian pseudo-inverse, clearing results from brute-force KKT
// enumeration over the primal.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fairprice/network.hpp"

namespace oracle {

using fairprice::Matrix;
using fairprice::NetworkCase;
using fairprice::Vector;

/// Line flows for a balanced injection vector via the pseudo-inverse of the full
/// weighted Laplacian.
inline Vector dc_flows(const NetworkCase& c, const Vector& injection) {
  const int n = c.n_bus();
  Matrix L = Matrix::Zero(n, n);
  for (const auto& l : c.lines) {
    L(l.from, l.from) += l.susceptance;
    L(l.to, l.to) += l.susceptance;
    L(l.from, l.to) -= l.susceptance;
    L(l.to, l.from) -= l.susceptance;
  }
  const Vector theta = L.completeOrthogonalDecomposition().pseudoInverse() * injection;
  Vector f(c.n_line());
  for (int k = 0; k < c.n_line(); ++k) {
    const auto& l = c.lines[k];
    f[k] = l.susceptance * (theta[l.from] - theta[l.to]);
  }
  return f;
}

/// PTDF column by column: one unit in at bus k, one unit out at `ref`.
inline Matrix ptdf(const NetworkCase& c, int ref) {
  Matrix F = Matrix::Zero(c.n_line(), c.n_bus());
  for (int k = 0; k < c.n_bus(); ++k) {
    if (k == ref) continue;
    Vector x = Vector::Zero(c.n_bus());
    x[k] = 1.0;
    x[ref] = -1.0;
    F.col(k) = dc_flows(c, x);
  }
  return F;
}

struct Clearing {
  Vector p;       // per bus
  double cost = 0;
  double nu = 0;  // balance multiplier
  Vector mu_up;   // per line
  Vector mu_lo;
  Vector pi;      // per bus
  std::vector<int> active;  // indices into the stacked inequality list
};

/// Exhaustive active-set search for
///   min sum C_i p_i^2 + c_i p_i  s.t.  1'(p + w - d) = 0,  |F(p + w - d)| <= fbar,
///   lo <= p <= hi,
/// over buses with hi > lo (others sit at lo). The KKT point is unique for positive C,
/// so the first subset that passes primal and dual feasibility is the answer.
inline std::optional<Clearing> enumerate_clearing(const NetworkCase& c, const Vector& wind,
                                                  double tol = 1e-7) {
  const int n = c.n_bus();
  const int e = c.n_line();
  const Matrix F = ptdf(c, c.ref_bus);
  std::vector<int> free_idx;
  Vector fixed = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (c.gen_max[i] > c.gen_min[i]) {
      free_idx.push_back(i);
    } else {
      fixed[i] = c.gen_min[i];
    }
  }
  const int nf = static_cast<int>(free_idx.size());
  const Vector base = fixed + wind - c.load;

  // Stacked G p <= h: flow upper, flow lower, gen upper, gen lower.
  const int m = 2 * e + 2 * nf;
  Matrix G = Matrix::Zero(m, nf);
  Vector h(m);
  for (int l = 0; l < e; ++l) {
    for (int k = 0; k < nf; ++k) {
      G(l, k) = F(l, free_idx[k]);
      G(e + l, k) = -F(l, free_idx[k]);
    }
    const double fb = F.row(l).dot(base);
    h[l] = c.lines[l].limit - fb;
    h[e + l] = c.lines[l].limit + fb;
  }
  for (int k = 0; k < nf; ++k) {
    G(2 * e + k, k) = 1.0;
    h[2 * e + k] = c.gen_max[free_idx[k]];
    G(2 * e + nf + k, k) = -1.0;
    h[2 * e + nf + k] = -c.gen_min[free_idx[k]];
  }
  const double rhs_balance = -base.sum();

  std::vector<int> subset;
  std::optional<Clearing> found;
  auto try_subset = [&]() {
    const int s = static_cast<int>(subset.size());
    const int dim = nf + 1 + s;
    Matrix K = Matrix::Zero(dim, dim);
    Vector r = Vector::Zero(dim);
    for (int k = 0; k < nf; ++k) {
      K(k, k) = 2.0 * c.cost_quad[free_idx[k]];
      K(k, nf) = -1.0;
      K(nf, k) = 1.0;
      r[k] = -c.cost_lin[free_idx[k]];
    }
    r[nf] = rhs_balance;
    for (int j = 0; j < s; ++j) {
      for (int k = 0; k < nf; ++k) {
        K(k, nf + 1 + j) = G(subset[j], k);
        K(nf + 1 + j, k) = G(subset[j], k);
      }
      r[nf + 1 + j] = h[subset[j]];
    }
    Eigen::FullPivLU<Matrix> lu(K);
    if (lu.rank() < dim) return;
    const Vector x = lu.solve(r);
    if ((K * x - r).norm() > 1e-8 * (1.0 + r.norm())) return;
    const Vector p = x.head(nf);
    const Vector slack = h - G * p;
    if (slack.minCoeff() < -tol * (1.0 + h.cwiseAbs().maxCoeff())) return;
    for (int j = 0; j < s; ++j) {
      if (x[nf + 1 + j] < -tol) return;
    }
    Clearing out;
    out.p = fixed;
    for (int k = 0; k < nf; ++k) out.p[free_idx[k]] = p[k];
    out.cost = (c.cost_quad.array() * out.p.array().square()).sum() + c.cost_lin.dot(out.p);
    out.nu = x[nf];
    Vector mu = Vector::Zero(m);
    for (int j = 0; j < s; ++j) mu[subset[j]] = x[nf + 1 + j];
    out.mu_up = mu.head(e);
    out.mu_lo = mu.segment(e, e);
    out.pi = Vector::Constant(n, out.nu) - F.transpose() * (out.mu_up - out.mu_lo);
    out.active = subset;
    found = out;
  };
  // Depth-first over subsets of size <= nf (at most nf independent active rows).
  std::function<void(int)> rec = [&](int start) {
    if (found) return;
    try_subset();
    if (found || static_cast<int>(subset.size()) == nf) return;
    for (int i = start; i < m && !found; ++i) {
      subset.push_back(i);
      rec(i + 1);
      subset.pop_back();
    }
  };
  rec(0);
  return found;
}

/// Random connected case with `n` buses; generators on every other bus, one wind bus.
inline NetworkCase random_case(int n, std::mt19937_64& rng, int extra_lines = 2) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NetworkCase c;
  c.name = "random" + std::to_string(n);
  c.bus_ids.resize(n);
  for (int i = 0; i < n; ++i) c.bus_ids[i] = i + 1;
  c.ref_bus = static_cast<int>(rng() % n);
  c.load = Vector::Zero(n);
  c.gen_min = Vector::Zero(n);
  c.gen_max = Vector::Zero(n);
  c.cost_lin = Vector::Zero(n);
  c.cost_quad = Vector::Zero(n);
  double total_load = 0;
  for (int i = 0; i < n; ++i) {
    c.load[i] = 20 + 80 * u(rng);
    total_load += c.load[i];
  }
  for (int i = 0; i < n; i += 2) {
    c.gen_max[i] = total_load;
    c.cost_lin[i] = 5 + 30 * u(rng);
    c.cost_quad[i] = 0.005 + 0.05 * u(rng);
  }
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(rng() % i);
    c.lines.push_back({j, i, 5 + 20 * u(rng), 1e4});
  }
  for (int k = 0; k < extra_lines; ++k) {
    const int a = static_cast<int>(rng() % n);
    const int b = static_cast<int>(rng() % n);
    if (a != b) c.lines.push_back({a, b, 5 + 20 * u(rng), 1e4});
  }
  // Limits at a random fraction of the unconstrained flows, so some lines bind.
  std::vector<int> gens;
  for (int i = 0; i < n; ++i) {
    if (c.gen_max[i] > 0) gens.push_back(i);
  }
  Vector inj = -c.load;
  for (int g : gens) inj[g] += total_load / static_cast<double>(gens.size());
  const Vector f = dc_flows(c, inj);
  for (int k = 0; k < c.n_line(); ++k) {
    c.lines[k].limit = std::max(15.0, std::abs(f[k]) * (0.6 + 0.8 * u(rng)));
  }
  c.wind_bus = 1 % n;
  c.wind_capacity = 0.5 * total_load;
  return c;
}

}  // namespace oracle
