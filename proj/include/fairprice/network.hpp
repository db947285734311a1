#pragma once

// Power-system case model, PTDF construction, and case transforms.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "fairprice/error.hpp"

namespace fairprice {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Transmission line between two buses (0-based indices). Susceptance is 1/x in p.u.,
/// limit is in MW.
struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 0.0;
  double limit = 0.0;

  bool operator==(const Line&) const = default;
};

struct CaseMetadata {
  std::string source;
  double cost_floor = 1e-4;
  /// External ids of buses whose quadratic cost was raised to the floor.
  std::vector<int> floored_buses;
  std::vector<std::string> notes;

  bool operator==(const CaseMetadata&) const = default;
};

/// Bus-aggregated DC network. Per-bus vectors are indexed by internal bus index; bus_ids
/// holds the external numbering used in case files and on the command line.
struct NetworkCase {
  std::string name;
  std::vector<int> bus_ids;
  int ref_bus = 0;
  Vector load;       // MW
  Vector gen_min;    // MW
  Vector gen_max;    // MW
  Vector cost_lin;   // $/MWh
  Vector cost_quad;  // $/MW^2h
  std::vector<Line> lines;
  std::optional<int> wind_bus;
  double wind_capacity = 0.0;  // MW
  CaseMetadata metadata;

  int n_bus() const { return static_cast<int>(bus_ids.size()); }
  int n_line() const { return static_cast<int>(lines.size()); }

  bool dispatchable(int bus) const { return gen_max[bus] > gen_min[bus]; }

  int index_of(int bus_id) const {
    auto it = std::find(bus_ids.begin(), bus_ids.end(), bus_id);
    if (it == bus_ids.end()) {
      throw ValidationError("unknown bus id " + std::to_string(bus_id) + " in case '" + name +
                            "'");
    }
    return static_cast<int>(it - bus_ids.begin());
  }

  bool operator==(const NetworkCase& o) const {
    return name == o.name && bus_ids == o.bus_ids && ref_bus == o.ref_bus && load == o.load &&
           gen_min == o.gen_min && gen_max == o.gen_max && cost_lin == o.cost_lin &&
           cost_quad == o.cost_quad && lines == o.lines && wind_bus == o.wind_bus &&
           wind_capacity == o.wind_capacity && metadata == o.metadata;
  }
};

/// Line-by-bus injection-to-flow sensitivities. Column ref_bus is zero.
struct PtdfMatrix {
  Matrix F;
  int ref_bus = 0;

  int rows() const { return static_cast<int>(F.rows()); }
  int cols() const { return static_cast<int>(F.cols()); }
};

namespace detail {

/// Connected components of the line graph, each as a sorted list of bus indices.
inline std::vector<std::vector<int>> components(int n_bus, const std::vector<Line>& lines) {
  std::vector<std::vector<int>> adj(n_bus);
  for (const auto& l : lines) {
    adj[l.from].push_back(l.to);
    adj[l.to].push_back(l.from);
  }
  std::vector<int> label(n_bus, -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n_bus; ++s) {
    if (label[s] >= 0) continue;
    std::vector<int> comp;
    std::queue<int> frontier;
    frontier.push(s);
    label[s] = static_cast<int>(out.size());
    while (!frontier.empty()) {
      int u = frontier.front();
      frontier.pop();
      comp.push_back(u);
      for (int v : adj[u]) {
        if (label[v] < 0) {
          label[v] = label[s];
          frontier.push(v);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

inline std::string describe_buses(const NetworkCase& c, const std::vector<int>& idx) {
  std::ostringstream os;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k == 8 && idx.size() > 10) {
      os << ", ... (" << idx.size() << " buses)";
      break;
    }
    os << (k ? ", " : "") << c.bus_ids[idx[k]];
  }
  return os.str();
}

}  // namespace detail

/// Checks the structural invariants of a case. Throws ValidationError (or
/// DisconnectedError) with the first violation found.
inline void validate(const NetworkCase& c) {
  const int n = c.n_bus();
  if (n == 0) throw ValidationError("case '" + c.name + "' has no buses");
  auto sized = [&](const Vector& v, const char* what) {
    if (v.size() != n) {
      throw ValidationError(std::string(what) + " has " + std::to_string(v.size()) +
                            " entries, expected " + std::to_string(n));
    }
  };
  sized(c.load, "load");
  sized(c.gen_min, "gen_min");
  sized(c.gen_max, "gen_max");
  sized(c.cost_lin, "cost_lin");
  sized(c.cost_quad, "cost_quad");
  if (c.ref_bus < 0 || c.ref_bus >= n) throw ValidationError("reference bus out of range");
  for (int i = 0; i < n; ++i) {
    const std::string at = " at bus " + std::to_string(c.bus_ids[i]);
    if (!std::isfinite(c.load[i]) || c.load[i] < 0) throw ValidationError("negative load" + at);
    if (!(c.gen_min[i] <= c.gen_max[i])) throw ValidationError("gen_min > gen_max" + at);
    if (c.dispatchable(i) && !(c.cost_quad[i] > 0)) {
      throw ValidationError("non-positive quadratic cost on dispatchable generation" + at);
    }
  }
  for (std::size_t k = 0; k < c.lines.size(); ++k) {
    const auto& l = c.lines[k];
    const std::string at = " on line " + std::to_string(k);
    if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n || l.from == l.to) {
      throw ValidationError("invalid endpoints" + at);
    }
    if (!(l.limit > 0)) throw ValidationError("non-positive flow limit" + at);
    if (!(l.susceptance != 0) || !std::isfinite(l.susceptance)) {
      throw ValidationError("zero susceptance" + at);
    }
  }
  if (c.wind_bus && (*c.wind_bus < 0 || *c.wind_bus >= n)) {
    throw ValidationError("wind bus out of range");
  }
  auto comps = detail::components(n, c.lines);
  if (comps.size() > 1) {
    for (const auto& comp : comps) {
      if (!std::binary_search(comp.begin(), comp.end(), c.ref_bus)) {
        throw DisconnectedError("case '" + c.name + "' is disconnected; buses {" +
                                detail::describe_buses(c, comp) +
                                "} are not reachable from the reference bus");
      }
    }
  }
}

/// Raises the quadratic cost of every dispatchable bus to at least `floor` and records
/// the adjusted buses in the case metadata.
inline NetworkCase apply_cost_floor(NetworkCase c, double floor = 1e-4) {
  if (!(floor > 0)) throw ValidationError("quadratic cost floor must be positive");
  c.metadata.cost_floor = floor;
  for (int i = 0; i < c.n_bus(); ++i) {
    if (c.dispatchable(i) && c.cost_quad[i] < floor) {
      c.cost_quad[i] = floor;
      if (std::find(c.metadata.floored_buses.begin(), c.metadata.floored_buses.end(),
                    c.bus_ids[i]) == c.metadata.floored_buses.end()) {
        c.metadata.floored_buses.push_back(c.bus_ids[i]);
      }
    }
  }
  return c;
}

/// PTDF built with an arbitrary angle-reference bus. The returned matrix has a zero column
/// at `angle_ref`; flows for balanced injections do not depend on the choice.
inline PtdfMatrix compute_ptdf_with_reference(const NetworkCase& c, int angle_ref) {
  const int n = c.n_bus();
  const int e = c.n_line();
  if (angle_ref < 0 || angle_ref >= n) throw ValidationError("angle reference out of range");
  auto comps = detail::components(n, c.lines);
  if (comps.size() > 1) {
    for (const auto& comp : comps) {
      if (!std::binary_search(comp.begin(), comp.end(), angle_ref)) {
        throw DisconnectedError("cannot build PTDF: buses {" + detail::describe_buses(c, comp) +
                                "} form a component disconnected from the reference");
      }
    }
  }
  for (const auto& l : c.lines) {
    if (l.susceptance == 0) throw ValidationError("cannot build PTDF: zero susceptance");
  }

  // Reduced nodal susceptance matrix with the reference row/column removed.
  auto reduced = [angle_ref](int i) { return i < angle_ref ? i : i - 1; };
  Matrix B = Matrix::Zero(n - 1, n - 1);
  for (const auto& l : c.lines) {
    const double b = l.susceptance;
    if (l.from != angle_ref) B(reduced(l.from), reduced(l.from)) += b;
    if (l.to != angle_ref) B(reduced(l.to), reduced(l.to)) += b;
    if (l.from != angle_ref && l.to != angle_ref) {
      B(reduced(l.from), reduced(l.to)) -= b;
      B(reduced(l.to), reduced(l.from)) -= b;
    }
  }
  // Angles per unit injection: theta = X * injection, theta_ref = 0.
  Matrix X = Matrix::Zero(n, n);
  if (n > 1) {
    Matrix Xr = B.partialPivLu().solve(Matrix::Identity(n - 1, n - 1));
    for (int i = 0; i < n; ++i) {
      if (i == angle_ref) continue;
      for (int k = 0; k < n; ++k) {
        if (k == angle_ref) continue;
        X(i, k) = Xr(reduced(i), reduced(k));
      }
    }
  }
  PtdfMatrix out;
  out.ref_bus = angle_ref;
  out.F.resize(e, n);
  for (int l = 0; l < e; ++l) {
    const auto& line = c.lines[l];
    out.F.row(l) = line.susceptance * (X.row(line.from) - X.row(line.to));
  }
  out.F.col(angle_ref).setZero();
  return out;
}

/// PTDF relative to the case's reference bus.
inline PtdfMatrix compute_ptdf(const NetworkCase& c) {
  return compute_ptdf_with_reference(c, c.ref_bus);
}

inline NetworkCase scale_line_limits(NetworkCase c, double factor) {
  if (!(factor > 0) || !std::isfinite(factor)) {
    throw ValidationError("line-limit scale factor must be positive, got " +
                          std::to_string(factor));
  }
  for (auto& l : c.lines) l.limit *= factor;
  return c;
}

/// Places the wind farm at the bus with external id `bus_id`.
inline NetworkCase install_wind_farm(NetworkCase c, int bus_id, double capacity) {
  if (!(capacity > 0) || !std::isfinite(capacity)) {
    throw ValidationError("wind capacity must be positive");
  }
  c.wind_bus = c.index_of(bus_id);
  c.wind_capacity = capacity;
  return c;
}

/// Per-bus injection vector with `mw` at the wind bus and zero elsewhere.
inline Vector wind_injection(const NetworkCase& c, double mw) {
  if (!c.wind_bus) throw ValidationError("case '" + c.name + "' has no wind farm installed");
  Vector w = Vector::Zero(c.n_bus());
  w[*c.wind_bus] = mw;
  return w;
}

}  // namespace fairprice
