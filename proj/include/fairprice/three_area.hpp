#pragma once

// Three-area system assembled from a single 24-bus reliability test area, in the style of
// the 1996 multi-area reliability test system: three copies joined by tie lines plus one
// extra bus on a radial-style link between areas 1 and 3. Buses are renumbered 1..73 in
// area order (area k bus j -> 24*(k-1) + j), with the extra bus last.

#include <array>
#include <string>

#include "fairprice/network.hpp"

namespace fairprice {

struct TieLine {
  int from;  // area-local id as area*100 + bus, or 325 for the extra bus
  int to;
  double reactance;  // p.u. on a 100 MVA base
  double limit;      // MW
};

inline const std::array<TieLine, 6>& three_area_ties() {
  static const std::array<TieLine, 6> ties{{{107, 203, 0.161, 175.0},
                                            {113, 215, 0.075, 500.0},
                                            {123, 217, 0.074, 500.0},
                                            {223, 318, 0.097, 500.0},
                                            {121, 325, 0.052, 500.0},
                                            {325, 323, 0.052, 500.0}}};
  return ties;
}

inline NetworkCase make_three_area(const NetworkCase& area) {
  validate(area);
  if (area.n_bus() != 24) throw ValidationError("three-area builder expects a 24-bus area");
  for (int j = 0; j < 24; ++j) {
    if (area.bus_ids[j] != j + 1) throw ValidationError("area buses must be numbered 1..24");
  }
  const int n = 73;
  NetworkCase c;
  c.name = "case73_three_area";
  c.bus_ids.resize(n);
  c.load = Vector::Zero(n);
  c.gen_min = Vector::Zero(n);
  c.gen_max = Vector::Zero(n);
  c.cost_lin = Vector::Zero(n);
  c.cost_quad = Vector::Zero(n);
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 24; ++j) {
      const int i = 24 * k + j;
      c.bus_ids[i] = i + 1;
      c.load[i] = area.load[j];
      c.gen_min[i] = area.gen_min[j];
      c.gen_max[i] = area.gen_max[j];
      c.cost_lin[i] = area.cost_lin[j];
      c.cost_quad[i] = area.cost_quad[j];
    }
    for (const auto& l : area.lines) {
      c.lines.push_back({24 * k + l.from, 24 * k + l.to, l.susceptance, l.limit});
    }
  }
  c.bus_ids[72] = 73;
  auto index = [](int local) {
    if (local == 325) return 72;
    return 24 * (local / 100 - 1) + (local % 100) - 1;
  };
  for (const auto& t : three_area_ties()) {
    c.lines.push_back({index(t.from), index(t.to), 1.0 / t.reactance, t.limit});
  }
  c.ref_bus = area.ref_bus;
  c.metadata = area.metadata;
  c.metadata.source = "three copies of " + area.name + " joined by tie lines";
  c.metadata.floored_buses.clear();
  for (int k = 0; k < 3; ++k) {
    for (int id : area.metadata.floored_buses) c.metadata.floored_buses.push_back(24 * k + id);
  }
  c.metadata.notes.push_back(
      "approximation of the 73-bus multi-area test system; tie-line data is indicative");
  validate(c);
  return c;
}

}  // namespace fairprice
