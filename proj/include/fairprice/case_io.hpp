#pragma once

// Case ingestion: MATPOWER v2 subset import and the canonical JSON case format.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fairprice/error.hpp"
#include "fairprice/network.hpp"

namespace fairprice {

struct MatpowerOptions {
  /// Quadratic cost floor for dispatchable buses, $/MW^2h.
  double cost_floor = 1e-4;
  /// Angle difference used to rate branches whose RATE_A is zero (unlimited in MATPOWER).
  double unrated_angle_deg = 30.0;
};

namespace detail {

struct MatpowerTable {
  std::vector<std::vector<double>> rows;
  std::vector<int> line_of_row;
  int start_line = 0;
};

inline std::string strip_comment(const std::string& s) {
  auto pos = s.find('%');
  return pos == std::string::npos ? s : s.substr(0, pos);
}

inline std::map<std::string, MatpowerTable> read_matpower_tables(const std::string& text,
                                                                 double& base_mva) {
  std::map<std::string, MatpowerTable> tables;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  MatpowerTable* open = nullptr;
  std::vector<double> row;
  int row_line = 0;

  auto flush_row = [&]() {
    if (!row.empty()) {
      open->rows.push_back(row);
      open->line_of_row.push_back(row_line);
      row.clear();
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    std::size_t pos = 0;
    if (!open) {
      auto mpc = line.find("mpc.");
      if (mpc == std::string::npos) continue;
      auto eq = line.find('=', mpc);
      if (eq == std::string::npos) continue;
      std::string name = line.substr(mpc + 4, eq - mpc - 4);
      name.erase(name.find_last_not_of(" \t") + 1);
      std::string rhs = line.substr(eq + 1);
      auto bracket = rhs.find('[');
      if (bracket == std::string::npos) {
        if (name == "baseMVA") {
          std::string v = rhs.substr(0, rhs.find(';'));
          try {
            base_mva = std::stod(v);
          } catch (const std::exception&) {
            throw ParseError("malformed baseMVA value", line_no);
          }
        }
        continue;
      }
      open = &tables[name];
      open->start_line = line_no;
      line = rhs;
      pos = bracket + 1;
    }
    // Inside a table: numbers separated by whitespace/commas, rows end at ';' or newline.
    while (pos < line.size()) {
      char ch = line[pos];
      if (ch == ' ' || ch == '\t' || ch == ',' || ch == '\r') {
        ++pos;
      } else if (ch == ';') {
        flush_row();
        ++pos;
      } else if (ch == ']') {
        flush_row();
        open = nullptr;
        break;
      } else {
        std::size_t end = pos;
        while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != ',' &&
               line[end] != ';' && line[end] != ']' && line[end] != '\r') {
          ++end;
        }
        const std::string tok = line.substr(pos, end - pos);
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size()) {
          throw ParseError("malformed number '" + tok + "'", line_no, static_cast<int>(pos + 1));
        }
        if (row.empty()) row_line = line_no;
        row.push_back(v);
        pos = end;
      }
    }
    if (open) flush_row();
  }
  if (open) throw ParseError("unterminated table", open->start_line);
  return tables;
}

inline const MatpowerTable& require_table(const std::map<std::string, MatpowerTable>& t,
                                          const std::string& name, std::size_t min_cols) {
  auto it = t.find(name);
  if (it == t.end()) throw ParseError("missing table mpc." + name);
  for (std::size_t r = 0; r < it->second.rows.size(); ++r) {
    if (it->second.rows[r].size() < min_cols) {
      throw ParseError("mpc." + name + " row has " + std::to_string(it->second.rows[r].size()) +
                           " columns, expected at least " + std::to_string(min_cols),
                       it->second.line_of_row[r]);
    }
  }
  return it->second;
}

}  // namespace detail

/// Parses MATPOWER case format v2 text (bus, branch, gen, gencost tables with polynomial
/// costs) into a bus-aggregated case. Unsupported data is ignored and noted in metadata.
inline NetworkCase parse_matpower(const std::string& text, const std::string& name = "case",
                                  const MatpowerOptions& opts = {}) {
  double base_mva = 100.0;
  const auto tables = detail::read_matpower_tables(text, base_mva);
  const auto& bus = detail::require_table(tables, "bus", 13);
  const auto& gen = detail::require_table(tables, "gen", 10);
  const auto& branch = detail::require_table(tables, "branch", 11);
  const auto& gencost = detail::require_table(tables, "gencost", 4);

  NetworkCase c;
  c.name = name;
  c.metadata.source = "matpower";
  std::map<int, int> index;
  std::vector<double> load;
  int ref = -1;
  int shunts = 0;
  for (std::size_t r = 0; r < bus.rows.size(); ++r) {
    const auto& row = bus.rows[r];
    const int id = static_cast<int>(row[0]);
    const int type = static_cast<int>(row[1]);
    if (type == 4) {
      c.metadata.notes.push_back("isolated bus " + std::to_string(id) + " dropped");
      continue;
    }
    if (index.count(id)) throw ParseError("duplicate bus id " + std::to_string(id), bus.line_of_row[r]);
    if (row[2] < 0) {
      throw ParseError("negative demand at bus " + std::to_string(id), bus.line_of_row[r], 3);
    }
    index[id] = static_cast<int>(c.bus_ids.size());
    if (type == 3 && ref < 0) ref = static_cast<int>(c.bus_ids.size());
    c.bus_ids.push_back(id);
    load.push_back(row[2]);
    if (row[4] != 0 || row[5] != 0) ++shunts;
  }
  if (ref < 0) throw ParseError("no reference bus (type 3) in mpc.bus", bus.start_line);
  if (shunts) {
    c.metadata.notes.push_back(std::to_string(shunts) + " bus shunts ignored (DC model)");
  }
  const int n = static_cast<int>(c.bus_ids.size());
  c.ref_bus = ref;
  c.load = Eigen::Map<Vector>(load.data(), n);

  if (gencost.rows.size() < gen.rows.size()) {
    throw ParseError("mpc.gencost has fewer rows than mpc.gen", gencost.start_line);
  }
  struct Unit {
    double pmin, pmax, c2, c1, c0;
  };
  std::vector<std::vector<Unit>> units(n);
  for (std::size_t g = 0; g < gen.rows.size(); ++g) {
    const auto& row = gen.rows[g];
    const auto& cost = gencost.rows[g];
    const int line = gencost.line_of_row[g];
    const int model = static_cast<int>(cost[0]);
    if (model == 1) {
      throw ParseError("piecewise-linear gencost (model 1) is not supported", line, 1);
    }
    if (model != 2) throw ParseError("unknown gencost model " + std::to_string(model), line, 1);
    const int ncost = static_cast<int>(cost[3]);
    if (ncost < 1 || ncost > 3) {
      throw ParseError("polynomial gencost of degree " + std::to_string(ncost - 1) +
                           " is not supported (degree <= 2 only)",
                       line, 4);
    }
    if (cost.size() < static_cast<std::size_t>(4 + ncost)) {
      throw ParseError("gencost row is missing coefficients", line);
    }
    if (row[7] <= 0) continue;  // out of service
    const int id = static_cast<int>(row[0]);
    auto it = index.find(id);
    if (it == index.end()) {
      throw ParseError("generator at unknown bus " + std::to_string(id), gen.line_of_row[g], 1);
    }
    double coef[3] = {0, 0, 0};  // c2, c1, c0
    for (int k = 0; k < ncost; ++k) coef[3 - ncost + k] = cost[4 + k];
    if (row[9] > row[8]) {
      throw ParseError("generator PMIN exceeds PMAX", gen.line_of_row[g], 10);
    }
    units[it->second].push_back({row[9], row[8], coef[0], coef[1], coef[2]});
  }

  c.gen_min = Vector::Zero(n);
  c.gen_max = Vector::Zero(n);
  c.cost_lin = Vector::Zero(n);
  c.cost_quad = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto& us = units[i];
    if (us.empty()) continue;
    double lo = 0, hi = 0;
    for (const auto& u : us) {
      lo += u.pmin;
      hi += u.pmax;
    }
    c.gen_min[i] = lo;
    c.gen_max[i] = hi;
    if (hi - lo <= 0) {
      for (const auto& u : us) {
        c.cost_quad[i] += u.c2;
        c.cost_lin[i] += u.c1;
      }
      continue;
    }
    // Quadratic through total output/cost at the min, mid and max operating points.
    double P[3], Y[3];
    for (int k = 0; k < 3; ++k) {
      const double t = 0.5 * k;
      P[k] = 0;
      Y[k] = 0;
      for (const auto& u : us) {
        const double p = u.pmin + t * (u.pmax - u.pmin);
        P[k] += p;
        Y[k] += u.c2 * p * p + u.c1 * p + u.c0;
      }
    }
    const double s01 = (Y[1] - Y[0]) / (P[1] - P[0]);
    const double s12 = (Y[2] - Y[1]) / (P[2] - P[1]);
    c.cost_quad[i] = (s12 - s01) / (P[2] - P[0]);
    c.cost_lin[i] = s01 - c.cost_quad[i] * (P[0] + P[1]);
    if (us.size() > 1) {
      c.metadata.notes.push_back(std::to_string(us.size()) + " generators merged at bus " +
                                 std::to_string(c.bus_ids[i]));
    }
  }

  int unrated = 0, transformers = 0;
  for (std::size_t r = 0; r < branch.rows.size(); ++r) {
    const auto& row = branch.rows[r];
    const int line = branch.line_of_row[r];
    if (row[10] <= 0) continue;  // out of service
    auto f = index.find(static_cast<int>(row[0]));
    auto t = index.find(static_cast<int>(row[1]));
    if (f == index.end() || t == index.end()) {
      throw ParseError("branch references unknown or isolated bus", line, f == index.end() ? 1 : 2);
    }
    const double x = row[3];
    if (x == 0) throw ParseError("branch with zero reactance", line, 4);
    double limit = row[5];
    if (limit <= 0) {
      limit = base_mva * opts.unrated_angle_deg * std::numbers::pi / 180.0 / std::abs(x);
      ++unrated;
    }
    if ((row[8] != 0 && row[8] != 1) || row[9] != 0) ++transformers;
    c.lines.push_back({f->second, t->second, 1.0 / x, limit});
  }
  if (unrated) {
    c.metadata.notes.push_back(std::to_string(unrated) +
                               " unrated branches limited at baseMVA*" +
                               std::to_string(opts.unrated_angle_deg) + "deg/x");
  }
  if (transformers) {
    c.metadata.notes.push_back(std::to_string(transformers) +
                               " tap ratios/phase shifts ignored (DC model)");
  }
  c = apply_cost_floor(std::move(c), opts.cost_floor);
  validate(c);
  return c;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string stem_of(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

// Canonical JSON case format ("fairprice-case/1"). Buses and lines refer to external ids.

inline nlohmann::json case_to_json(const NetworkCase& c) {
  using nlohmann::json;
  json buses = json::array();
  for (int i = 0; i < c.n_bus(); ++i) {
    buses.push_back({{"id", c.bus_ids[i]},
                     {"load", c.load[i]},
                     {"gen_min", c.gen_min[i]},
                     {"gen_max", c.gen_max[i]},
                     {"cost_lin", c.cost_lin[i]},
                     {"cost_quad", c.cost_quad[i]}});
  }
  json lines = json::array();
  for (const auto& l : c.lines) {
    lines.push_back({{"from", c.bus_ids[l.from]},
                     {"to", c.bus_ids[l.to]},
                     {"susceptance", l.susceptance},
                     {"limit", l.limit}});
  }
  json j = {{"format", "fairprice-case/1"},
            {"name", c.name},
            {"ref_bus", c.bus_ids[c.ref_bus]},
            {"buses", buses},
            {"lines", lines},
            {"metadata",
             {{"source", c.metadata.source},
              {"cost_floor", c.metadata.cost_floor},
              {"floored_buses", c.metadata.floored_buses},
              {"notes", c.metadata.notes}}}};
  if (c.wind_bus) {
    j["wind"] = {{"bus", c.bus_ids[*c.wind_bus]}, {"capacity", c.wind_capacity}};
  } else {
    j["wind"] = nullptr;
  }
  return j;
}

inline NetworkCase case_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != "fairprice-case/1") {
      throw ParseError("not a fairprice-case/1 document");
    }
    NetworkCase c;
    c.name = j.at("name").get<std::string>();
    const auto& buses = j.at("buses");
    const int n = static_cast<int>(buses.size());
    c.load.resize(n);
    c.gen_min.resize(n);
    c.gen_max.resize(n);
    c.cost_lin.resize(n);
    c.cost_quad.resize(n);
    for (int i = 0; i < n; ++i) {
      const auto& b = buses[i];
      c.bus_ids.push_back(b.at("id").get<int>());
      c.load[i] = b.at("load").get<double>();
      c.gen_min[i] = b.at("gen_min").get<double>();
      c.gen_max[i] = b.at("gen_max").get<double>();
      c.cost_lin[i] = b.at("cost_lin").get<double>();
      c.cost_quad[i] = b.at("cost_quad").get<double>();
    }
    c.ref_bus = c.index_of(j.at("ref_bus").get<int>());
    for (const auto& l : j.at("lines")) {
      c.lines.push_back({c.index_of(l.at("from").get<int>()), c.index_of(l.at("to").get<int>()),
                         l.at("susceptance").get<double>(), l.at("limit").get<double>()});
    }
    if (j.contains("wind") && !j["wind"].is_null()) {
      c.wind_bus = c.index_of(j["wind"].at("bus").get<int>());
      c.wind_capacity = j["wind"].at("capacity").get<double>();
    }
    if (j.contains("metadata")) {
      const auto& m = j["metadata"];
      c.metadata.source = m.value("source", std::string());
      c.metadata.cost_floor = m.value("cost_floor", 1e-4);
      c.metadata.floored_buses = m.value("floored_buses", std::vector<int>{});
      c.metadata.notes = m.value("notes", std::vector<std::string>{});
    }
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("case JSON: ") + e.what());
  }
}

/// Loads a case from a MATPOWER `.m` file or a canonical `.json` file.
inline NetworkCase load_case(const std::string& path, const MatpowerOptions& opts = {}) {
  const std::string text = read_text_file(path);
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("case JSON: ") + e.what());
    }
    return case_from_json(j);
  }
  try {
    return parse_matpower(text, stem_of(path), opts);
  } catch (const ParseError& e) {
    throw e.prefixed(path);
  }
}

}  // namespace fairprice
