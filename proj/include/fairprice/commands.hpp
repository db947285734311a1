#pragma once

// Run configuration and the command implementations behind the CLI. Kept in the library so
// tests can drive them in-process.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fairprice/case_io.hpp"
#include "fairprice/deepwp.hpp"
#include "fairprice/diffopt.hpp"
#include "fairprice/metrics.hpp"
#include "fairprice/network.hpp"
#include "fairprice/opf.hpp"
#include "fairprice/wind_data.hpp"

namespace fairprice {

namespace fs = std::filesystem;

/// Wind records from a CSV file or the synthetic generator.
struct DataSource {
  bool synthetic = true;
  std::string path;
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  WindCsvSchema schema;

  /// "csv:<path>" or "synth:<n>:<seed>".
  static DataSource parse(const std::string& spec) {
    DataSource d;
    if (spec.rfind("csv:", 0) == 0) {
      d.synthetic = false;
      d.path = spec.substr(4);
      if (d.path.empty()) throw ValidationError("empty CSV path in data source '" + spec + "'");
      return d;
    }
    if (spec.rfind("synth:", 0) == 0) {
      const std::string rest = spec.substr(6);
      const auto colon = rest.find(':');
      try {
        std::size_t used = 0;
        const std::string ns = rest.substr(0, colon);
        const long long n = std::stoll(ns, &used);
        if (used != ns.size() || n <= 0) throw std::invalid_argument("n");
        d.n = static_cast<std::size_t>(n);
        if (colon != std::string::npos) {
          const std::string ss = rest.substr(colon + 1);
          d.seed = std::stoull(ss, &used);
          if (used != ss.size()) throw std::invalid_argument("seed");
        }
      } catch (const std::exception&) {
        throw ValidationError("malformed data source '" + spec + "' (expected synth:<n>:<seed>)");
      }
      return d;
    }
    throw ValidationError("unknown data source '" + spec + "' (expected csv:<path> or synth:<n>:<seed>)");
  }

  std::string to_string() const {
    return synthetic ? "synth:" + std::to_string(n) + ":" + std::to_string(seed) : "csv:" + path;
  }

  WindDataset load() const {
    return synthetic ? synthesize_wind(n, seed) : load_wind_csv(path, schema);
  }
};

/// "1-5", "1,3,7" or a mix such as "1-3,9".
inline std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(spec);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) {
      if (part.empty()) continue;
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto a = std::stoull(part.substr(0, dash));
        const auto b = std::stoull(part.substr(dash + 1));
        if (b < a) throw std::invalid_argument("range");
        for (auto s = a; s <= b; ++s) out.push_back(s);
      }
    }
  } catch (const std::exception&) {
    throw ValidationError("malformed seed list '" + spec + "'");
  }
  if (out.empty()) throw ValidationError("seed list is empty");
  return out;
}

/// Comma-separated epochs per stage; the price-aware switch moves to the end of stage one.
inline void apply_epochs_override(TrainSchedule& s, const std::string& spec) {
  std::vector<int> epochs;
  std::stringstream ss(spec);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) {
      std::size_t used = 0;
      const int e = std::stoi(part, &used);
      if (used != part.size() || e < 0) throw std::invalid_argument("epochs");
      epochs.push_back(e);
    }
  } catch (const std::exception&) {
    throw ValidationError("malformed epochs override '" + spec + "'");
  }
  if (epochs.size() != s.stages.size()) {
    throw ValidationError("epochs override lists " + std::to_string(epochs.size()) +
                          " stages but the schedule has " + std::to_string(s.stages.size()));
  }
  for (std::size_t k = 0; k < epochs.size(); ++k) s.stages[k].epochs = epochs[k];
  s.switch_epoch = epochs.front();
}

struct RunConfig {
  std::string name = "run";
  std::string case_path;
  std::optional<int> wind_bus;  // external id
  std::optional<double> wind_capacity;
  double fbar_scale = 1.0;
  double cost_floor = 1e-4;
  DataSource data;
  SplitSpec split{1000, 1000, 11};
  TrainSchedule schedule;
  std::string mode = "both";
  std::vector<std::uint64_t> seeds{1};
  std::string out = "runs";
  std::string run_id;

  std::string effective_run_id() const { return run_id.empty() ? name : run_id; }
};

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.schedule.stages) stages.push_back({{"epochs", s.epochs}, {"lr", s.lr}});
  nlohmann::json j = {{"name", c.name},
                      {"case", c.case_path},
                      {"fbar_scale", c.fbar_scale},
                      {"cost_floor", c.cost_floor},
                      {"data", c.data.to_string()},
                      {"split", {{"train", c.split.train}, {"test", c.split.test}, {"seed", c.split.seed}}},
                      {"schedule",
                       {{"stages", stages},
                        {"switch_epoch", c.schedule.switch_epoch},
                        {"gamma", c.schedule.gamma},
                        {"batch_size", c.schedule.batch_size},
                        {"unsquared", c.schedule.unsquared},
                        {"architecture", c.schedule.architecture}}},
                      {"mode", c.mode},
                      {"seeds", c.seeds}};
  j["wind_bus"] = c.wind_bus ? nlohmann::json(*c.wind_bus) : nlohmann::json(nullptr);
  j["wind_capacity"] = c.wind_capacity ? nlohmann::json(*c.wind_capacity) : nlohmann::json(nullptr);
  if (!c.data.synthetic) {
    j["csv_schema"] = {{"power", c.data.schema.power},
                       {"speed", c.data.schema.speed},
                       {"direction", c.data.schema.direction},
                       {"pitch", c.data.schema.pitch},
                       {"capacity", c.data.schema.capacity}};
  }
  return j;
}

/// Reads a run configuration. Relative case and CSV paths resolve against `base_dir`.
inline RunConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return (path.is_relative() && !base_dir.empty() ? base_dir / path : path).lexically_normal().string();
  };
  try {
    c.name = j.value("name", c.name);
    c.case_path = resolve(j.at("case").get<std::string>());
    if (j.contains("wind_bus") && !j["wind_bus"].is_null()) c.wind_bus = j["wind_bus"].get<int>();
    if (j.contains("wind_capacity") && !j["wind_capacity"].is_null()) {
      c.wind_capacity = j["wind_capacity"].get<double>();
    }
    c.fbar_scale = j.value("fbar_scale", 1.0);
    c.cost_floor = j.value("cost_floor", 1e-4);
    if (j.contains("data")) c.data = DataSource::parse(j["data"].get<std::string>());
    if (!c.data.synthetic) {
      c.data.path = resolve(c.data.path);
      if (j.contains("csv_schema")) {
        const auto& s = j["csv_schema"];
        c.data.schema.power = s.value("power", c.data.schema.power);
        c.data.schema.speed = s.value("speed", c.data.schema.speed);
        c.data.schema.direction = s.value("direction", c.data.schema.direction);
        c.data.schema.pitch = s.value("pitch", c.data.schema.pitch);
        c.data.schema.capacity = s.value("capacity", c.data.schema.capacity);
      }
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      c.split.train = s.value("train", c.split.train);
      c.split.test = s.value("test", c.split.test);
      c.split.seed = s.value("seed", c.split.seed);
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      if (s.contains("stages")) {
        c.schedule.stages.clear();
        for (const auto& st : s["stages"]) {
          c.schedule.stages.push_back({st.at("epochs").get<int>(), st.at("lr").get<double>()});
        }
      }
      c.schedule.switch_epoch = s.value("switch_epoch", c.schedule.switch_epoch);
      c.schedule.gamma = s.value("gamma", c.schedule.gamma);
      c.schedule.batch_size = s.value("batch_size", c.schedule.batch_size);
      c.schedule.unsquared = s.value("unsquared", c.schedule.unsquared);
      if (s.contains("architecture")) c.schedule.architecture = s["architecture"].get<std::vector<int>>();
    }
    c.mode = j.value("mode", c.mode);
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      c.seeds = s.is_string() ? parse_seeds(s.get<std::string>()) : s.get<std::vector<std::uint64_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

/// Case with the configured transforms applied.
inline NetworkCase prepare_case(const RunConfig& c) {
  if (c.case_path.empty()) throw ValidationError("no case given");
  MatpowerOptions mo;
  mo.cost_floor = c.cost_floor;
  NetworkCase net = load_case(c.case_path, mo);
  net = scale_line_limits(std::move(net), c.fbar_scale);
  if (c.wind_bus || c.wind_capacity) {
    if (!c.wind_bus && !net.wind_bus) throw ValidationError("wind capacity given without a wind bus");
    if (!c.wind_capacity && !net.wind_bus) throw ValidationError("wind bus given without a capacity");
    const int bus = c.wind_bus ? *c.wind_bus : net.bus_ids[*net.wind_bus];
    const double cap = c.wind_capacity ? *c.wind_capacity : net.wind_capacity;
    net = install_wind_farm(std::move(net), bus, cap);
  }
  if (!net.wind_bus) throw ValidationError("case '" + net.name + "' has no wind farm; pass --wind-bus and --wind-capacity");
  return net;
}

/// Everything a training run needs, validated up front.
struct PreparedRun {
  RunConfig config;
  std::unique_ptr<MarketClearing> market;
  Normalizer normalizer;
  WindDataset train_set;
  WindDataset test_set;
  TrainingData train;
  TrainingData test;
  std::vector<Mode> modes;
};

inline std::vector<Mode> parse_mode_list(const std::string& mode) {
  if (mode == "both") return {Mode::DeepWP, Mode::DeepWPPlus};
  return {parse_mode(mode)};
}

inline PreparedRun prepare_run(const RunConfig& c) {
  PreparedRun r;
  r.config = c;
  r.modes = parse_mode_list(c.mode);
  c.schedule.validate();
  if (c.seeds.empty()) throw ValidationError("no seeds given");
  if (c.split.train == 0 || c.split.test == 0) throw ValidationError("train and test counts must be positive");
  const auto id = c.effective_run_id();
  if (id.empty() || id.find('/') != std::string::npos || id == "." || id == "..") {
    throw ValidationError("invalid run id '" + id + "'");
  }
  r.market = std::make_unique<MarketClearing>(prepare_case(c));
  const WindDataset ds = c.data.load();
  auto [tr, te] = split(ds, c.split);
  r.train_set = std::move(tr);
  r.test_set = std::move(te);
  r.normalizer = fit_normalizer(r.train_set, r.market->capacity());
  r.train = {r.normalizer.features(r.train_set), r.normalizer.targets_mw(r.train_set)};
  r.test = {r.normalizer.features(r.test_set), r.normalizer.targets_mw(r.test_set)};
  return r;
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

inline std::string mode_dir(Mode m) { return m == Mode::DeepWP ? "deepwp" : "deepwp_plus"; }

/// Per-bus price error against forecast error for every test scenario.
inline std::string scatter_csv(const std::vector<ScenarioEvaluation>& ev, const NetworkCase& net) {
  std::string s = "scenario,bus,delta_w,delta_pi\n";
  char buf[128];
  for (std::size_t k = 0; k < ev.size(); ++k) {
    const Vector d = ev[k].delta();
    for (int i = 0; i < d.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%.10g,%.10g\n", k, net.bus_ids[i], ev[k].w_hat - ev[k].w, d[i]);
      s += buf;
    }
  }
  return s;
}

inline std::string bus_profile_csv(const MetricsReport& m, const NetworkCase& net) {
  std::string s = "bus,mean_abs_delta_pi\n";
  char buf[96];
  for (int i = 0; i < m.bus_profile.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.10g\n", net.bus_ids[i], m.bus_profile[i]);
    s += buf;
  }
  return s;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<Mode, MetricsReport> metrics;
  std::map<Mode, std::vector<TraceRow>> traces;
};

struct TrainRunResult {
  fs::path dir;
  std::vector<SeedResult> seeds;
  std::map<Mode, MetricsReport> mean;
};

inline MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  MetricsReport m;
  if (rs.empty()) return m;
  const double k = static_cast<double>(rs.size());
  m.bus_profile = Vector::Zero(rs.front().bus_profile.size());
  for (const auto& r : rs) {
    m.rmse_w += r.rmse_w / k;
    m.rmse_price += r.rmse_price / k;
    m.cvar_price += r.cvar_price / k;
    m.alpha += r.alpha / k;
    m.congested_fraction += r.congested_fraction / k;
    m.bus_profile += r.bus_profile / k;
    m.scenarios += r.scenarios;
  }
  m.scenarios /= rs.size();
  return m;
}

inline std::string aggregate_markdown(const RunConfig& c, const NetworkCase& net,
                                      const TrainRunResult& res) {
  std::ostringstream os;
  os << "# " << c.name << "\n\n";
  os << "case " << net.name << ", wind bus " << net.bus_ids[*net.wind_bus] << ", "
     << net.wind_capacity << " MW, line-limit scale " << c.fbar_scale << ", data "
     << c.data.to_string() << ", " << c.split.train << " train / " << c.split.test
     << " test scenarios, " << res.seeds.size() << " seeds, gamma " << c.schedule.gamma << "\n\n";
  TableRow row;
  row.case_name = c.name;
  row.bus = net.bus_ids[*net.wind_bus];
  row.capacity = net.wind_capacity;
  row.fbar_scale = c.fbar_scale;
  if (res.mean.count(Mode::DeepWP)) {
    row.deepwp = res.mean.at(Mode::DeepWP);
    if (res.mean.count(Mode::DeepWPPlus)) row.deepwp_plus = res.mean.at(Mode::DeepWPPlus);
    os << "## Mean over seeds\n\n" << table1_markdown({row}) << "\n";
  }
  os << "## Per seed\n\n| seed | mode | RMSE(w) | RMSE(pi) | CVaR(pi) | alpha | congested |\n"
        "|---:|---|---:|---:|---:|---:|---:|\n";
  char buf[256];
  for (const auto& s : res.seeds) {
    for (const auto& [mode, m] : s.metrics) {
      std::snprintf(buf, sizeof buf, "| %llu | %s | %.4f | %.4f | %.4f | %.4f | %.2f |\n",
                    static_cast<unsigned long long>(s.seed), mode_name(mode).c_str(), m.rmse_w,
                    m.rmse_price, m.cvar_price, m.alpha, m.congested_fraction);
      os << buf;
    }
  }
  return os.str();
}

/// Trains every seed and mode, writing runs/<id>/... . All validation happens before the
/// run directory is created.
inline TrainRunResult cmd_train(const RunConfig& cfg, std::ostream& log = std::cerr) {
  const std::string id = cfg.effective_run_id();
  PreparedRun run;
  try {
    run = prepare_run(cfg);
  } catch (const Error& e) {
    throw ValidationError("run '" + id + "': " + e.what());
  }
  const NetworkCase& net = run.market->network();
  TrainRunResult res;
  res.dir = fs::path(cfg.out) / id;
  try {
    fs::create_directories(res.dir);
    write_file(res.dir / "config.json", config_to_json(cfg).dump(2) + "\n");
    write_file(res.dir / "case.json", case_to_json(net).dump(1) + "\n");
    const bool want_plain = std::count(run.modes.begin(), run.modes.end(), Mode::DeepWP) > 0;
    const bool want_plus = std::count(run.modes.begin(), run.modes.end(), Mode::DeepWPPlus) > 0;
    for (auto seed : cfg.seeds) {
      TrainSchedule sched = cfg.schedule;
      sched.seed = seed;
      PairOptions po;
      po.run_deepwp = want_plain;
      po.run_deepwp_plus = want_plus;
      po.train.trace_price = true;
      const auto t0 = std::chrono::steady_clock::now();
      PairedResult pr = train_paired(sched, *run.market, run.train, run.test, po);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      SeedResult sr;
      sr.seed = seed;
      for (auto* b : {pr.deepwp ? &*pr.deepwp : nullptr, pr.deepwp_plus ? &*pr.deepwp_plus : nullptr}) {
        if (!b) continue;
        const fs::path dir = res.dir / "seeds" / std::to_string(seed) / mode_dir(b->mode);
        fs::create_directories(dir);
        write_file(dir / "checkpoint.json", checkpoint_json(b->state, run.normalizer).dump() + "\n");
        write_file(dir / "trace.csv", trace_csv(b->state.trace));
        write_file(dir / "timing.csv", timing_csv(b->state.trace));
        std::string mcsv = "stage," + MetricsReport::csv_header() + "\n";
        for (std::size_t k = 0; k < b->stage_metrics.size(); ++k) {
          mcsv += std::to_string(k) + "," + b->stage_metrics[k].csv_row() + "\n";
        }
        mcsv += "final," + b->test_metrics.csv_row() + "\n";
        write_file(dir / "metrics.csv", mcsv);
        write_file(dir / "bus_profile.csv", bus_profile_csv(b->test_metrics, net));
        write_file(dir / "scatter.csv", scatter_csv(b->test_evaluations, net));
        sr.metrics[b->mode] = b->test_metrics;
        sr.traces[b->mode] = b->state.trace;
        log << "[" << id << "] seed " << seed << " " << mode_name(b->mode) << ": RMSE(w) "
            << b->test_metrics.rmse_w << " RMSE(pi) " << b->test_metrics.rmse_price << " CVaR(pi) "
            << b->test_metrics.cvar_price << " alpha " << b->test_metrics.alpha << "\n";
      }
      log << "[" << id << "] seed " << seed << " done in " << secs << " s\n";
      res.seeds.push_back(std::move(sr));
    }
    for (Mode m : run.modes) {
      std::vector<MetricsReport> rs;
      for (const auto& s : res.seeds) rs.push_back(s.metrics.at(m));
      res.mean[m] = mean_report(rs);
    }
    std::string agg = "seed,mode," + MetricsReport::csv_header() + "\n";
    for (const auto& s : res.seeds) {
      for (const auto& [mode, m] : s.metrics) {
        agg += std::to_string(s.seed) + "," + mode_name(mode) + "," + m.csv_row() + "\n";
      }
    }
    for (const auto& [mode, m] : res.mean) agg += "mean," + mode_name(mode) + "," + m.csv_row() + "\n";
    write_file(res.dir / "aggregate.csv", agg);
    write_file(res.dir / "aggregate.md", aggregate_markdown(cfg, net, res));
  } catch (const Error& e) {
    throw Error("run '" + id + "': " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error("run '" + id + "': " + e.what());
  }
  return res;
}

struct GradcheckConfig {
  std::string case_path;
  std::optional<int> wind_bus;
  std::optional<double> wind_capacity;
  double fbar_scale = 1.0;
  GradcheckOptions options;
};

struct GradcheckOutcome {
  GradcheckReport report;
  int identical_row_points = 0;  // random points whose Jacobian rows all coincide
  bool passed = false;
};

inline GradcheckOutcome cmd_gradcheck(const GradcheckConfig& g) {
  RunConfig rc;
  rc.case_path = g.case_path;
  rc.wind_bus = g.wind_bus;
  rc.wind_capacity = g.wind_capacity;
  rc.fbar_scale = g.fbar_scale;
  const MarketClearing market(prepare_case(rc));
  GradcheckOutcome out;
  out.report = gradcheck(market, g.options);
  for (const auto& r : out.report.rows) {
    if (r.kind == "random" && r.row_spread <= 1e-9) ++out.identical_row_points;
  }
  out.passed = out.report.passed() && out.report.nondegenerate_count() >= g.options.points;
  return out;
}

struct BenchRow {
  std::string name;
  int n_bus = 0;
  int epochs = 0;
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
};

/// Mean wall time per price-aware epoch over `epochs` epochs, per configuration.
inline std::vector<BenchRow> cmd_bench(const std::vector<RunConfig>& configs, int epochs,
                                       std::optional<std::size_t> train_size = std::nullopt,
                                       std::ostream& log = std::cerr) {
  if (epochs < 1) throw ValidationError("bench needs at least one epoch");
  std::vector<PreparedRun> runs;
  for (auto c : configs) {
    if (train_size) c.split.train = *train_size;
    c.split.test = 1;
    runs.push_back(prepare_run(c));
  }
  std::vector<BenchRow> rows;
  for (auto& r : runs) {
    TrainSchedule s = r.config.schedule;
    s.stages = {{epochs, s.stages.front().lr}};
    s.switch_epoch = 0;
    s.seed = r.config.seeds.front();
    ScenarioPricer pricer(*r.market, r.train.w, worker_count());
    TrainState st = init_state(s, r.market->capacity());
    TrainOptions to;
    to.trace_price = false;
    train_until(st, epochs, Mode::DeepWPPlus, s, r.train, pricer, to);
    BenchRow b;
    b.name = r.config.name;
    b.n_bus = r.market->network().n_bus();
    b.epochs = epochs;
    for (const auto& t : st.trace) b.mean_seconds += t.seconds / epochs;
    for (const auto& t : st.trace) {
      b.stddev_seconds += (t.seconds - b.mean_seconds) * (t.seconds - b.mean_seconds);
    }
    b.stddev_seconds = epochs > 1 ? std::sqrt(b.stddev_seconds / (epochs - 1)) : 0.0;
    log << "[bench] " << b.name << ": " << b.mean_seconds << " s/epoch\n";
    rows.push_back(b);
  }
  return rows;
}

/// True when the largest system in the list also has the largest mean epoch time.
inline bool bench_largest_is_slowest(const std::vector<BenchRow>& rows) {
  if (rows.empty()) return false;
  auto largest = std::max_element(rows.begin(), rows.end(),
                                  [](const auto& a, const auto& b) { return a.n_bus < b.n_bus; });
  auto slowest = std::max_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.mean_seconds < b.mean_seconds;
  });
  return largest == slowest;
}

inline std::string bench_markdown(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "| case | buses | epochs | mean s/epoch | stddev s | mean min/epoch |\n"
        "|---|---:|---:|---:|---:|---:|\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %d | %d | %.4f | %.4f | %.5f |\n", r.name.c_str(), r.n_bus,
                  r.epochs, r.mean_seconds, r.stddev_seconds, r.mean_seconds / 60.0);
    os << buf;
  }
  bool monotone = true;
  std::vector<BenchRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.n_bus < b.n_bus; });
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    monotone = monotone && sorted[k].mean_seconds >= sorted[k - 1].mean_seconds;
  }
  os << "\nlargest system slowest: " << (bench_largest_is_slowest(rows) ? "yes" : "no")
     << "; time increases with system size: " << (monotone ? "yes" : "no (trend only)") << "\n";
  return os.str();
}

/// Overrides applied on top of each per-case configuration.
struct ProtocolOverrides {
  std::optional<std::string> epochs;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> train;
  std::optional<std::size_t> test;
  std::optional<std::string> data;
  std::optional<std::size_t> batch_size;
  std::optional<double> gamma;
};

inline RunConfig apply_overrides(RunConfig c, const ProtocolOverrides& o) {
  if (o.epochs) apply_epochs_override(c.schedule, *o.epochs);
  if (o.seeds) c.seeds = *o.seeds;
  if (o.train) c.split.train = *o.train;
  if (o.test) c.split.test = *o.test;
  if (o.data) c.data = DataSource::parse(*o.data);
  if (o.batch_size) c.schedule.batch_size = *o.batch_size;
  if (o.gamma) c.schedule.gamma = *o.gamma;
  return c;
}

/// Runs each configuration with both models and collects a benchmark-summary table.
/// With `dry_run` only validates and describes the plan.
inline std::string cmd_table1(const std::vector<RunConfig>& configs, const std::string& out,
                              const std::string& run_id, bool dry_run,
                              std::ostream& log = std::cerr) {
  std::ostringstream plan;
  for (const auto& c : configs) {
    prepare_run(c);
    plan << c.name << ": case " << c.case_path << ", bus " << (c.wind_bus ? *c.wind_bus : -1) << ", "
         << (c.wind_capacity ? *c.wind_capacity : 0.0) << " MW, scale " << c.fbar_scale << ", "
         << c.split.train << "/" << c.split.test << " scenarios, " << c.schedule.total_epochs()
         << " epochs, " << c.seeds.size() << " seeds, gamma " << c.schedule.gamma << "\n";
  }
  if (dry_run) return plan.str();
  const fs::path root = fs::path(out) / run_id;
  std::vector<TableRow> rows;
  for (auto c : configs) {
    c.mode = "both";
    c.out = root.string();
    c.run_id = c.name;
    const auto res = cmd_train(c, log);
    const NetworkCase net = prepare_case(c);
    TableRow row;
    row.case_name = c.name;
    row.bus = net.bus_ids[*net.wind_bus];
    row.capacity = net.wind_capacity;
    row.fbar_scale = c.fbar_scale;
    row.deepwp = res.mean.at(Mode::DeepWP);
    row.deepwp_plus = res.mean.at(Mode::DeepWPPlus);
    rows.push_back(row);
  }
  const std::string table = table1_markdown(rows);
  write_file(root / "table1.md", plan.str() + "\n" + table);
  return table;
}

}  // namespace fairprice
