#pragma once

// Wind-farm records: CSV ingestion, a synthetic generator, train/test splits and
// feature normalization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fairprice/error.hpp"

namespace fairprice {

struct WindRecord {
  double speed = 0.0;      // m/s
  double direction = 0.0;  // degrees in [0, 360)
  double pitch = 0.0;      // degrees
  double power = 0.0;      // fraction of farm capacity, [0, 1]
};

struct WindDataset {
  std::vector<WindRecord> records;
  std::string provenance;  // "csv:<path>" or "synthetic:<n>:<seed>"
  int dropped = 0;         // rows with missing or non-finite values
  int clipped = 0;         // rows whose power fell outside [0, capacity]

  std::size_t size() const { return records.size(); }
};

/// Column names for the CSV loader. Defaults follow the public turbine SCADA export
/// (ActivePower in kW).
struct WindCsvSchema {
  std::string power = "ActivePower";
  std::string speed = "WindSpeed";
  std::string direction = "WindDirection";
  std::string pitch = "Blade1PitchAngle";
  /// Value of the power column at full output.
  double capacity = 3600.0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_number(const std::string& s, double& out) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return false;
  auto e = s.find_last_not_of(" \t");
  const std::string t = s.substr(b, e - b + 1);
  try {
    std::size_t used = 0;
    out = std::stod(t, &used);
    return used == t.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

inline double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0) d += 360.0;
  return d >= 360.0 ? 0.0 : d;
}

}  // namespace detail

inline WindDataset parse_wind_csv(std::istream& in, const WindCsvSchema& schema = {},
                                  const std::string& origin = "stream") {
  if (!(schema.capacity > 0)) throw ValidationError("wind CSV capacity must be positive");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty wind CSV: " + origin);
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return static_cast<int>(k);
    }
    throw ParseError("missing column '" + name + "' in " + origin, 1);
  };
  const int ip = column(schema.power), is = column(schema.speed),
            id = column(schema.direction), ic = column(schema.pitch);

  WindDataset ds;
  ds.provenance = "csv:" + origin;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    WindRecord r;
    double p = 0;
    const int need = std::max({ip, is, id, ic});
    if (static_cast<int>(f.size()) <= need || !detail::parse_number(f[ip], p) ||
        !detail::parse_number(f[is], r.speed) || !detail::parse_number(f[id], r.direction) ||
        !detail::parse_number(f[ic], r.pitch)) {
      ++ds.dropped;
      continue;
    }
    r.direction = detail::wrap_degrees(r.direction);
    r.power = p / schema.capacity;
    if (r.power < 0 || r.power > 1) {
      ++ds.clipped;
      r.power = std::clamp(r.power, 0.0, 1.0);
    }
    ds.records.push_back(r);
  }
  if (ds.records.empty()) throw ValidationError("no usable rows in wind CSV " + origin);
  return ds;
}

inline WindDataset load_wind_csv(const std::string& path, const WindCsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open wind CSV '" + path + "'");
  return parse_wind_csv(in, schema, path);
}

/// Parameters of the synthetic turbine. Speeds are Weibull, the pitch controller
/// feathers above rated speed, and power follows a logistic curve derated by pitch
/// excess and yaw misalignment.
struct SynthWindParams {
  double weibull_shape = 2.0;
  double weibull_scale = 8.5;  // m/s
  double cut_in = 3.0;
  double rated = 12.0;
  double cut_out = 25.0;
  double curve_mid = 8.0;    // logistic midpoint, m/s
  double curve_width = 1.3;  // m/s
  double pitch_gain = 2.5;   // deg per m/s above rated
  double pitch_jitter = 4.0;  // max extra pitch, deg
  double derate_per_deg = 0.04;
  double yaw_depth = 0.10;  // relative loss when facing away from the prevailing wind
  double prevailing = 225.0;  // deg
  double noise = 0.03;        // half-width of the additive noise band
};

inline double synth_pitch_curve(double speed, const SynthWindParams& p = {}) {
  return speed > p.rated ? p.pitch_gain * (speed - p.rated) : 0.0;
}

/// Noise-free expected power for a speed with no pitch excess and aligned yaw.
inline double synth_power_curve(double speed, const SynthWindParams& p = {}) {
  if (speed < p.cut_in || speed >= p.cut_out) return 0.0;
  auto logistic = [&](double v) { return 1.0 / (1.0 + std::exp(-(v - p.curve_mid) / p.curve_width)); };
  // Rescaled so the curve is 0 at cut-in and 1 at rated.
  const double lo = logistic(p.cut_in), hi = logistic(p.rated);
  return std::clamp((logistic(speed) - lo) / (hi - lo), 0.0, 1.0);
}

inline WindDataset synthesize_wind(std::size_t n, std::uint64_t seed,
                                   const SynthWindParams& p = {}) {
  if (n == 0) throw ValidationError("synthetic dataset size must be positive");
  std::mt19937_64 rng(seed);
  std::weibull_distribution<double> speed(p.weibull_shape, p.weibull_scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WindDataset ds;
  ds.provenance = "synthetic:" + std::to_string(n) + ":" + std::to_string(seed);
  ds.records.reserve(n);
  const double deg = std::numbers::pi / 180.0;
  for (std::size_t i = 0; i < n; ++i) {
    WindRecord r;
    r.speed = std::min(speed(rng), 30.0);
    r.direction = detail::wrap_degrees(360.0 * unit(rng));
    const double jitter = p.pitch_jitter * unit(rng);
    r.pitch = synth_pitch_curve(r.speed, p) + jitter;
    const double noise = p.noise * (2.0 * unit(rng) - 1.0);
    double power = synth_power_curve(r.speed, p);
    if (power > 0) {
      const double yaw = 1.0 - p.yaw_depth * 0.5 * (1.0 - std::cos((r.direction - p.prevailing) * deg));
      power = power * std::exp(-p.derate_per_deg * jitter) * yaw + noise;
    }
    r.power = std::clamp(power, 0.0, 1.0);
    ds.records.push_back(r);
  }
  return ds;
}

struct SplitSpec {
  std::size_t train = 0;
  std::size_t test = 0;
  std::uint64_t seed = 0;
};

/// Disjoint train/test subsets drawn by a seeded shuffle.
inline std::pair<WindDataset, WindDataset> split(const WindDataset& ds, const SplitSpec& spec) {
  if (spec.train + spec.test > ds.size()) {
    throw ValidationError("split needs " + std::to_string(spec.train + spec.test) +
                          " records but the dataset has " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(spec.seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the library's
  // shuffle implementation.
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  WindDataset train, test;
  train.provenance = test.provenance = ds.provenance;
  for (std::size_t k = 0; k < spec.train; ++k) train.records.push_back(ds.records[idx[k]]);
  for (std::size_t k = 0; k < spec.test; ++k) {
    test.records.push_back(ds.records[idx[spec.train + k]]);
  }
  return {std::move(train), std::move(test)};
}

inline constexpr int kFeatureCount = 4;

/// Raw encoding: speed, sin(direction), cos(direction), pitch.
inline Eigen::Matrix<double, kFeatureCount, 1> encode_features(const WindRecord& r) {
  const double a = r.direction * std::numbers::pi / 180.0;
  Eigen::Matrix<double, kFeatureCount, 1> x;
  x << r.speed, std::sin(a), std::cos(a), r.pitch;
  return x;
}

/// Per-feature z-score fitted on training data, plus the capacity used to scale targets.
struct Normalizer {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kFeatureCount);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(kFeatureCount);
  double capacity = 1.0;  // MW
  std::vector<std::string> warnings;

  /// Features as a kFeatureCount x n matrix, one column per record.
  Eigen::MatrixXd features(const WindDataset& ds) const {
    Eigen::MatrixXd X(kFeatureCount, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      X.col(static_cast<Eigen::Index>(i)) =
          ((encode_features(ds.records[i]) - mean).array() / scale.array()).matrix();
    }
    return X;
  }

  /// Targets in MW.
  Eigen::VectorXd targets_mw(const WindDataset& ds) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) y[static_cast<Eigen::Index>(i)] = to_mw(ds.records[i].power);
    return y;
  }

  double to_mw(double fraction) const { return fraction * capacity; }
  double to_fraction(double mw) const { return mw / capacity; }
};

inline Normalizer fit_normalizer(const WindDataset& train, double capacity_mw) {
  if (train.size() == 0) throw ValidationError("cannot fit a normalizer on an empty dataset");
  if (!(capacity_mw > 0)) throw ValidationError("capacity must be positive");
  Normalizer nz;
  nz.capacity = capacity_mw;
  const double n = static_cast<double>(train.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kFeatureCount);
  for (const auto& r : train.records) sum += encode_features(r);
  nz.mean = sum / n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(kFeatureCount);
  for (const auto& r : train.records) var += (encode_features(r) - nz.mean).array().square().matrix();
  var /= n;
  static const char* names[kFeatureCount] = {"speed", "sin(direction)", "cos(direction)", "pitch"};
  for (int k = 0; k < kFeatureCount; ++k) {
    const double s = std::sqrt(var[k]);
    if (s <= 1e-12 * std::max(1.0, std::abs(nz.mean[k]))) {
      nz.scale[k] = 1.0;
      nz.warnings.push_back(std::string("feature '") + names[k] +
                            "' has zero variance; using unit scale");
    } else {
      nz.scale[k] = s;
    }
  }
  return nz;
}

}  // namespace fairprice
