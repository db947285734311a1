#pragma once

// Feedforward wind forecaster, ADAM, and the price-agnostic / price-aware training loops.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fairprice/diffopt.hpp"
#include "fairprice/error.hpp"
#include "fairprice/metrics.hpp"
#include "fairprice/opf.hpp"
#include "fairprice/wind_data.hpp"

namespace fairprice {

/// Fully connected ReLU network with a scalar linear output. All parameters live in one
/// flat vector; layer l owns a (sizes[l+1] x sizes[l]) column-major weight block followed
/// by its bias. The raw output is a fraction of `capacity`.
struct MlpModel {
  std::vector<int> sizes;
  Vector theta;
  double capacity = 1.0;  // MW at raw output 1

  int layers() const { return static_cast<int>(sizes.size()) - 1; }

  static Eigen::Index parameter_count(const std::vector<int>& sizes) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
    return n;
  }

  Eigen::Index weight_offset(int l) const {
    Eigen::Index off = 0;
    for (int k = 0; k < l; ++k) off += sizes[k + 1] * (sizes[k] + 1);
    return off;
  }
  Eigen::Map<const Matrix> W(int l) const {
    return {theta.data() + weight_offset(l), sizes[l + 1], sizes[l]};
  }
  Eigen::Map<const Vector> b(int l) const {
    return {theta.data() + weight_offset(l) + sizes[l + 1] * sizes[l], sizes[l + 1]};
  }

  double forecast_mw(double raw) const { return capacity * std::clamp(raw, 0.0, 1.0); }

  /// Uniform weights in +-1/sqrt(fan_in), zero biases. The full He bound sqrt(6/fan_in)
  /// starts four ReLU layers too rough to generalize from a few hundred samples.
  static MlpModel create(const std::vector<int>& sizes, double capacity, std::uint64_t seed) {
    if (sizes.size() < 2 || sizes.back() != 1) {
      throw ValidationError("network must have at least one layer and a scalar output");
    }
    for (int s : sizes) {
      if (s <= 0) throw ValidationError("layer widths must be positive");
    }
    if (!(capacity > 0)) throw ValidationError("capacity must be positive");
    MlpModel m;
    m.sizes = sizes;
    m.capacity = capacity;
    m.theta = Vector::Zero(parameter_count(sizes));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int l = 0; l < m.layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      const Eigen::Index off = m.weight_offset(l);
      for (Eigen::Index k = 0; k < Eigen::Index(sizes[l + 1]) * sizes[l]; ++k) {
        m.theta[off + k] = bound * unit(rng);
      }
    }
    return m;
  }
};

inline std::vector<int> default_architecture() { return {kFeatureCount, 30, 30, 30, 30, 1}; }

struct ForwardCache {
  std::vector<Matrix> act;  // act[0] is the input, act[l+1] the output of layer l
  Vector raw;               // linear output, one per column of the input
};

/// Batch forward pass. `X` holds one normalized feature vector per column.
inline ForwardCache forward_batch(const MlpModel& m, const Matrix& X) {
  if (X.rows() != m.sizes.front()) throw ValidationError("feature dimension mismatch");
  if (!X.allFinite()) throw ValidationError("non-finite network input");
  ForwardCache c;
  c.act.reserve(m.layers() + 1);
  c.act.push_back(X);
  for (int l = 0; l < m.layers(); ++l) {
    Matrix z = m.W(l) * c.act.back();
    z.colwise() += m.b(l);
    if (l + 1 < m.layers()) z = z.cwiseMax(0.0);
    c.act.push_back(std::move(z));
  }
  c.raw = c.act.back().row(0).transpose();
  return c;
}

/// Forecast in MW for one feature vector, clamped to [0, capacity].
inline double forward(const MlpModel& m, const Vector& phi) {
  return m.forecast_mw(forward_batch(m, phi).raw[0]);
}

/// Parameter gradient given dL/d(raw output) per column.
inline Vector backward(const MlpModel& m, const ForwardCache& c, const Vector& d_raw) {
  Vector g = Vector::Zero(m.theta.size());
  Matrix delta = d_raw.transpose();
  for (int l = m.layers() - 1; l >= 0; --l) {
    const Matrix& in = c.act[l];
    const Eigen::Index off = m.weight_offset(l);
    Eigen::Map<Matrix> gW(g.data() + off, m.sizes[l + 1], m.sizes[l]);
    Eigen::Map<Vector> gb(g.data() + off + m.sizes[l + 1] * m.sizes[l], m.sizes[l + 1]);
    gW.noalias() = delta * in.transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Matrix up = m.W(l).transpose() * delta;
      delta = up.cwiseProduct((in.array() > 0).cast<double>().matrix());
    }
  }
  return g;
}

struct AdamState {
  Vector m1;
  Vector m2;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index n) {
    AdamState s;
    s.m1 = Vector::Zero(n);
    s.m2 = Vector::Zero(n);
    return s;
  }

  void apply(Vector& theta, const Vector& grad, double lr) {
    if (grad.size() != theta.size() || m1.size() != theta.size()) {
      throw ValidationError("optimizer state does not match parameter count");
    }
    ++step;
    m1 = beta1 * m1 + (1 - beta1) * grad;
    m2 = beta2 * m2 + (1 - beta2) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1 - std::pow(beta2, static_cast<double>(step));
    theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  }
};

struct LossValue {
  double value = 0.0;
  Vector grad;  // d value / d forecast, per sample
};

/// Mean squared forecast error over the batch.
inline LossValue loss_deepwp(const Vector& w_hat, const Vector& w) {
  if (w_hat.size() != w.size() || w.size() == 0) throw ValidationError("batch size mismatch");
  const double n = static_cast<double>(w.size());
  LossValue out;
  const Vector e = w_hat - w;
  out.value = e.squaredNorm() / n;
  out.grad = 2.0 * e / n;
  return out;
}

/// Mean absolute forecast error, the unsquared counterpart of loss_deepwp.
inline LossValue loss_deepwp_abs(const Vector& w_hat, const Vector& w) {
  if (w_hat.size() != w.size() || w.size() == 0) throw ValidationError("batch size mismatch");
  const double n = static_cast<double>(w.size());
  LossValue out;
  const Vector e = w_hat - w;
  out.value = e.cwiseAbs().sum() / n;
  out.grad = e.unaryExpr([n](double v) { return (v > 0) - (v < 0) + 0.0; }) / n;
  return out;
}

/// Price error term for one scenario and its cotangent with respect to prices.
struct PriceTerm {
  double value = 0.0;
  Vector d_pi;
};

/// |pi_hat - pi|^2 / n, or |pi_hat - pi| / sqrt(n) when unsquared.
inline PriceTerm price_term(const Vector& pi_hat, const Vector& pi, bool unsquared = false) {
  if (pi_hat.size() != pi.size() || pi.size() == 0) throw ValidationError("price length mismatch");
  const double n = static_cast<double>(pi.size());
  const Vector d = pi_hat - pi;
  PriceTerm out;
  if (!unsquared) {
    out.value = d.squaredNorm() / n;
    out.d_pi = 2.0 * d / n;
  } else {
    const double norm = d.norm();
    out.value = norm / std::sqrt(n);
    out.d_pi = norm > 0 ? Vector(d / (norm * std::sqrt(n))) : Vector::Zero(d.size());
  }
  return out;
}

/// Combined loss for one scenario: prediction term plus gamma times the price term, with
/// the gradient routed through the price sensitivity at the forecast. A degenerate
/// sensitivity zeroes the price gradient.
struct ScenarioLoss {
  double prediction = 0.0;
  double price = 0.0;
  double total = 0.0;
  double grad = 0.0;  // d total / d forecast (MW)
  bool degenerate = false;
};

inline ScenarioLoss loss_deepwp_plus(double w_hat, double w, const Vector& pi_hat,
                                     const Vector& pi, double gamma,
                                     const PriceSensitivity& sens, int wind_bus,
                                     bool unsquared = false) {
  if (gamma < 0) throw ValidationError("price-loss weight must be non-negative");
  ScenarioLoss out;
  const double e = w_hat - w;
  out.prediction = unsquared ? std::abs(e) : e * e;
  out.grad = unsquared ? ((e > 0) - (e < 0) + 0.0) : 2.0 * e;
  const PriceTerm pt = price_term(pi_hat, pi, unsquared);
  out.price = pt.value;
  out.total = out.prediction + gamma * out.price;
  out.degenerate = sens.degenerate();
  if (gamma > 0 && !out.degenerate) out.grad += gamma * sens.vjp(pt.d_pi)[wind_bus];
  return out;
}

struct TrainStage {
  int epochs = 0;
  double lr = 1e-4;
};

struct TrainSchedule {
  std::vector<TrainStage> stages{{500, 1e-4}, {1000, 5e-5}, {100, 5e-6}};
  double gamma = 1.0;
  /// Epoch (0-based) at which the price-aware branch switches on its price term.
  int switch_epoch = 500;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 1;
  bool unsquared = false;
  std::vector<int> architecture = default_architecture();

  int total_epochs() const {
    int n = 0;
    for (const auto& s : stages) n += s.epochs;
    return n;
  }
  double lr_at(int epoch) const {
    for (const auto& s : stages) {
      if (epoch < s.epochs) return s.lr;
      epoch -= s.epochs;
    }
    return stages.empty() ? 0.0 : stages.back().lr;
  }
  int stage_at(int epoch) const {
    for (std::size_t k = 0; k < stages.size(); ++k) {
      if (epoch < stages[k].epochs) return static_cast<int>(k);
      epoch -= stages[k].epochs;
    }
    return static_cast<int>(stages.size()) - 1;
  }
  void validate() const {
    if (stages.empty()) throw ValidationError("training schedule has no stages");
    for (const auto& s : stages) {
      if (s.epochs < 0) throw ValidationError("stage epoch count must be non-negative");
      if (!(s.lr > 0)) throw ValidationError("learning rates must be positive");
    }
    if (gamma < 0) throw ValidationError("gamma must be non-negative");
    if (switch_epoch < 0) throw ValidationError("switch epoch must be non-negative");
  }
};

enum class Mode { DeepWP, DeepWPPlus };

inline std::string mode_name(Mode m) { return m == Mode::DeepWP ? "deepwp" : "deepwp+"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "deepwp") return Mode::DeepWP;
  if (s == "deepwp+" || s == "deepwp_plus" || s == "deepwpplus") return Mode::DeepWPPlus;
  throw ValidationError("unknown mode '" + s + "' (expected deepwp or deepwp+)");
}

/// Number of worker threads for per-scenario solves, from FAIRPRICE_THREADS (default 1).
inline int worker_count() {
  if (const char* env = std::getenv("FAIRPRICE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("FAIRPRICE_THREADS must be a positive integer, got '") +
                          env + "'");
  }
  return 1;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers. Each index is handled by one
/// worker, so per-index state needs no locking.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
  const std::size_t t = std::min<std::size_t>(std::max(threads, 1), n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  for (std::size_t k = 0; k < t; ++k) {
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += t) f(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Market clearing for a set of scenarios with per-scenario warm starts and prices at the
/// actual wind computed once.
class ScenarioPricer {
 public:
  ScenarioPricer(const MarketClearing& market, const Vector& actual_mw, int threads = 1)
      : market_(&market), actual_(actual_mw), threads_(threads) {
    const auto n = static_cast<std::size_t>(actual_mw.size());
    warm_.resize(n);
    ref_.resize(n);
    congested_.assign(n, 0);
    feasible_.assign(n, 1);
    parallel_for(n, threads_, [&](std::size_t i) {
      try {
        auto dual = market_->solve(actual_[static_cast<Eigen::Index>(i)]);
        ref_[i] = market_->prices(dual).pi;
        congested_[i] = dual.congestion_mass() > 1e-6 * (1.0 + dual.lambda.lpNorm<Eigen::Infinity>());
        warm_[i] = std::move(dual.lambda);
      } catch (const InfeasibleError&) {
        feasible_[i] = 0;
      } catch (const ConvergenceError&) {
        feasible_[i] = 0;
      }
    });
  }

  std::size_t size() const { return ref_.size(); }
  bool feasible(std::size_t i) const { return feasible_[i]; }
  bool congested(std::size_t i) const { return congested_[i]; }
  const Vector& reference_prices(std::size_t i) const { return ref_[i]; }
  double actual(std::size_t i) const { return actual_[static_cast<Eigen::Index>(i)]; }
  const MarketClearing& market() const { return *market_; }
  int threads() const { return threads_; }
  int infeasible_count() const {
    return static_cast<int>(std::count(feasible_.begin(), feasible_.end(), 0));
  }

  /// Clears the market at `w_hat` for scenario i, warm-started from its last solution.
  DualSolution solve(std::size_t i, double w_hat) {
    DualSolveOptions opts;
    if (warm_[i].size()) opts.initial = warm_[i];
    auto dual = market_->solve(w_hat, opts);
    warm_[i] = dual.lambda;
    return dual;
  }

 private:
  const MarketClearing* market_;
  Vector actual_;
  int threads_;
  std::vector<Vector> warm_;
  std::vector<Vector> ref_;
  std::vector<char> congested_;
  std::vector<char> feasible_;
};

struct TraceRow {
  int epoch = 0;
  int stage = 0;
  double lr = 0.0;
  double prediction_loss = 0.0;  // mean over the training set, before each batch's update
  double price_loss = 0.0;
  bool price_active = false;
  int degenerate = 0;
  int skipped = 0;
  double seconds = 0.0;
};

/// Everything needed to continue a run: parameters, optimizer, batching stream, epoch.
struct TrainState {
  MlpModel model;
  AdamState adam;
  std::mt19937_64 rng;
  int epoch = 0;
  Mode mode = Mode::DeepWP;
  std::vector<TraceRow> trace;
};

struct TrainingData {
  Matrix X;  // normalized features, one column per scenario
  Vector w;  // actual wind, MW
};

inline TrainState init_state(const TrainSchedule& sched, double capacity) {
  TrainState s;
  s.model = MlpModel::create(sched.architecture, capacity, sched.seed);
  s.adam = AdamState::zeros(s.model.theta.size());
  s.rng.seed(sched.seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

struct TrainOptions {
  /// Record the price loss during price-agnostic epochs as well.
  bool trace_price = true;
  /// Called after every epoch with the state, for logging.
  std::function<void(const TrainState&)> on_epoch;
};

/// Advances `state` to epoch `until` under `mode`. The price term enters the gradient only
/// for the price-aware mode from sched.switch_epoch onward.
inline void train_until(TrainState& state, int until, Mode mode, const TrainSchedule& sched,
                        const TrainingData& data, ScenarioPricer& pricer,
                        const TrainOptions& topts = {}) {
  sched.validate();
  const auto n = static_cast<std::size_t>(data.w.size());
  if (n == 0) throw ValidationError("empty training set");
  if (data.X.cols() != data.w.size() || pricer.size() != n) {
    throw ValidationError("training data and pricer disagree in size");
  }
  const int wb = pricer.market().wind_bus();
  const std::size_t batch = sched.batch_size == 0 ? n : std::min(sched.batch_size, n);
  state.mode = mode;
  std::vector<std::size_t> order(n);

  for (; state.epoch < until; ++state.epoch) {
    // Each epoch's permutation depends only on the RNG state, so resumed runs match.
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const auto t0 = std::chrono::steady_clock::now();
    TraceRow row;
    row.epoch = state.epoch;
    row.stage = sched.stage_at(state.epoch);
    row.lr = sched.lr_at(state.epoch);
    row.price_active = mode == Mode::DeepWPPlus && state.epoch >= sched.switch_epoch;
    const bool need_price = row.price_active || topts.trace_price;

    if (batch < n) {
      for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(state.rng() % i)]);
      }
    }
    double pred_sum = 0.0, price_sum = 0.0;
    int price_count = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t b = std::min(batch, n - start);
      Matrix Xb(data.X.rows(), static_cast<Eigen::Index>(b));
      Vector wb_true(static_cast<Eigen::Index>(b));
      for (std::size_t k = 0; k < b; ++k) {
        Xb.col(static_cast<Eigen::Index>(k)) = data.X.col(static_cast<Eigen::Index>(order[start + k]));
        wb_true[static_cast<Eigen::Index>(k)] = data.w[static_cast<Eigen::Index>(order[start + k])];
      }
      const ForwardCache cache = forward_batch(state.model, Xb);
      const double cap = state.model.capacity;
      const Vector unclamped = cache.raw * cap;
      const LossValue pred = sched.unsquared ? loss_deepwp_abs(unclamped, wb_true)
                                             : loss_deepwp(unclamped, wb_true);
      pred_sum += pred.value * static_cast<double>(b);
      Vector d_raw = pred.grad * cap;

      if (need_price) {
        std::vector<double> term(b, 0.0), grad(b, 0.0);
        std::vector<char> ok(b, 0), degenerate(b, 0);
        parallel_for(b, pricer.threads(), [&](std::size_t k) {
          const std::size_t i = order[start + k];
          if (!pricer.feasible(i)) return;
          const double raw = cache.raw[static_cast<Eigen::Index>(k)];
          const double w_hat = state.model.forecast_mw(raw);
          try {
            const auto dual = pricer.solve(i, w_hat);
            const Vector pi_hat = lmp(dual, pricer.market().ptdf()).pi;
            const PriceTerm pt = price_term(pi_hat, pricer.reference_prices(i), sched.unsquared);
            term[k] = pt.value;
            ok[k] = 1;
            if (row.price_active && raw > 0.0 && raw < 1.0) {
              const Vector inj = pricer.market().injection(w_hat);
              PriceSensitivity sens(pricer.market().system(), pricer.market().qp(), dual,
                                    pricer.market().ptdf(), inj);
              if (sens.degenerate()) {
                degenerate[k] = 1;
              } else {
                grad[k] = sens.vjp(pt.d_pi)[wb];
              }
            }
          } catch (const InfeasibleError&) {
          } catch (const ConvergenceError&) {
          }
        });
        const double bn = static_cast<double>(b);
        for (std::size_t k = 0; k < b; ++k) {
          if (!ok[k]) {
            ++row.skipped;
            continue;
          }
          price_sum += term[k];
          ++price_count;
          row.degenerate += degenerate[k];
          if (row.price_active) {
            d_raw[static_cast<Eigen::Index>(k)] += sched.gamma * grad[k] * cap / bn;
          }
        }
      }
      state.adam.apply(state.model.theta, backward(state.model, cache, d_raw), row.lr);
    }
    row.prediction_loss = pred_sum / static_cast<double>(n);
    row.price_loss = price_count ? price_sum / price_count : 0.0;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.trace.push_back(row);
    if (topts.on_epoch) topts.on_epoch(state);
  }
}

/// Scenario-level evaluation of a model on a test set.
inline std::vector<ScenarioEvaluation> evaluate_model(const MlpModel& model, const Matrix& X,
                                                      ScenarioPricer& pricer) {
  const ForwardCache cache = forward_batch(model, X);
  const std::size_t n = pricer.size();
  std::vector<ScenarioEvaluation> ev(n);
  std::vector<char> ok(n, 0);
  parallel_for(n, pricer.threads(), [&](std::size_t i) {
    if (!pricer.feasible(i)) return;
    auto& e = ev[i];
    e.w = pricer.actual(i);
    e.w_hat = model.forecast_mw(cache.raw[static_cast<Eigen::Index>(i)]);
    try {
      const auto dual = pricer.solve(i, e.w_hat);
      e.pi_hat = lmp(dual, pricer.market().ptdf()).pi;
      e.pi = pricer.reference_prices(i);
      e.congested = pricer.congested(i);
      ok[i] = 1;
    } catch (const InfeasibleError&) {
    } catch (const ConvergenceError&) {
    }
  });
  std::vector<ScenarioEvaluation> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) out.push_back(std::move(ev[i]));
  }
  return out;
}

struct TrainedModelBundle {
  Mode mode = Mode::DeepWP;
  TrainState state;
  MetricsReport test_metrics;
  std::vector<ScenarioEvaluation> test_evaluations;
  /// Test metrics at the end of each stage.
  std::vector<MetricsReport> stage_metrics;
};

/// Trains both models for one seed. The price-aware run branches from the shared
/// price-agnostic state at the switch epoch, with identical parameters, optimizer moments
/// and batching stream.
struct PairedResult {
  std::optional<TrainedModelBundle> deepwp;
  std::optional<TrainedModelBundle> deepwp_plus;
};

struct PairOptions {
  bool run_deepwp = true;
  bool run_deepwp_plus = true;
  TrainOptions train;
};

inline PairedResult train_paired(const TrainSchedule& sched, const MarketClearing& market,
                                 const TrainingData& train, const TrainingData& test,
                                 const PairOptions& popts = {}) {
  sched.validate();
  const int threads = worker_count();
  const int ref = market.ptdf().ref_bus;
  ScenarioPricer test_pricer(market, test.w, threads);
  const int total = sched.total_epochs();
  const int branch = std::min(sched.switch_epoch, total);

  std::vector<int> stage_ends;
  {
    int acc = 0;
    for (const auto& s : sched.stages) stage_ends.push_back(acc += s.epochs);
  }

  auto run = [&](TrainState state, Mode mode, ScenarioPricer pricer) {
    TrainedModelBundle out;
    out.mode = mode;
    for (int end : stage_ends) {
      if (end < state.epoch) continue;
      train_until(state, end, mode, sched, train, pricer, popts.train);
      ScenarioPricer eval_pricer = test_pricer;
      auto ev = evaluate_model(state.model, test.X, eval_pricer);
      if (ev.size() >= 10) out.stage_metrics.push_back(evaluate(ev, ref));
    }
    ScenarioPricer eval_pricer = test_pricer;
    out.test_evaluations = evaluate_model(state.model, test.X, eval_pricer);
    out.test_metrics = evaluate(out.test_evaluations, ref);
    out.state = std::move(state);
    return out;
  };

  ScenarioPricer pricer(market, train.w, threads);
  TrainState shared = init_state(sched, market.capacity());
  train_until(shared, branch, Mode::DeepWP, sched, train, pricer, popts.train);

  PairedResult res;
  if (popts.run_deepwp_plus) res.deepwp_plus = run(shared, Mode::DeepWPPlus, pricer);
  if (popts.run_deepwp) res.deepwp = run(std::move(shared), Mode::DeepWP, std::move(pricer));
  return res;
}

/// Mean-over-training-set losses of a model without updating it.
inline std::pair<double, double> dataset_losses(const MlpModel& model, const TrainingData& data,
                                                ScenarioPricer& pricer, bool unsquared = false) {
  const ForwardCache cache = forward_batch(model, data.X);
  const Vector unclamped = cache.raw * model.capacity;
  const double pred = unsquared ? loss_deepwp_abs(unclamped, data.w).value
                                : loss_deepwp(unclamped, data.w).value;
  double price = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < pricer.size(); ++i) {
    if (!pricer.feasible(i)) continue;
    const auto dual = pricer.solve(i, model.forecast_mw(cache.raw[static_cast<Eigen::Index>(i)]));
    price += price_term(lmp(dual, pricer.market().ptdf()).pi, pricer.reference_prices(i), unsquared).value;
    ++count;
  }
  return {pred, count ? price / count : 0.0};
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string s = "epoch,stage,lr,prediction_loss,price_loss,price_active,degenerate,skipped\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.17g,%.17g,%d,%d,%d\n", r.epoch, r.stage, r.lr,
                  r.prediction_loss, r.price_loss, r.price_active ? 1 : 0, r.degenerate,
                  r.skipped);
    s += buf;
  }
  return s;
}

inline std::string timing_csv(const std::vector<TraceRow>& trace) {
  std::string s = "epoch,seconds\n";
  char buf[64];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.6g\n", r.epoch, r.seconds);
    s += buf;
  }
  return s;
}

namespace detail {

inline nlohmann::json vec_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Checkpoint: architecture, parameters, optimizer moments, normalization and epoch.
inline nlohmann::json checkpoint_json(const TrainState& s, const Normalizer& nz) {
  nlohmann::json j;
  j["format"] = "fairprice-checkpoint/1";
  j["mode"] = mode_name(s.mode);
  j["epoch"] = s.epoch;
  j["architecture"] = s.model.sizes;
  j["capacity_mw"] = s.model.capacity;
  j["theta"] = detail::vec_json(s.model.theta);
  j["adam"] = {{"m1", detail::vec_json(s.adam.m1)},
               {"m2", detail::vec_json(s.adam.m2)},
               {"step", s.adam.step},
               {"beta1", s.adam.beta1},
               {"beta2", s.adam.beta2},
               {"eps", s.adam.eps}};
  j["normalizer"] = {{"mean", detail::vec_json(nz.mean)},
                     {"scale", detail::vec_json(nz.scale)},
                     {"capacity_mw", nz.capacity}};
  std::ostringstream rng;
  rng << s.rng;
  j["rng"] = rng.str();
  return j;
}

inline std::pair<TrainState, Normalizer> checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fairprice-checkpoint/1") {
    throw ParseError("not a fairprice checkpoint");
  }
  TrainState s;
  try {
    s.mode = parse_mode(j.at("mode").get<std::string>());
    s.epoch = j.at("epoch").get<int>();
    s.model.sizes = j.at("architecture").get<std::vector<int>>();
    s.model.capacity = j.at("capacity_mw").get<double>();
    s.model.theta = detail::json_vec(j.at("theta"));
    const auto& a = j.at("adam");
    s.adam.m1 = detail::json_vec(a.at("m1"));
    s.adam.m2 = detail::json_vec(a.at("m2"));
    s.adam.step = a.at("step").get<long>();
    s.adam.beta1 = a.at("beta1").get<double>();
    s.adam.beta2 = a.at("beta2").get<double>();
    s.adam.eps = a.at("eps").get<double>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  if (s.model.theta.size() != MlpModel::parameter_count(s.model.sizes)) {
    throw ParseError("checkpoint parameter count does not match its architecture");
  }
  Normalizer nz;
  const auto& n = j.at("normalizer");
  nz.mean = detail::json_vec(n.at("mean"));
  nz.scale = detail::json_vec(n.at("scale"));
  nz.capacity = n.at("capacity_mw").get<double>();
  return {std::move(s), std::move(nz)};
}

}  // namespace fairprice
