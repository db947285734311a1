// fairprice command-line entry point.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "fairprice/commands.hpp"
#include "fairprice/three_area.hpp"

namespace fp = fairprice;
namespace fs = std::filesystem;

namespace {

struct TrainFlags {
  std::string config;
  std::string case_path;
  int wind_bus = -1;
  double wind_capacity = -1;
  double fbar_scale = -1;
  std::string data;
  std::string mode;
  double gamma = -1;
  std::string epochs;
  std::string seeds;
  std::string out;
  std::string run_id;
  long batch_size = -1;
  long train_size = -1;
  long test_size = -1;
  long split_seed = -1;
  bool unsquared = false;
};

void add_case_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--case", f.case_path, "case file (.m or .json)");
  cmd->add_option("--wind-bus", f.wind_bus, "external id of the wind bus");
  cmd->add_option("--wind-capacity", f.wind_capacity, "wind farm capacity, MW");
  cmd->add_option("--fbar-scale", f.fbar_scale, "line-limit scale factor");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "run configuration JSON");
  add_case_flags(cmd, f);
  cmd->add_option("--data", f.data, "csv:<path> or synth:<n>:<seed>");
  cmd->add_option("--mode", f.mode, "deepwp, deepwp+ or both");
  cmd->add_option("--gamma", f.gamma, "price-loss weight");
  cmd->add_option("--epochs-override", f.epochs, "comma-separated epochs per stage");
  cmd->add_option("--seeds", f.seeds, "seed list, e.g. 1-5 or 1,2,7");
  cmd->add_option("--out", f.out, "output root directory");
  cmd->add_option("--run-id", f.run_id, "run directory name");
  cmd->add_option("--batch-size", f.batch_size, "mini-batch size (0 = full batch)");
  cmd->add_option("--train-size", f.train_size, "training scenarios");
  cmd->add_option("--test-size", f.test_size, "test scenarios");
  cmd->add_option("--split-seed", f.split_seed, "train/test split seed");
  cmd->add_flag("--unsquared", f.unsquared, "use unsquared norms in the loss");
}

fp::RunConfig build_config(const TrainFlags& f) {
  fp::RunConfig c;
  if (!f.config.empty()) c = fp::load_config(f.config);
  if (!f.case_path.empty()) {
    c.case_path = f.case_path;
    if (f.config.empty()) c.name = fp::stem_of(f.case_path);
  }
  if (f.wind_bus >= 0) c.wind_bus = f.wind_bus;
  if (f.wind_capacity >= 0) c.wind_capacity = f.wind_capacity;
  if (f.fbar_scale >= 0) c.fbar_scale = f.fbar_scale;
  if (!f.data.empty()) c.data = fp::DataSource::parse(f.data);
  if (!f.mode.empty()) c.mode = f.mode;
  if (f.gamma >= 0) c.schedule.gamma = f.gamma;
  if (!f.epochs.empty()) fp::apply_epochs_override(c.schedule, f.epochs);
  if (!f.seeds.empty()) c.seeds = fp::parse_seeds(f.seeds);
  if (!f.out.empty()) c.out = f.out;
  if (!f.run_id.empty()) c.run_id = f.run_id;
  if (f.batch_size >= 0) c.schedule.batch_size = static_cast<std::size_t>(f.batch_size);
  if (f.train_size >= 0) c.split.train = static_cast<std::size_t>(f.train_size);
  if (f.test_size >= 0) c.split.test = static_cast<std::size_t>(f.test_size);
  if (f.split_seed >= 0) c.split.seed = static_cast<std::uint64_t>(f.split_seed);
  if (f.unsquared) c.schedule.unsquared = true;
  return c;
}

std::vector<fp::RunConfig> configs_from(const std::vector<std::string>& paths) {
  std::vector<fp::RunConfig> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(fp::load_config(f.string()));
    } else {
      out.push_back(fp::load_config(p));
    }
  }
  if (out.empty()) throw fp::ValidationError("no configurations found");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-focused wind forecasting with a differentiable market-clearing layer"};
  app.require_subcommand(1);

  // convert
  std::string conv_in, conv_out;
  double conv_floor = 1e-4;
  auto* convert = app.add_subcommand("convert", "convert a MATPOWER case to canonical JSON");
  convert->add_option("input", conv_in, "MATPOWER .m file")->required();
  convert->add_option("output", conv_out, "output .json file")->required();
  convert->add_option("--cost-floor", conv_floor, "minimum quadratic cost, $/MW^2h");

  // train
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train DeepWP and/or DeepWP+ over a seed list");
  add_train_flags(train, tf);

  // gradcheck
  TrainFlags gf;
  int gc_points = 50, gc_kinks = 3;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  std::string gc_out;
  auto* grad = app.add_subcommand("gradcheck", "compare price sensitivities with finite differences");
  grad->add_option("--config", gf.config, "run configuration JSON (case part only)");
  add_case_flags(grad, gf);
  grad->add_option("--points", gc_points, "non-degenerate random points");
  grad->add_option("--kinks", gc_kinks, "active-set switches to probe");
  grad->add_option("--seed", gc_seed, "sampling seed");
  grad->add_option("--tolerance", gc_tol, "maximum relative error");
  grad->add_option("--out", gc_out, "report CSV path");

  // bench
  std::vector<std::string> bench_cfgs;
  int bench_epochs = 10;
  long bench_train = -1;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "time price-aware training epochs per case");
  bench->add_option("configs", bench_cfgs, "configuration files or directories")->required();
  bench->add_option("--epochs", bench_epochs, "epochs to time (at least 10 recommended)");
  bench->add_option("--train-size", bench_train, "training scenarios per epoch");
  bench->add_option("--out", bench_out, "markdown output path");

  // table1
  std::vector<std::string> t1_cfgs;
  std::string t1_out = "runs", t1_id = "table1", t1_epochs, t1_seeds, t1_data;
  long t1_train = -1, t1_test = -1, t1_batch = -1;
  double t1_gamma = -1;
  bool t1_dry = false;
  auto* table1 = app.add_subcommand("table1", "full benchmark protocol over all case configurations");
  table1->add_option("configs", t1_cfgs, "configuration files or directories");
  table1->add_option("--out", t1_out, "output root");
  table1->add_option("--run-id", t1_id, "run directory name");
  table1->add_option("--epochs-override", t1_epochs, "comma-separated epochs per stage");
  table1->add_option("--seeds", t1_seeds, "seed list");
  table1->add_option("--data", t1_data, "data source override");
  table1->add_option("--train-size", t1_train, "training scenarios");
  table1->add_option("--test-size", t1_test, "test scenarios");
  table1->add_option("--batch-size", t1_batch, "mini-batch size");
  table1->add_option("--gamma", t1_gamma, "price-loss weight");
  table1->add_flag("--dry-run", t1_dry, "validate and print the plan only");

  // build-three-area
  std::string ta_in, ta_out;
  auto* three = app.add_subcommand("build-three-area", "assemble the 73-bus three-area case from a 24-bus area");
  three->add_option("area", ta_in, "24-bus area case")->required();
  three->add_option("output", ta_out, "output .json file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*convert) {
      fp::MatpowerOptions mo;
      mo.cost_floor = conv_floor;
      const auto c = fp::load_case(conv_in, mo);
      fp::write_file(conv_out, fp::case_to_json(c).dump(1) + "\n");
      std::cout << c.name << ": " << c.n_bus() << " buses, " << c.n_line() << " lines, "
                << c.gen_max.sum() << " MW generation capacity, " << c.load.sum() << " MW load\n";
      for (const auto& n : c.metadata.notes) std::cout << "note: " << n << "\n";
      if (!c.metadata.floored_buses.empty()) {
        std::cout << "quadratic cost floored at " << c.metadata.cost_floor << " on "
                  << c.metadata.floored_buses.size() << " buses\n";
      }
      return 0;
    }
    if (*train) {
      const auto cfg = build_config(tf);
      const auto res = fp::cmd_train(cfg, std::cerr);
      std::cout << "wrote " << res.dir.string() << "\n";
      std::cout << fp::read_text_file((res.dir / "aggregate.md").string());
      return 0;
    }
    if (*grad) {
      fp::GradcheckConfig g;
      if (!gf.config.empty()) {
        const auto rc = fp::load_config(gf.config);
        g.case_path = rc.case_path;
        g.wind_bus = rc.wind_bus;
        g.wind_capacity = rc.wind_capacity;
        g.fbar_scale = rc.fbar_scale;
      }
      if (!gf.case_path.empty()) g.case_path = gf.case_path;
      if (gf.wind_bus >= 0) g.wind_bus = gf.wind_bus;
      if (gf.wind_capacity >= 0) g.wind_capacity = gf.wind_capacity;
      if (gf.fbar_scale >= 0) g.fbar_scale = gf.fbar_scale;
      g.options.points = gc_points;
      g.options.kinks = gc_kinks;
      g.options.seed = gc_seed;
      g.options.tolerance = gc_tol;
      const auto res = fp::cmd_gradcheck(g);
      const std::string csv = res.report.to_csv();
      if (!gc_out.empty()) {
        fp::write_file(gc_out, csv);
      } else {
        std::cout << csv;
      }
      std::cout << "non-degenerate points: " << res.report.nondegenerate_count()
                << ", worst relative error: " << res.report.worst_error()
                << ", kinks flagged: " << (res.report.kinks_flagged() ? "yes" : "no")
                << ", points with identical Jacobian rows: " << res.identical_row_points
                << ", infeasible skipped: " << res.report.infeasible_skipped << "\n"
                << (res.passed ? "PASS" : "FAIL") << "\n";
      return res.passed ? 0 : 1;
    }
    if (*bench) {
      const auto rows = fp::cmd_bench(configs_from(bench_cfgs), bench_epochs,
                                      bench_train >= 0 ? std::optional<std::size_t>(bench_train) : std::nullopt);
      const std::string md = fp::bench_markdown(rows);
      if (!bench_out.empty()) fp::write_file(bench_out, md);
      std::cout << md;
      return 0;
    }
    if (*table1) {
      if (t1_cfgs.empty()) t1_cfgs.push_back(std::string(FAIRPRICE_DATA_DIR) + "/configs");
      fp::ProtocolOverrides o;
      if (!t1_epochs.empty()) o.epochs = t1_epochs;
      if (!t1_seeds.empty()) o.seeds = fp::parse_seeds(t1_seeds);
      if (!t1_data.empty()) o.data = t1_data;
      if (t1_train >= 0) o.train = static_cast<std::size_t>(t1_train);
      if (t1_test >= 0) o.test = static_cast<std::size_t>(t1_test);
      if (t1_batch >= 0) o.batch_size = static_cast<std::size_t>(t1_batch);
      if (t1_gamma >= 0) o.gamma = t1_gamma;
      std::vector<fp::RunConfig> cfgs;
      for (auto c : configs_from(t1_cfgs)) {
        if (c.name.rfind("desk_", 0) == 0) continue;
        cfgs.push_back(fp::apply_overrides(std::move(c), o));
      }
      std::cout << fp::cmd_table1(cfgs, t1_out, t1_id, t1_dry, std::cerr);
      return 0;
    }
    if (*three) {
      const auto c = fp::make_three_area(fp::load_case(ta_in));
      fp::write_file(ta_out, fp::case_to_json(c).dump(1) + "\n");
      std::cout << c.name << ": " << c.n_bus() << " buses, " << c.n_line() << " lines\n";
      return 0;
    }
  } catch (const fp::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const fp::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
