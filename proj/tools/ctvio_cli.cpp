#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ctvio/io.hpp"
#include "ctvio/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctvio;

namespace {

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<int> seed;
};

struct RunArgs {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<int> strategy;
  std::optional<double> init_us;
  std::optional<std::string> init;
  bool no_line_delay = false;
  std::vector<int> seeds;
};

struct EvaluateArgs {
  std::string estimate;
  std::string ground_truth;
  std::string out;
  double tolerance = 1e-3;
};

struct CalibArgs {
  std::string trace;
  std::optional<double> ref_us;
  double window = 5.0;
  double band_us = 10.0;
};

int simulate(const SimulateArgs& a) {
  const KeyValueFile kv = KeyValueFile::load(a.config);
  SimConfig c = sim_config_from(kv);
  if (a.seed) c.seed = static_cast<std::uint64_t>(*a.seed);
  const std::string out = !a.out.empty() ? a.out : kv.get_string("output.dir", "dataset");
  const Simulator sim(c);
  const Dataset d = sim.generate();
  write_dataset(out, d);
  std::cout << "wrote " << out << ": " << d.imu.size() << " IMU samples, " << d.frames.size() << " frames, "
            << d.landmarks.size() << " landmarks, line delay " << format_double(c.line_delay * 1e6) << " us\n";
  return 0;
}

int run(const RunArgs& a) {
  const KeyValueFile kv = KeyValueFile::load(a.config);
  EstimatorConfig c = estimator_config_from(kv);
  if (a.strategy) c.strategy = *a.strategy;
  if (a.init_us) c.line_delay_init = *a.init_us * 1e-6;
  if (a.init) c.init = parse_init_mode(*a.init);
  if (a.no_line_delay) c.estimate_line_delay = false;
  c.validate();

  const Dataset d = load_dataset(a.dataset);
  if (d.frames.empty()) throw std::runtime_error("dataset " + a.dataset + " has no frames; nothing to estimate");
  std::optional<OracleData> oracle;
  if (c.init == InitMode::kOracle) oracle = oracle_from_dataset(d);

  const std::string out = !a.out.empty() ? a.out : kv.get_string("output.dir", "run");
  std::vector<int> seeds = a.seeds;
  if (seeds.empty()) seeds.push_back(static_cast<int>(c.seed));
  for (int seed : seeds) {
    EstimatorConfig sc = c;
    sc.seed = static_cast<std::uint64_t>(seed);
    const RunResult r = run_dataset(d, sc, oracle);
    if (r.poses.size() < 3) {
      throw std::runtime_error("estimator produced only " + std::to_string(r.poses.size()) + " keyframe poses");
    }
    const std::string dir = seeds.size() > 1 ? (fs::path(out) / ("seed_" + std::to_string(seed))).string() : out;
    write_run_outputs(dir, r);
    std::cout << "seed " << seed << ": " << r.poses.size() << " keyframes, " << r.reports.size()
              << " windows, line delay " << format_double(r.line_delay * 1e6) << " us, " << r.seconds << " s -> "
              << dir << "\n";
  }
  return 0;
}

int evaluate(const EvaluateArgs& a) {
  const std::vector<StampedPose> est = read_trajectory(a.estimate);
  const std::vector<StampedPose> gt = read_trajectory(a.ground_truth);
  const ApeResult ape = compute_ape(est, gt, a.tolerance);
  const std::string out = !a.out.empty() ? a.out : (fs::path(a.estimate).parent_path() / "ape.txt").string();
  std::ofstream f(out);
  f << "rmse_m = " << format_double(ape.rmse) << "\nmean_m = " << format_double(ape.mean)
    << "\nmax_m = " << format_double(ape.max) << "\npairs = " << ape.pairs << "\n";
  if (!f) throw std::runtime_error("cannot write " + out);
  std::cout << "APE RMSE " << format_double(ape.rmse) << " m (mean " << ape.mean << ", max " << ape.max << ", "
            << ape.pairs << " poses)\n";
  return 0;
}

int calib_report(const CalibArgs& a) {
  const CalibrationReport r = calibration_report(read_calibration_trace(a.trace), a.window, a.ref_us, a.band_us);
  std::cout << "samples " << r.samples << "\nfinal " << format_double(r.final_us) << " us\n"
            << "last " << a.window << " s: mean " << format_double(r.mean_us) << " us, std "
            << format_double(r.std_us) << " us over " << r.window_samples << " samples\n";
  if (r.reference_us) {
    std::cout << "reference " << format_double(*r.reference_us) << " us, error " << format_double(*r.error_us)
              << " us (|error| " << format_double(std::abs(*r.error_us)) << " us)\n";
    if (r.convergence_time) {
      std::cout << "within " << a.band_us << " us of the reference after " << *r.convergence_time << " s\n";
    } else {
      std::cout << "never stays within " << a.band_us << " us of the reference\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time rolling-shutter visual-inertial odometry"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* s = app.add_subcommand("simulate", "Generate a synthetic dataset with ground truth");
  s->add_option("config", sim.config, "Configuration file")->required()->check(CLI::ExistingFile);
  s->add_option("--out,-o", sim.out, "Output directory (default: output.dir or ./dataset)");
  s->add_option("--seed", sim.seed, "Override sim.seed");

  RunArgs run_args;
  CLI::App* r = app.add_subcommand("run", "Run the estimator on a dataset");
  r->add_option("config", run_args.config, "Configuration file")->required()->check(CLI::ExistingFile);
  r->add_option("dataset", run_args.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out,-o", run_args.out, "Output directory (default: output.dir or ./run)");
  r->add_option("--strategy", run_args.strategy, "Marginalization strategy")->check(CLI::IsMember({1, 2}));
  r->add_option("--init-us", run_args.init_us, "Initial line delay in microseconds");
  r->add_option("--init", run_args.init, "Initialization mode")->check(CLI::IsMember({"oracle", "coarse"}));
  r->add_flag("--no-line-delay", run_args.no_line_delay, "Keep the line delay fixed at its initial value");
  r->add_option("--seed", run_args.seeds, "Estimator seed; several values run a sweep into seed_<n>/");

  EvaluateArgs eval;
  CLI::App* e = app.add_subcommand("evaluate", "Absolute pose error of an estimate against ground truth");
  e->add_option("estimate", eval.estimate, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  e->add_option("ground_truth", eval.ground_truth, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);
  e->add_option("--out,-o", eval.out, "Result file (default: ape.txt next to the estimate)");
  e->add_option("--tolerance", eval.tolerance, "Timestamp association tolerance in seconds");

  CalibArgs calib;
  CLI::App* c = app.add_subcommand("calib-report", "Line-delay statistics over the end of a calibration trace");
  c->add_option("trace", calib.trace, "Calibration trace (line_delay.csv)")->required()->check(CLI::ExistingFile);
  c->add_option("--ref", calib.ref_us, "Reference line delay in microseconds");
  c->add_option("--window", calib.window, "Averaging window in seconds");
  c->add_option("--band", calib.band_us, "Convergence band in microseconds");

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return simulate(sim);
    if (r->parsed()) return run(run_args);
    if (e->parsed()) return evaluate(eval);
    if (c->parsed()) return calib_report(calib);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
