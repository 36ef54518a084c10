#include "ctvio/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

namespace ctvio {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // [sim]
      "sim.duration", "sim.imu_rate", "sim.frame_rate", "sim.line_delay_us", "sim.landmark_count",
      "sim.landmark_min", "sim.landmark_max", "sim.pixel_sigma", "sim.initial_gyro_bias",
      "sim.initial_accel_bias", "sim.speed", "sim.static_duration", "sim.spline_truth", "sim.spline_dt",
      "sim.row_tolerance", "sim.max_row_iterations", "sim.min_tracks", "sim.seed", "sim.noise_free",
      "sim.gyro_noise_density", "sim.accel_noise_density", "sim.gyro_bias_walk", "sim.accel_bias_walk",
      // [camera]
      "camera.fx", "camera.fy", "camera.cx", "camera.cy", "camera.width", "camera.height", "camera.gravity",
      // [estimator]
      "estimator.knot_interval", "estimator.window_size", "estimator.max_features", "estimator.pixel_sigma",
      "estimator.huber_threshold", "estimator.keyframe_parallax", "estimator.min_tracks", "estimator.strategy",
      "estimator.line_delay_init_us", "estimator.estimate_line_delay", "estimator.min_triangulation_angle",
      "estimator.min_depth", "estimator.max_depth", "estimator.gauge_rotation_sigma",
      "estimator.gauge_position_sigma", "estimator.bias_prior_gyro", "estimator.bias_prior_accel",
      "estimator.init", "estimator.seed", "estimator.static_gyro_threshold", "estimator.static_accel_threshold",
      "estimator.min_static_duration",
      // [oracle]
      "oracle.rotation_sigma", "oracle.position_sigma", "oracle.depth_sigma", "oracle.gyro_bias_sigma",
      "oracle.accel_bias_sigma",
      // [imu] noise model used to weight the IMU factors
      "imu.gyro_noise_density", "imu.accel_noise_density", "imu.gyro_bias_walk", "imu.accel_bias_walk",
      // [solver]
      "solver.max_iterations", "solver.function_tolerance", "solver.gradient_tolerance", "solver.min_cost",
      "solver.initial_lambda",
      // [output]
      "output.dir"};
  return keys;
}

}  // namespace

SimConfig sim_config_from(const KeyValueFile& kv) {
  kv.reject_unknown(known_keys());
  SimConfig c = kv.get_bool("sim.noise_free", false) ? SimConfig::noise_free() : SimConfig{};
  c.duration = kv.get_double("sim.duration", c.duration);
  c.imu_rate = kv.get_double("sim.imu_rate", c.imu_rate);
  c.frame_rate = kv.get_double("sim.frame_rate", c.frame_rate);
  c.line_delay = kv.get_double("sim.line_delay_us", c.line_delay * 1e6) * 1e-6;
  c.landmark_count = kv.get_int("sim.landmark_count", c.landmark_count);
  c.landmark_min = kv.get_vec3("sim.landmark_min", c.landmark_min);
  c.landmark_max = kv.get_vec3("sim.landmark_max", c.landmark_max);
  c.pixel_sigma = kv.get_double("sim.pixel_sigma", c.pixel_sigma);
  c.initial_bias.gyro = kv.get_vec3("sim.initial_gyro_bias", c.initial_bias.gyro);
  c.initial_bias.accel = kv.get_vec3("sim.initial_accel_bias", c.initial_bias.accel);
  c.speed = parse_speed_preset(kv.get_string("sim.speed", to_string(c.speed)));
  c.static_duration = kv.get_double("sim.static_duration", c.static_duration);
  c.spline_truth = kv.get_bool("sim.spline_truth", c.spline_truth);
  c.spline_dt = kv.get_double("sim.spline_dt", c.spline_dt);
  c.row_tolerance = kv.get_double("sim.row_tolerance", c.row_tolerance);
  c.max_row_iterations = kv.get_int("sim.max_row_iterations", c.max_row_iterations);
  c.min_tracks = kv.get_int("sim.min_tracks", c.min_tracks);
  c.seed = static_cast<std::uint64_t>(kv.get_int("sim.seed", static_cast<int>(c.seed)));
  c.noise.gyro_noise_density = kv.get_double("sim.gyro_noise_density", c.noise.gyro_noise_density);
  c.noise.accel_noise_density = kv.get_double("sim.accel_noise_density", c.noise.accel_noise_density);
  c.noise.gyro_bias_walk = kv.get_double("sim.gyro_bias_walk", c.noise.gyro_bias_walk);
  c.noise.accel_bias_walk = kv.get_double("sim.accel_bias_walk", c.noise.accel_bias_walk);
  c.noise.rate = c.imu_rate;
  c.intrinsics.fx = kv.get_double("camera.fx", c.intrinsics.fx);
  c.intrinsics.fy = kv.get_double("camera.fy", c.intrinsics.fy);
  c.intrinsics.cx = kv.get_double("camera.cx", c.intrinsics.cx);
  c.intrinsics.cy = kv.get_double("camera.cy", c.intrinsics.cy);
  c.intrinsics.width = kv.get_int("camera.width", c.intrinsics.width);
  c.intrinsics.height = kv.get_int("camera.height", c.intrinsics.height);
  c.gravity = kv.get_vec3("camera.gravity", c.gravity);
  c.validate();
  return c;
}

EstimatorConfig estimator_config_from(const KeyValueFile& kv) {
  kv.reject_unknown(known_keys());
  EstimatorConfig c;
  c.knot_interval = kv.get_double("estimator.knot_interval", c.knot_interval);
  c.window_size = kv.get_int("estimator.window_size", c.window_size);
  c.max_features = kv.get_int("estimator.max_features", c.max_features);
  c.pixel_sigma = kv.get_double("estimator.pixel_sigma", c.pixel_sigma);
  c.huber_threshold = kv.get_double("estimator.huber_threshold", c.huber_threshold);
  c.keyframe_parallax = kv.get_double("estimator.keyframe_parallax", c.keyframe_parallax);
  c.min_tracks = kv.get_int("estimator.min_tracks", c.min_tracks);
  c.strategy = kv.get_int("estimator.strategy", c.strategy);
  c.line_delay_init = kv.get_double("estimator.line_delay_init_us", c.line_delay_init * 1e6) * 1e-6;
  c.estimate_line_delay = kv.get_bool("estimator.estimate_line_delay", c.estimate_line_delay);
  c.min_triangulation_angle = kv.get_double("estimator.min_triangulation_angle", c.min_triangulation_angle);
  c.min_depth = kv.get_double("estimator.min_depth", c.min_depth);
  c.max_depth = kv.get_double("estimator.max_depth", c.max_depth);
  c.gauge_rotation_sigma = kv.get_double("estimator.gauge_rotation_sigma", c.gauge_rotation_sigma);
  c.gauge_position_sigma = kv.get_double("estimator.gauge_position_sigma", c.gauge_position_sigma);
  c.bias_prior_gyro = kv.get_double("estimator.bias_prior_gyro", c.bias_prior_gyro);
  c.bias_prior_accel = kv.get_double("estimator.bias_prior_accel", c.bias_prior_accel);
  c.init = parse_init_mode(kv.get_string("estimator.init", to_string(c.init)));
  c.seed = static_cast<std::uint64_t>(kv.get_int("estimator.seed", static_cast<int>(c.seed)));
  c.static_gyro_threshold = kv.get_double("estimator.static_gyro_threshold", c.static_gyro_threshold);
  c.static_accel_threshold = kv.get_double("estimator.static_accel_threshold", c.static_accel_threshold);
  c.min_static_duration = kv.get_double("estimator.min_static_duration", c.min_static_duration);
  c.oracle_rotation_sigma = kv.get_double("oracle.rotation_sigma", c.oracle_rotation_sigma);
  c.oracle_position_sigma = kv.get_double("oracle.position_sigma", c.oracle_position_sigma);
  c.oracle_depth_sigma = kv.get_double("oracle.depth_sigma", c.oracle_depth_sigma);
  c.oracle_gyro_bias_sigma = kv.get_double("oracle.gyro_bias_sigma", c.oracle_gyro_bias_sigma);
  c.oracle_accel_bias_sigma = kv.get_double("oracle.accel_bias_sigma", c.oracle_accel_bias_sigma);
  c.noise.gyro_noise_density = kv.get_double("imu.gyro_noise_density", c.noise.gyro_noise_density);
  c.noise.accel_noise_density = kv.get_double("imu.accel_noise_density", c.noise.accel_noise_density);
  c.noise.gyro_bias_walk = kv.get_double("imu.gyro_bias_walk", c.noise.gyro_bias_walk);
  c.noise.accel_bias_walk = kv.get_double("imu.accel_bias_walk", c.noise.accel_bias_walk);
  c.solver.max_iterations = kv.get_int("solver.max_iterations", c.solver.max_iterations);
  c.solver.function_tolerance = kv.get_double("solver.function_tolerance", c.solver.function_tolerance);
  c.solver.gradient_tolerance = kv.get_double("solver.gradient_tolerance", c.solver.gradient_tolerance);
  c.solver.min_cost = kv.get_double("solver.min_cost", c.solver.min_cost);
  c.solver.initial_lambda = kv.get_double("solver.initial_lambda", c.solver.initial_lambda);
  c.validate();
  return c;
}

OracleData oracle_from_simulator(const Simulator& sim) {
  OracleData o;
  const std::vector<Vec3>& lms = sim.landmarks();
  for (std::size_t i = 0; i < lms.size(); ++i) o.landmarks.emplace(static_cast<int>(i), lms[i]);
  o.line_delay = sim.config().line_delay;
  const double duration = sim.config().duration;
  o.state = [&sim, duration](double t) {
    const double tc = std::clamp(t, 0.0, duration);
    const TruthState s = sim.truth_state(tc);
    return TruthRecord{tc, s.pose, s.v, sim.true_bias(tc), std::nullopt};
  };
  return o;
}

RunResult run_dataset(const Dataset& dataset, EstimatorConfig config, std::optional<OracleData> oracle) {
  config.intrinsics = dataset.intrinsics;
  config.extrinsic = dataset.extrinsic;
  config.gravity = dataset.gravity;
  config.noise.rate = dataset.noise.rate;
  const auto start = std::chrono::steady_clock::now();
  Estimator est(config, std::move(oracle));
  for (const ImuSample& s : dataset.imu) est.process_imu(s);
  for (const Frame& f : dataset.frames) est.process_frame(f);
  est.finish();
  RunResult r;
  r.poses = est.poses();
  r.trace = est.calibration_trace();
  r.reports = est.reports();
  r.line_delay = est.line_delay();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_run_outputs(const std::string& dir, const RunResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  write_trajectory((root / "trajectory.txt").string(), result.poses);
  write_calibration_trace((root / "line_delay.csv").string(), result.trace);
  std::ofstream out(root / "windows.csv");
  if (!out) throw std::runtime_error("cannot write " + (root / "windows.csv").string());
  out << "# t,frames,keyframes,landmarks,visual_factors,imu_factors,prior_dim,line_delay_us,iterations,"
         "initial_cost,final_cost,termination,action\n";
  for (const WindowReport& w : result.reports) {
    out << format_double(w.t) << ',' << w.frames << ',' << w.keyframes << ',' << w.landmarks << ','
        << w.visual_factors << ',' << w.imu_factors << ',' << w.prior_dim << ',' << format_double(w.line_delay * 1e6)
        << ',' << w.solve.iterations << ',' << format_double(w.solve.initial_cost) << ','
        << format_double(w.solve.final_cost) << ',' << to_string(w.solve.termination) << ','
        << (w.marginalized ? "marginalize" : w.dropped ? "drop" : "none") << '\n';
  }
  if (!out) throw std::runtime_error("write failure on " + (root / "windows.csv").string());
}

}  // namespace ctvio
