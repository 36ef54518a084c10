#include <doctest.h>

#include "ctvio/estimator.hpp"
#include "ctvio/io.hpp"
#include "ctvio/pipeline.hpp"
#include "ctvio/simulator.hpp"
#include "test_util.hpp"

using namespace ctvio;
using namespace ctvio::testing;

namespace {

SimConfig short_sim(double duration, bool spline_truth) {
  SimConfig c = SimConfig::noise_free();
  c.duration = duration;
  c.spline_truth = spline_truth;
  return c;
}

EstimatorConfig config_for(const Dataset& d) {
  EstimatorConfig c;
  c.intrinsics = d.intrinsics;
  c.extrinsic = d.extrinsic;
  c.gravity = d.gravity;
  c.noise.rate = d.noise.rate;
  return c;
}

std::vector<FeatureObservation> features(std::initializer_list<std::pair<int, Vec2>> list) {
  std::vector<FeatureObservation> out;
  for (const auto& [id, px] : list) out.push_back({id, px});
  return out;
}

// Camera pose reading the given pixel row of a frame starting at t.
Pose row_pose(const Trajectory& traj, double t, double row, double line_delay) {
  return traj.camera_pose(t + row * line_delay);
}

// Reprojection cost of an anchor depth, every view read at its own row.
double reprojection_cost(const Trajectory& traj, const PinholeIntrinsics& intr, double line_delay,
                         const std::vector<Observation>& obs, double depth) {
  const Vec2& a = obs[0].pixel;
  const Vec3 world = row_pose(traj, obs[0].frame_time, a.y(), line_delay) * (back_project(intr, a) * depth);
  double cost = 0.0;
  for (std::size_t j = 1; j < obs.size(); ++j) {
    const Vec3 c = row_pose(traj, obs[j].frame_time, obs[j].pixel.y(), line_delay).inverse() * world;
    const Vec2 px(intr.fx * c.x() / c.z() + intr.cx, intr.fy * c.y() / c.z() + intr.cy);
    cost += (px - obs[j].pixel).squaredNorm();
  }
  return cost;
}

}  // namespace

TEST_CASE("keyframe decision uses a strict parallax threshold") {
  const auto kf = features({{1, {100, 100}}, {2, {200, 200}}});
  const auto prev = kf;
  const auto at_threshold = features({{1, {110, 100}}, {2, {200, 210}}});
  KeyframeStats s = keyframe_stats(at_threshold, kf, prev);
  CHECK(s.common == 2);
  CHECK(s.tracked == 2);
  CHECK(s.mean_parallax == doctest::Approx(10.0));
  CHECK_FALSE(keyframe_decision(s, 10.0, 2));
  const auto beyond = features({{1, {110.5, 100}}, {2, {200, 210.5}}});
  CHECK(keyframe_decision(keyframe_stats(beyond, kf, prev), 10.0, 2));
}

TEST_CASE("keyframe decision on lost tracks") {
  const auto kf = features({{1, {100, 100}}, {2, {200, 200}}, {3, {300, 300}}});
  const auto frame = features({{1, {100, 100}}, {4, {50, 50}}});
  const KeyframeStats s = keyframe_stats(frame, kf, kf);
  CHECK(s.tracked == 1);
  CHECK(s.mean_parallax == 0.0);
  CHECK(keyframe_decision(s, 10.0, 2));
  CHECK_FALSE(keyframe_decision(s, 10.0, 1));
  CHECK(keyframe_stats({}, kf, kf).common == 0);
}

TEST_CASE("triangulation recovers noise-free depths") {
  Simulator sim(short_sim(2.0, true));
  const Trajectory& traj = *sim.truth_spline();
  const double tr = sim.config().line_delay;
  const PinholeIntrinsics& intr = sim.config().intrinsics;
  const Frame f0 = sim.synth_rs_frame(0.3);
  const Frame f1 = sim.synth_rs_frame(0.6);
  const Frame f2 = sim.synth_rs_frame(0.9);
  int checked = 0;
  for (const FeatureObservation& o : f0.observations) {
    std::vector<Observation> obs{{f0.t, o.pixel}};
    for (const Frame* f : {&f1, &f2}) {
      for (const FeatureObservation& p : f->observations) {
        if (p.id == o.id) obs.push_back({f->t, p.pixel});
      }
    }
    if (obs.size() < 3) continue;
    const std::optional<double> inv = triangulate_inverse_depth(traj, intr, tr, obs, 0.1);
    if (!inv) continue;
    const Pose Twc = row_pose(traj, f0.t, o.pixel.y(), tr);
    const double depth = (Twc.inverse() * sim.landmarks()[o.id]).z();
    CHECK(std::abs(1.0 / *inv - depth) <= 1e-6 * depth);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("triangulation matches a three-view grid search") {
  Simulator sim(short_sim(2.0, true));
  const Trajectory& traj = *sim.truth_spline();
  const double tr = sim.config().line_delay;
  const PinholeIntrinsics& intr = sim.config().intrinsics;
  std::mt19937_64 noise(7);
  const Frame f0 = sim.synth_rs_frame(0.2, &noise);
  const Frame f1 = sim.synth_rs_frame(0.5, &noise);
  const Frame f2 = sim.synth_rs_frame(0.8, &noise);
  int checked = 0;
  for (const FeatureObservation& o : f0.observations) {
    std::vector<Observation> obs{{f0.t, o.pixel}};
    for (const Frame* f : {&f1, &f2}) {
      for (const FeatureObservation& p : f->observations) {
        if (p.id == o.id) obs.push_back({f->t, p.pixel});
      }
    }
    if (obs.size() < 3) continue;
    const std::optional<double> inv = triangulate_inverse_depth(traj, intr, tr, obs, 0.1);
    if (!inv) continue;
    // Coarse-to-fine search over the anchor depth.
    double lo = 0.5, hi = 30.0, best = lo;
    for (int level = 0; level < 6; ++level) {
      double best_cost = 1e300;
      const int steps = 200;
      for (int i = 0; i <= steps; ++i) {
        const double d = lo + (hi - lo) * i / steps;
        const double c = reprojection_cost(traj, intr, tr, obs, d);
        if (c < best_cost) {
          best_cost = c;
          best = d;
        }
      }
      const double h = (hi - lo) / steps;
      lo = std::max(0.1, best - h);
      hi = best + h;
    }
    // The linear solution minimizes an algebraic error, so allow a few percent.
    CHECK(std::abs(1.0 / *inv - best) <= 0.05 * best);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("triangulation rejects a static camera") {
  Trajectory traj(KnotGrid{0.0, 0.1});
  for (int k = 0; k < 8; ++k) traj.push_back({Rotation::Identity(), Vec3::Zero()});
  PinholeIntrinsics intr;
  const std::vector<Observation> obs{{0.1, {300, 200}}, {0.2, {300, 200}}, {0.3, {300, 200}}};
  CHECK_FALSE(triangulate_inverse_depth(traj, intr, 0.0, obs).has_value());
  CHECK_FALSE(triangulate_inverse_depth(traj, intr, 0.0, {obs[0]}).has_value());
}

TEST_CASE("oracle initialization on spline truth starts at the optimum") {
  SimConfig sc = short_sim(1.5, true);
  Simulator sim(sc);
  const Dataset d = sim.generate();
  EstimatorConfig c = config_for(d);
  c.line_delay_init = sc.line_delay;
  c.strategy = 2;
  const RunResult r = run_dataset(d, c, oracle_from_simulator(sim));
  REQUIRE(!r.reports.empty());
  CHECK(r.reports[0].solve.iterations <= 2);
  CHECK(r.reports[0].solve.final_cost < 1e-12);
  const ApeResult ape = compute_ape(r.poses, d.ground_truth);
  CHECK(ape.rmse < 1e-5);
  CHECK(std::abs(r.line_delay - sc.line_delay) < 1e-9);
}

TEST_CASE("sliding window bookkeeping") {
  SimConfig sc = short_sim(3.0, false);
  Simulator sim(sc);
  const Dataset d = sim.generate();
  EstimatorConfig c = config_for(d);
  c.window_size = 6;
  Estimator est(c, oracle_from_simulator(sim));
  for (const ImuSample& s : d.imu) est.process_imu(s);

  int drops = 0, marginalizations = 0;
  int max_prior = 0;
  for (const Frame& f : d.frames) {
    const auto prior_before = est.prior();
    if (est.process_frame(f) == FrameStatus::kDeferred) continue;
    const WindowReport& r = est.reports().back();
    CHECK(est.window_size() <= static_cast<std::size_t>(c.window_size));
    CHECK(r.active_span.first == r.touched_span.first);
    CHECK(r.active_span.last == r.touched_span.last);
    max_prior = std::max(max_prior, r.prior_dim);
    // At most the poses of the active control points, two biases and t_r.
    CHECK(r.prior_dim <= 6 * (r.active_span.last - r.active_span.first + 1) + 13);
    if (r.dropped) {
      ++drops;
      CHECK(est.prior() == prior_before);
    }
    if (r.marginalized) {
      ++marginalizations;
      CHECK(est.prior() != prior_before);
    }
    const std::vector<bool> kfs = est.window_keyframes();
    if (kfs.size() >= 2) {
      for (std::size_t i = 0; i + 1 < kfs.size(); ++i) CHECK(kfs[i]);
    }
  }
  est.finish();
  CHECK(drops > 0);
  CHECK(marginalizations > 0);
  CHECK(max_prior > 0);
  CHECK(est.calibration_trace().size() == est.reports().size());
}

TEST_CASE("line delay estimation can be switched off") {
  SimConfig sc = short_sim(1.5, false);
  Simulator sim(sc);
  const Dataset d = sim.generate();
  EstimatorConfig c = config_for(d);
  c.estimate_line_delay = false;
  c.line_delay_init = 12e-6;
  const RunResult r = run_dataset(d, c, oracle_from_simulator(sim));
  CHECK(r.trace.empty());
  CHECK(r.line_delay == 12e-6);
  CHECK(!r.poses.empty());
}

TEST_CASE("coarse initialization needs a static start") {
  SimConfig sc = short_sim(2.5, false);
  sc.static_duration = 1.0;
  const Dataset still = Simulator(sc).generate();
  EstimatorConfig c = config_for(still);
  c.init = InitMode::kCoarse;
  const RunResult r = run_dataset(still, c);
  CHECK(!r.poses.empty());
  CHECK(std::isfinite(r.poses.back().pose.p.norm()));

  sc.static_duration = 0.0;
  const Dataset moving = Simulator(sc).generate();
  CHECK_THROWS_AS(run_dataset(moving, c), InitializationError);
  c.init = InitMode::kOracle;
  CHECK_THROWS_AS(Estimator{c}, std::invalid_argument);
}

TEST_CASE("frames without observations are processed") {
  SimConfig sc = short_sim(1.0, false);
  Simulator sim(sc);
  Dataset d = sim.generate();
  d.frames[5].observations.clear();
  const RunResult r = run_dataset(d, config_for(d), oracle_from_simulator(sim));
  // Every frame whose readout the IMU stream covers.
  const double readout = d.intrinsics.height * sc.line_delay;
  std::size_t covered = 0;
  for (const Frame& f : d.frames) covered += f.t + readout <= d.imu.back().t ? 1 : 0;
  CHECK(r.reports.size() == covered);
  for (const StampedPose& p : r.poses) CHECK(p.pose.p.allFinite());
}

TEST_CASE("input validation") {
  SimConfig sc = short_sim(1.0, false);
  Simulator sim(sc);
  const Dataset d = sim.generate();
  Estimator est(config_for(d), oracle_from_simulator(sim));
  est.process_imu(d.imu[0]);
  est.process_imu(d.imu[1]);
  CHECK_THROWS_AS(est.process_imu(d.imu[1]), std::invalid_argument);
  CHECK_THROWS_AS(est.process_imu(d.imu[0]), std::invalid_argument);
  ImuSample bad = d.imu[2];
  bad.gyro.x() = std::nan("");
  CHECK_THROWS_AS(est.process_imu(bad), std::invalid_argument);

  CHECK(est.process_frame(d.frames[0]) == FrameStatus::kDeferred);
  CHECK_THROWS_AS(est.process_frame(d.frames[0]), std::invalid_argument);
  Frame unsorted = d.frames[1];
  std::swap(unsorted.observations[0], unsorted.observations[1]);
  CHECK_THROWS_AS(est.process_frame(unsorted), std::invalid_argument);
  Frame outside = d.frames[2];
  outside.observations[0].pixel = Vec2(-5.0, 10.0);
  CHECK_THROWS_AS(est.process_frame(outside), std::invalid_argument);
}

TEST_CASE("configuration validation") {
  EstimatorConfig c;
  c.noise.gyro_noise_density = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_init_mode("coarse") == InitMode::kCoarse);
  CHECK_THROWS_AS(parse_init_mode("magic"), std::invalid_argument);
}

TEST_CASE("run configuration files") {
  const KeyValueFile kv = KeyValueFile::parse(
      "[sim]\nduration = 4\nspeed = fast\nnoise_free = true\n"
      "[estimator]\nstrategy = 2\nline_delay_init_us = 25\ninit = coarse\n"
      "[imu]\ngyro_noise_density = 0.001\n[solver]\nmax_iterations = 7\n");
  const SimConfig s = sim_config_from(kv);
  CHECK(s.duration == 4.0);
  CHECK(s.speed == SpeedPreset::kFast);
  CHECK(s.pixel_sigma == 0.0);
  const EstimatorConfig e = estimator_config_from(kv);
  CHECK(e.strategy == 2);
  CHECK(e.line_delay_init == doctest::Approx(25e-6));
  CHECK(e.init == InitMode::kCoarse);
  CHECK(e.noise.gyro_noise_density == 0.001);
  CHECK(e.solver.max_iterations == 7);

  CHECK_THROWS_AS(sim_config_from(KeyValueFile::parse("[sim]\nduraton = 4\n")), ParseError);
  CHECK_THROWS_AS(estimator_config_from(KeyValueFile::parse("[estimator]\nstrategy = 3\n")), std::invalid_argument);
}
