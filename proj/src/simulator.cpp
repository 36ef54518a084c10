#include "ctvio/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "ctvio/lie.hpp"

namespace ctvio {

std::string to_string(SpeedPreset s) {
  switch (s) {
    case SpeedPreset::kSlow: return "slow";
    case SpeedPreset::kMedium: return "medium";
    case SpeedPreset::kFast: return "fast";
  }
  return "unknown";
}

SpeedPreset parse_speed_preset(const std::string& s) {
  if (s == "slow") return SpeedPreset::kSlow;
  if (s == "medium") return SpeedPreset::kMedium;
  if (s == "fast") return SpeedPreset::kFast;
  throw std::invalid_argument("unknown speed preset '" + s + "' (expected slow, medium or fast)");
}

MotionProfile preset_profile(SpeedPreset speed) {
  const double k = static_cast<double>(static_cast<int>(speed));
  MotionProfile m;
  m.position[0] = {{0.5, 0.10 * k, 0.0}, {0.15, 0.23 * k, 1.1}};
  m.position[1] = {{0.8, 0.08 * k, 0.5}};
  m.position[2] = {{0.3, 0.12 * k, 1.0}};
  m.rotation[0] = {{0.15, 0.13 * k, 0.2}};
  m.rotation[1] = {{0.15, 0.17 * k, 0.3}};
  m.rotation[2] = {{0.6, 0.20 * k, 0.7}};
  return m;
}

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// Value and first two derivatives of a sum of sinusoids.
Vec3 sum_sines(const std::vector<Sinusoid>& terms, double t) {
  Vec3 out = Vec3::Zero();
  for (const Sinusoid& s : terms) {
    const double w = kTwoPi * s.frequency;
    const double arg = w * t + s.phase;
    out[0] += s.amplitude * std::sin(arg);
    out[1] += s.amplitude * w * std::cos(arg);
    out[2] -= s.amplitude * w * w * std::sin(arg);
  }
  return out;
}

// Quintic smoothstep envelope and its derivatives.
Vec3 envelope(const MotionProfile& m, double t) {
  if (m.static_duration <= 0.0) return {1.0, 0.0, 0.0};
  const double T = m.ramp_duration;
  const double s = (t - m.static_duration) / T;
  if (s <= 0.0) return Vec3::Zero();
  if (s >= 1.0) return {1.0, 0.0, 0.0};
  const double e = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
  const double e1 = 30.0 * s * s * (1.0 - s) * (1.0 - s) / T;
  const double e2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (T * T);
  return {e, e1, e2};
}

}  // namespace

AnalyticTrajectory::AnalyticTrajectory(MotionProfile profile, double duration)
    : profile_(std::move(profile)), duration_(duration) {
  if (!(duration > 0.0)) throw std::invalid_argument("AnalyticTrajectory: duration must be positive");
}

TruthState AnalyticTrajectory::state(double t) const {
  if (!(t >= 0.0 && t <= duration_)) {
    throw DomainError("truth_state: t = " + std::to_string(t) + " outside [0, " + std::to_string(duration_) + "]");
  }
  return evaluate(t);
}

TruthState AnalyticTrajectory::evaluate(double t) const {
  const Vec3 e = envelope(profile_, t);
  TruthState s;
  s.t = t;
  Vec3 psi, dpsi;
  for (int i = 0; i < 3; ++i) {
    const Vec3 f = sum_sines(profile_.position[i], t);
    s.pose.p[i] = profile_.position_offset[i] + e[0] * f[0];
    s.v[i] = e[1] * f[0] + e[0] * f[1];
    s.a[i] = e[2] * f[0] + 2.0 * e[1] * f[1] + e[0] * f[2];
    const Vec3 g = sum_sines(profile_.rotation[i], t);
    psi[i] = e[0] * g[0];
    dpsi[i] = e[1] * g[0] + e[0] * g[1];
  }
  s.pose.R = profile_.rotation_offset * so3::exp(psi);
  s.omega = so3::right_jacobian(psi) * dpsi;
  return s;
}

void SimConfig::validate() const {
  if (!(duration > 0.0)) throw std::invalid_argument("sim: duration must be positive");
  if (!(imu_rate > 0.0) || !(frame_rate > 0.0)) throw std::invalid_argument("sim: rates must be positive");
  intrinsics.validate();
  validate_line_delay(line_delay, intrinsics.height, 1.0 / frame_rate);
  ImuNoiseModel n = noise;
  n.rate = imu_rate;
  n.validate();
  if (landmark_count < 0) throw std::invalid_argument("sim: negative landmark count");
  if (!(landmark_max.array() >= landmark_min.array()).all()) throw std::invalid_argument("sim: empty landmark box");
  if (!(pixel_sigma >= 0.0)) throw std::invalid_argument("sim: pixel sigma must be >= 0");
  if (spline_truth && !(spline_dt > 0.0)) throw std::invalid_argument("sim: spline dt must be positive");
  if (!(row_tolerance > 0.0) || max_row_iterations < 1) throw std::invalid_argument("sim: bad row iteration settings");
}

SimConfig SimConfig::noise_free() {
  SimConfig c;
  c.noise.gyro_noise_density = 0.0;
  c.noise.accel_noise_density = 0.0;
  c.noise.gyro_bias_walk = 0.0;
  c.noise.accel_bias_walk = 0.0;
  c.pixel_sigma = 0.0;
  return c;
}

Simulator::Simulator(SimConfig config) : config_(std::move(config)) {
  config_.validate();
  config_.noise.rate = config_.imu_rate;
  MotionProfile profile = preset_profile(config_.speed);
  profile.static_duration = config_.static_duration;
  analytic_ = AnalyticTrajectory(profile, config_.duration);

  if (config_.spline_truth) {
    Trajectory spline(KnotGrid{0.0, config_.spline_dt}, config_.extrinsic);
    const int n = static_cast<int>(std::ceil(config_.duration / config_.spline_dt)) + 3;
    for (int k = 0; k < n; ++k) {
      const TruthState s = analytic_.evaluate((k - 1) * config_.spline_dt);
      spline.push_back({s.pose.R, s.pose.p});
    }
    spline_ = std::move(spline);
  }

  std::mt19937_64 rng(config_.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  landmarks_.reserve(config_.landmark_count);
  for (int i = 0; i < config_.landmark_count; ++i) {
    Vec3 p;
    for (int j = 0; j < 3; ++j) p[j] = config_.landmark_min[j] + unit(rng) * (config_.landmark_max[j] - config_.landmark_min[j]);
    landmarks_.push_back(p);
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  const ImuNoiseModel& n = config_.noise;
  const double h = 1.0 / config_.imu_rate;
  const auto count = static_cast<long>(std::ceil(config_.duration * config_.imu_rate - 1e-9));
  BiasPair bias = config_.initial_bias;
  for (long k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / config_.imu_rate;
    ImuSample s = ideal_imu(t, bias);
    for (int j = 0; j < 3; ++j) s.gyro[j] += n.gyro_sigma() * normal(rng);
    for (int j = 0; j < 3; ++j) s.accel[j] += n.accel_sigma() * normal(rng);
    imu_.push_back(s);
    const TruthState ts = truth_state(t);
    truth_records_.push_back({t, ts.pose, ts.v, bias, std::nullopt});
    for (int j = 0; j < 3; ++j) bias.gyro[j] += n.gyro_bias_walk * std::sqrt(h) * normal(rng);
    for (int j = 0; j < 3; ++j) bias.accel[j] += n.accel_bias_walk * std::sqrt(h) * normal(rng);
  }
}

TruthState Simulator::truth_state(double t) const {
  if (!spline_) return analytic_.state(t);
  if (!(t >= 0.0 && t <= config_.duration)) {
    throw DomainError("truth_state: t = " + std::to_string(t) + " outside [0, " + std::to_string(config_.duration) + "]");
  }
  const SplineSample s = spline_->sample(t);
  return {t, s.pose(), s.v, s.a, s.omega};
}

Pose Simulator::camera_pose(double t) const { return truth_state(t).pose * config_.extrinsic; }

BiasPair Simulator::true_bias(double t) const {
  if (truth_records_.empty()) return config_.initial_bias;
  const auto k = static_cast<long>(std::floor(t * config_.imu_rate + 1e-9));
  const long last = static_cast<long>(truth_records_.size()) - 1;
  return truth_records_[static_cast<std::size_t>(std::clamp(k, 0L, last))].bias;
}

ImuSample Simulator::ideal_imu(double t, const BiasPair& bias) const {
  const TruthState s = truth_state(t);
  ImuSample out;
  out.t = t;
  out.gyro = s.omega + bias.gyro;
  out.accel = s.pose.R.transpose() * (s.a + config_.gravity) + bias.accel;
  return out;
}

std::optional<RsProjection> Simulator::project_rs(const Vec3& world_point, double t_i) const {
  const PinholeIntrinsics& K = config_.intrinsics;
  auto project_at = [&](double t) -> std::optional<Vec2> {
    const Vec3 pc = camera_pose(t).inverse() * world_point;
    if (pc.z() < 0.1) return std::nullopt;
    return project(K, pc);
  };
  std::optional<Vec2> px = project_at(t_i);
  if (!px) return std::nullopt;
  RsProjection out;
  double row = (*px)[1];
  for (int it = 1; it <= config_.max_row_iterations; ++it) {
    if (!(row >= 0.0 && row < K.height)) return std::nullopt;
    px = project_at(t_i + row * config_.line_delay);
    if (!px) return std::nullopt;
    out.iterations = it;
    const double step = std::abs((*px)[1] - row);
    row = (*px)[1];
    if (step < config_.row_tolerance) {
      out.converged = true;
      break;
    }
  }
  out.pixel = *px;
  if (!K.contains(out.pixel)) return std::nullopt;
  return out;
}

Frame Simulator::synth_rs_frame(double t_i, std::mt19937_64* rng) const {
  const double t_end = t_i + config_.intrinsics.height * config_.line_delay;
  if (t_i < 0.0 || t_end > config_.duration + 1e-12) {
    throw DomainError("synth_rs_frame: frame readout [" + std::to_string(t_i) + ", " + std::to_string(t_end) +
                      "] outside the simulated duration");
  }
  Frame f;
  f.t = t_i;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t id = 0; id < landmarks_.size(); ++id) {
    const std::optional<RsProjection> proj = project_rs(landmarks_[id], t_i);
    if (!proj) continue;
    if (!proj->converged) {
      ++unconverged_;
      continue;
    }
    Vec2 px = proj->pixel;
    if (rng && config_.pixel_sigma > 0.0) {
      px[0] += config_.pixel_sigma * normal(*rng);
      px[1] += config_.pixel_sigma * normal(*rng);
      if (!config_.intrinsics.contains(px)) continue;
    }
    f.observations.push_back({static_cast<int>(id), px});
  }
  return f;
}

std::vector<double> Simulator::frame_times() const {
  std::vector<double> out;
  const double readout = config_.intrinsics.height * config_.line_delay;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / config_.frame_rate;
    if (t >= config_.duration || t + readout > config_.duration) break;
    out.push_back(t);
  }
  return out;
}

Dataset Simulator::generate() const {
  Dataset d;
  d.intrinsics = config_.intrinsics;
  d.extrinsic = config_.extrinsic;
  d.noise = config_.noise;
  d.gravity = config_.gravity;
  d.pixel_sigma = config_.pixel_sigma;
  d.line_delay = config_.line_delay;
  d.imu = imu_;
  d.truth_states = truth_records_;
  for (std::size_t i = 0; i < landmarks_.size(); ++i) d.landmarks.emplace(static_cast<int>(i), landmarks_[i]);

  std::mt19937_64 rng(config_.seed ^ 0x5DEECE66DULL);
  for (double t : frame_times()) {
    Frame f = synth_rs_frame(t, &rng);
    if (f.observations.empty()) {
      throw std::runtime_error("simulate: no landmark visible in the frame at t = " + std::to_string(t));
    }
    if (static_cast<int>(f.observations.size()) < config_.min_tracks) {
      std::cerr << "warning: frame at t = " << t << " sees only " << f.observations.size() << " landmarks\n";
    }
    d.ground_truth.push_back({t, truth_state(t).pose, std::nullopt});
    d.frames.push_back(std::move(f));
  }
  return d;
}

}  // namespace ctvio
