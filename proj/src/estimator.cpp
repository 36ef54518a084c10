#include "ctvio/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>

#include <Eigen/SVD>

#include "ctvio/factors.hpp"
#include "ctvio/lie.hpp"
#include "ctvio/marginalization.hpp"

namespace ctvio {

std::string to_string(InitMode m) { return m == InitMode::kOracle ? "oracle" : "coarse"; }

InitMode parse_init_mode(const std::string& s) {
  if (s == "oracle") return InitMode::kOracle;
  if (s == "coarse") return InitMode::kCoarse;
  throw std::invalid_argument("unknown init mode '" + s + "' (expected oracle or coarse)");
}

void EstimatorConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("estimator config: ") + what);
  };
  require(knot_interval > 0.0, "knot interval must be positive");
  require(window_size >= 4, "window size must be at least 4");
  require(max_features > 0, "max features must be positive");
  require(pixel_sigma > 0.0, "pixel sigma must be positive");
  require(huber_threshold > 0.0, "huber threshold must be positive");
  require(keyframe_parallax >= 0.0, "keyframe parallax must be >= 0");
  require(min_tracks >= 0, "min tracks must be >= 0");
  require(strategy == 1 || strategy == 2, "strategy must be 1 or 2");
  require(line_delay_init >= 0.0, "initial line delay must be >= 0");
  require(min_depth > 0.0 && max_depth > min_depth, "bad depth range");
  require(gauge_rotation_sigma > 0.0 && gauge_position_sigma > 0.0, "gauge sigmas must be positive");
  require(bias_prior_gyro > 0.0 && bias_prior_accel > 0.0, "bias prior sigmas must be positive");
  require(oracle_rotation_sigma >= 0.0 && oracle_position_sigma >= 0.0 && oracle_depth_sigma >= 0.0 &&
              oracle_gyro_bias_sigma >= 0.0 && oracle_accel_bias_sigma >= 0.0,
          "oracle sigmas must be >= 0");
  require(min_static_duration > 0.0, "min static duration must be positive");
  intrinsics.validate();
  noise.validate();
  require(noise.gyro_noise_density > 0.0 && noise.accel_noise_density > 0.0 && noise.gyro_bias_walk > 0.0 &&
              noise.accel_bias_walk > 0.0,
          "IMU noise densities must be positive for weighting");
}

OracleData oracle_from_dataset(const Dataset& d) {
  if (d.truth_states.size() < 2) throw std::invalid_argument("oracle: dataset has no truth states");
  if (!std::isfinite(d.line_delay)) throw std::invalid_argument("oracle: dataset has no ground-truth line delay");
  OracleData o;
  o.landmarks = d.landmarks;
  o.line_delay = d.line_delay;
  const auto states = std::make_shared<std::vector<TruthRecord>>(d.truth_states);
  o.state = [states](double t) {
    const std::vector<TruthRecord>& s = *states;
    if (t <= s.front().t) return s.front();
    if (t >= s.back().t) return s.back();
    const auto it = std::upper_bound(s.begin(), s.end(), t, [](double x, const TruthRecord& r) { return x < r.t; });
    const TruthRecord& a = *std::prev(it);
    const TruthRecord& b = *it;
    const double h = b.t - a.t;
    const double u = (t - a.t) / h;
    // Cubic Hermite on position and velocity.
    const double h00 = 2 * u * u * u - 3 * u * u + 1, h10 = u * u * u - 2 * u * u + u;
    const double h01 = -2 * u * u * u + 3 * u * u, h11 = u * u * u - u * u;
    const double d00 = (6 * u * u - 6 * u) / h, d10 = 3 * u * u - 4 * u + 1;
    const double d01 = (-6 * u * u + 6 * u) / h, d11 = 3 * u * u - 2 * u;
    TruthRecord r;
    r.t = t;
    r.pose.p = h00 * a.pose.p + h10 * h * a.v + h01 * b.pose.p + h11 * h * b.v;
    r.v = d00 * a.pose.p + d10 * a.v + d01 * b.pose.p + d11 * b.v;
    r.pose.R = a.pose.R * so3::exp(u * so3::log(a.pose.R.transpose() * b.pose.R));
    r.bias = a.bias;
    return r;
  };
  return o;
}

KeyframeStats keyframe_stats(const std::vector<FeatureObservation>& frame,
                             const std::vector<FeatureObservation>& last_keyframe,
                             const std::vector<FeatureObservation>& previous_frame) {
  KeyframeStats s;
  auto by_id = [](const std::vector<FeatureObservation>& v, int id) -> const FeatureObservation* {
    const auto it = std::lower_bound(v.begin(), v.end(), id, [](const FeatureObservation& o, int x) { return o.id < x; });
    return it != v.end() && it->id == id ? &*it : nullptr;
  };
  double sum = 0.0;
  for (const FeatureObservation& o : frame) {
    if (const FeatureObservation* k = by_id(last_keyframe, o.id)) {
      sum += (o.pixel - k->pixel).norm();
      ++s.common;
    }
    if (by_id(previous_frame, o.id)) ++s.tracked;
  }
  if (s.common > 0) s.mean_parallax = sum / s.common;
  return s;
}

bool keyframe_decision(const KeyframeStats& stats, double parallax_threshold, int min_tracks) {
  return stats.mean_parallax > parallax_threshold || stats.tracked < min_tracks;
}

std::optional<double> triangulate_inverse_depth(const Trajectory& traj, const PinholeIntrinsics& intr,
                                                double line_delay, const std::vector<Observation>& observations,
                                                double min_angle_deg, double min_depth, double max_depth) {
  if (observations.size() < 2) return std::nullopt;
  Eigen::MatrixXd A(2 * observations.size(), 4);
  std::vector<Pose> poses;
  std::vector<Vec3> rays;
  try {
    for (std::size_t j = 0; j < observations.size(); ++j) {
      const Observation& o = observations[j];
      const Pose Twc = traj.camera_pose(o.frame_time + o.pixel.y() * line_delay);
      const Vec3 f = back_project(intr, o.pixel);
      Eigen::Matrix<double, 3, 4> P;
      P.leftCols<3>() = Twc.R.transpose();
      P.col(3) = -(Twc.R.transpose() * Twc.p);
      A.row(static_cast<Eigen::Index>(2 * j)) = f.x() * P.row(2) - P.row(0);
      A.row(static_cast<Eigen::Index>(2 * j + 1)) = f.y() * P.row(2) - P.row(1);
      poses.push_back(Twc);
      rays.push_back((Twc.R * f).normalized());
    }
  } catch (const DomainError&) {
    return std::nullopt;
  }
  double max_angle = 0.0;
  for (std::size_t j = 1; j < rays.size(); ++j) {
    max_angle = std::max(max_angle, std::acos(std::clamp(rays[0].dot(rays[j]), -1.0, 1.0)));
  }
  if (max_angle * 180.0 / M_PI <= min_angle_deg) return std::nullopt;

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Vec4 X = svd.matrixV().col(3);
  if (std::abs(X[3]) < 1e-12) return std::nullopt;
  const Vec3 P = X.head<3>() / X[3];
  const double depth = (poses[0].inverse() * P).z();
  if (!(depth >= min_depth && depth <= max_depth)) return std::nullopt;
  return 1.0 / depth;
}

// ---------------------------------------------------------------- state

struct Estimator::FrameState {
  double t = 0.0;
  bool keyframe = false;
  std::vector<FeatureObservation> features;  // sorted by id
  Vec3 bias_gyro = Vec3::Zero();
  Vec3 bias_accel = Vec3::Zero();

  const FeatureObservation* find(int id) const {
    const auto it = std::lower_bound(features.begin(), features.end(), id,
                                     [](const FeatureObservation& o, int x) { return o.id < x; });
    return it != features.end() && it->id == id ? &*it : nullptr;
  }
};

struct Estimator::Landmark {
  int id = 0;
  const FrameState* anchor = nullptr;
  Vec2 anchor_pixel = Vec2::Zero();
  double inverse_depth = 0.0;
  bool triangulated = false;
};

Estimator::Estimator(EstimatorConfig config, std::optional<OracleData> oracle)
    : config_(std::move(config)), oracle_(std::move(oracle)) {
  config_.validate();
  if (config_.init == InitMode::kOracle && !oracle_) {
    throw std::invalid_argument("estimator: oracle initialization needs ground truth");
  }
  line_delay_ = config_.line_delay_init;
  prior_ = std::make_shared<PriorFactor>();
}

Estimator::~Estimator() = default;

double Estimator::readout() const { return config_.intrinsics.height * std::max(line_delay_, 0.0); }

void Estimator::process_imu(const ImuSample& sample) {
  if (!imu_.empty() && !(sample.t > imu_.back().t)) {
    std::ostringstream os;
    os.precision(12);
    os << "IMU sample at t = " << sample.t << " does not follow t = " << imu_.back().t;
    throw std::invalid_argument(os.str());
  }
  if (!sample.gyro.allFinite() || !sample.accel.allFinite() || !std::isfinite(sample.t)) {
    throw std::invalid_argument("IMU sample with non-finite values");
  }
  imu_.push_back(sample);
  drain();
}

FrameStatus Estimator::process_frame(const Frame& frame) {
  if (!(frame.t > last_frame_time_)) {
    std::ostringstream os;
    os.precision(12);
    os << "frame at t = " << frame.t << " does not follow t = " << last_frame_time_;
    throw std::invalid_argument(os.str());
  }
  for (std::size_t i = 0; i < frame.observations.size(); ++i) {
    const FeatureObservation& o = frame.observations[i];
    if (i > 0 && o.id <= frame.observations[i - 1].id) {
      throw std::invalid_argument("frame observations must have strictly increasing feature ids");
    }
    if (!config_.intrinsics.contains(o.pixel)) {
      throw std::invalid_argument("observation of feature " + std::to_string(o.id) + " is outside the image");
    }
  }
  last_frame_time_ = frame.t;
  pending_.push_back(frame);
  const std::size_t before = pending_.size();
  drain();
  return pending_.size() < before ? FrameStatus::kProcessed : FrameStatus::kDeferred;
}

void Estimator::drain() {
  while (!pending_.empty()) {
    const Frame& f = pending_.front();
    // The spline end can lie up to one knot interval past the readout.
    const double needed = f.t + readout() + (finishing_ ? 0.0 : config_.knot_interval);
    if (imu_.empty() || imu_.back().t < needed) return;
    if (!initialized_ && config_.init == InitMode::kCoarse) {
      // Coarse initialization also needs the whole static prefix.
      bool still_static = true;
      const double g = config_.gravity.norm();
      for (const ImuSample& s : imu_) {
        if (s.gyro.norm() >= config_.static_gyro_threshold ||
            std::abs(s.accel.norm() - g) >= config_.static_accel_threshold) {
          still_static = false;
          break;
        }
      }
      if (still_static && imu_.back().t - imu_.front().t < config_.min_static_duration) return;
    }
    const Frame frame = f;
    pending_.pop_front();
    process(frame);
  }
}

void Estimator::finish() {
  finishing_ = true;
  drain();
}

std::vector<double> Estimator::window_times() const {
  std::vector<double> out;
  for (const auto& f : frames_) out.push_back(f->t);
  return out;
}

std::vector<bool> Estimator::window_keyframes() const {
  std::vector<bool> out;
  for (const auto& f : frames_) out.push_back(f->keyframe);
  return out;
}

BiasPair Estimator::window_bias(std::size_t i) const { return bias_of(*frames_.at(i)); }

BiasPair Estimator::bias_of(const FrameState& f) const { return {f.bias_gyro, f.bias_accel}; }

int Estimator::triangulated_landmarks() const {
  int n = 0;
  for (const auto& [id, lm] : landmarks_) n += lm->triangulated ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------- initialization

void Estimator::initialize(const Frame& frame) {
  traj_ = Trajectory(KnotGrid{frame.t, config_.knot_interval}, config_.extrinsic);
  if (config_.init == InitMode::kOracle) {
    initialize_oracle(frame);
  } else {
    initialize_coarse(frame);
  }
  initialized_ = true;
}

void Estimator::initialize_oracle(const Frame& frame) {
  const OracleData& o = *oracle_;
  const double t0 = frame.t;
  const double dt = config_.knot_interval;
  const int n = static_cast<int>(std::floor(readout() / dt)) + 4;
  for (int k = 0; k < n; ++k) {
    const TruthRecord s = o.state(t0 + (k - 1) * dt);
    traj_.push_back({s.pose.R, s.pose.p});
  }
  // Least-squares fit of the control points to the truth over the domain.
  Problem fit;
  const int samples = 10 * (n - 3);
  for (int i = 0; i <= samples; ++i) {
    const double t = t0 + (traj_.t_max() - t0) * i / samples;
    const TruthRecord s = o.state(t);
    fit.add_factor_and_blocks(std::make_shared<PoseFactor>(traj_, t, s.pose, 1e-3, 1e-3));
    fit.add_factor_and_blocks(std::make_shared<VelocityFactor>(traj_, t, s.v, 1e-2));
  }
  SolverOptions opts;
  opts.max_iterations = 50;
  solve(fit, opts);

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise3 = [&](double sigma) { return Vec3(sigma * normal(rng), sigma * normal(rng), sigma * normal(rng)); };
  if (config_.oracle_rotation_sigma > 0.0 || config_.oracle_position_sigma > 0.0) {
    for (std::size_t k = 0; k < traj_.size(); ++k) {
      ControlPoint& cp = traj_.control_point(k);
      cp.R = cp.R * so3::exp(noise3(config_.oracle_rotation_sigma));
      cp.p += noise3(config_.oracle_position_sigma);
    }
  }

  auto first = std::make_unique<FrameState>();
  first->t = t0;
  first->keyframe = true;
  first->features = select_features(frame);
  const TruthRecord s0 = o.state(t0);
  first->bias_gyro = s0.bias.gyro + noise3(config_.oracle_gyro_bias_sigma);
  first->bias_accel = s0.bias.accel + noise3(config_.oracle_accel_bias_sigma);
  frames_.push_back(std::move(first));
  add_observations(*frames_.back());

  // Landmark depths of the first keyframe from the truth.
  for (auto& [id, lm] : landmarks_) {
    const auto it = o.landmarks.find(id);
    if (it == o.landmarks.end()) continue;
    const double ta = t0 + lm->anchor_pixel.y() * o.line_delay;
    const Pose Twc = o.state(ta).pose * config_.extrinsic;
    const double depth = (Twc.inverse() * it->second).z();
    if (!(depth >= config_.min_depth && depth <= config_.max_depth)) continue;
    lm->inverse_depth = (1.0 / depth) * (1.0 + config_.oracle_depth_sigma * normal(rng));
    lm->triangulated = lm->inverse_depth > 0.0;
  }
}

void Estimator::initialize_coarse(const Frame& frame) {
  const double g = config_.gravity.norm();
  std::size_t end = 0;
  while (end < imu_.size() && imu_[end].gyro.norm() < config_.static_gyro_threshold &&
         std::abs(imu_[end].accel.norm() - g) < config_.static_accel_threshold) {
    ++end;
  }
  if (end < 2 || imu_[end - 1].t - imu_.front().t < config_.min_static_duration) {
    std::ostringstream os;
    os << "coarse initialization needs a static IMU prefix of at least " << config_.min_static_duration
       << " s; found " << (end < 2 ? 0.0 : imu_[end - 1].t - imu_.front().t) << " s";
    throw InitializationError(os.str());
  }
  Vec3 gyro = Vec3::Zero(), accel = Vec3::Zero();
  for (std::size_t i = 0; i < end; ++i) {
    gyro += imu_[i].gyro;
    accel += imu_[i].accel;
  }
  gyro /= static_cast<double>(end);
  accel /= static_cast<double>(end);
  // Body attitude that maps the averaged specific force onto the gravity
  // direction; yaw is arbitrary and left at zero.
  const Rotation R0 = Eigen::Quaterniond::FromTwoVectors(accel, config_.gravity).toRotationMatrix();
  const BiasPair bias{gyro, Vec3::Zero()};

  // Dead reckoning from the start of the stream.
  const double dt = config_.knot_interval;
  const double t0 = frame.t;
  const int n = static_cast<int>(std::floor(readout() / dt)) + 4;
  Rotation R = R0;
  Vec3 p = Vec3::Zero(), v = Vec3::Zero();
  double t = imu_.front().t;
  std::size_t next = 1;
  for (int k = 0; k < n; ++k) {
    const double target = t0 + (k - 1) * dt;
    while (t < target) {
      const double t_next = (next < imu_.size() && imu_[next].t < target) ? imu_[next].t : target;
      const double h = t_next - t;
      const ImuSample m0 = interpolate_imu(imu_, t);
      const ImuSample m1 = interpolate_imu(imu_, t_next);
      const Rotation R1 = R * so3::exp((0.5 * (m0.gyro + m1.gyro) - bias.gyro) * h);
      const Vec3 acc = 0.5 * (R * (m0.accel - bias.accel) + R1 * (m1.accel - bias.accel)) - config_.gravity;
      p += v * h + 0.5 * acc * h * h;
      v += acc * h;
      R = R1;
      t = t_next;
      if (next < imu_.size() && imu_[next].t <= t) ++next;
    }
    traj_.push_back({so3::normalize(R), p});
  }

  auto first = std::make_unique<FrameState>();
  first->t = t0;
  first->keyframe = true;
  first->features = select_features(frame);
  first->bias_gyro = bias.gyro;
  first->bias_accel = bias.accel;
  frames_.push_back(std::move(first));
  add_observations(*frames_.back());
}

// ---------------------------------------------------------------- per frame

std::vector<FeatureObservation> Estimator::select_features(const Frame& frame) const {
  std::vector<FeatureObservation> tracked, fresh;
  for (const FeatureObservation& o : frame.observations) (landmarks_.count(o.id) ? tracked : fresh).push_back(o);
  std::vector<FeatureObservation> out;
  const auto budget = static_cast<std::size_t>(config_.max_features);
  for (const auto* list : {&tracked, &fresh}) {
    for (const FeatureObservation& o : *list) {
      if (out.size() >= budget) break;
      out.push_back(o);
    }
  }
  std::sort(out.begin(), out.end(), [](const FeatureObservation& a, const FeatureObservation& b) { return a.id < b.id; });
  return out;
}

void Estimator::add_observations(FrameState& f) {
  if (!f.keyframe) return;
  for (const FeatureObservation& o : f.features) {
    if (landmarks_.count(o.id)) continue;
    auto lm = std::make_unique<Landmark>();
    lm->id = o.id;
    lm->anchor = &f;
    lm->anchor_pixel = o.pixel;
    landmarks_.emplace(o.id, std::move(lm));
  }
}

std::vector<Observation> Estimator::observations_of(const Landmark& lm, bool keyframes_only) const {
  std::vector<Observation> out{{lm.anchor->t, lm.anchor_pixel}};
  for (const auto& f : frames_) {
    if (f.get() == lm.anchor || (keyframes_only && !f->keyframe)) continue;
    if (const FeatureObservation* o = f->find(lm.id)) out.push_back({f->t, o->pixel});
  }
  return out;
}

void Estimator::triangulate_pending() {
  for (auto& [id, lm] : landmarks_) {
    if (lm->triangulated) continue;
    const std::vector<Observation> obs = observations_of(*lm, true);
    if (obs.size() < 2) continue;
    const std::optional<double> inv = triangulate_inverse_depth(traj_, config_.intrinsics, line_delay_, obs,
                                                                config_.min_triangulation_angle, config_.min_depth,
                                                                config_.max_depth);
    if (inv) {
      lm->inverse_depth = *inv;
      lm->triangulated = true;
    }
  }
}

std::vector<FactorPtr> Estimator::visual_factors_of(Landmark& lm) {
  std::vector<FactorPtr> out;
  if (!lm.triangulated) return out;
  const std::vector<Observation> obs = observations_of(lm, false);
  VecX r;
  for (std::size_t j = 1; j < obs.size(); ++j) {
    try {
      auto f = std::make_shared<VisualFactor>(traj_, VisualMeasurement{config_.intrinsics, obs[0], obs[j]},
                                              &lm.inverse_depth, &line_delay_, config_.pixel_sigma,
                                              config_.huber_threshold);
      f->evaluate(r, nullptr);
      if (!r.allFinite()) continue;
      out.push_back(std::move(f));
    } catch (const std::exception&) {
      // Behind the camera or outside the window: leave this view out.
    }
  }
  return out;
}

void Estimator::process(const Frame& frame) {
  WindowReport report;
  report.t = frame.t;
  if (!initialized_) {
    initialize(frame);
  } else {
    const FrameState& last = *frames_.back();
    auto f = std::make_unique<FrameState>();
    f->t = frame.t;
    f->bias_gyro = last.bias_gyro;
    f->bias_accel = last.bias_accel;
    f->features = select_features(frame);
    const FrameState* last_kf = nullptr;
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
      if ((*it)->keyframe) {
        last_kf = it->get();
        break;
      }
    }
    const KeyframeStats stats = keyframe_stats(f->features, last_kf ? last_kf->features : std::vector<FeatureObservation>{},
                                               last.features);
    f->keyframe = keyframe_decision(stats, config_.keyframe_parallax, config_.min_tracks);
    extend_with_prediction(traj_, frame.t + readout(), imu_, bias_of(last), config_.gravity);
    frames_.push_back(std::move(f));
    add_observations(*frames_.back());
  }
  triangulate_pending();
  optimize(report);

  const FrameState& newest = *frames_.back();
  if (newest.keyframe) poses_.push_back({newest.t, traj_.pose(newest.t), std::nullopt});
  if (config_.estimate_line_delay) trace_.push_back({newest.t, line_delay_});
  slide(report);
  reports_.push_back(std::move(report));
}

void Estimator::optimize(WindowReport& report) {
  const double t_s = frames_.front()->t;
  const double t_end = frames_.back()->t + readout();
  extend_with_prediction(traj_, t_end, imu_, bias_of(*frames_.back()), config_.gravity);

  Problem problem;
  report.active_span = traj_.active_span(t_s, t_end);
  for (int k = report.active_span.first; k <= report.active_span.last; ++k) {
    ControlPoint& cp = traj_.control_point(static_cast<std::size_t>(k));
    problem.add_parameter_block(cp.R.data(), BlockKind::kRotation);
    problem.add_parameter_block(cp.p.data(), BlockKind::kPosition);
  }

  // Raw IMU factors, each bound to the bias of its inter-frame interval.
  auto first = std::lower_bound(imu_.begin(), imu_.end(), t_s, [](const ImuSample& s, double t) { return s.t < t; });
  std::size_t k = 0;
  const double t_imu = std::min(traj_.t_max(), imu_.back().t);
  for (auto it = first; it != imu_.end() && it->t <= t_imu; ++it) {
    while (k + 1 < frames_.size() && frames_[k + 1]->t <= it->t) ++k;
    FrameState& f = *frames_[k];
    problem.add_factor_and_blocks(std::make_shared<ImuFactor>(traj_, *it, f.bias_gyro.data(), f.bias_accel.data(),
                                                              config_.noise, config_.gravity));
    ++report.imu_factors;
  }
  for (std::size_t i = 0; i + 1 < frames_.size(); ++i) {
    FrameState& a = *frames_[i];
    FrameState& b = *frames_[i + 1];
    problem.add_factor_and_blocks(std::make_shared<BiasFactor>(a.bias_gyro.data(), a.bias_accel.data(),
                                                               b.bias_gyro.data(), b.bias_accel.data(), b.t - a.t,
                                                               config_.noise));
  }
  for (auto& [id, lm] : landmarks_) {
    const std::vector<FactorPtr> fs = visual_factors_of(*lm);
    if (fs.empty()) continue;
    ++report.landmarks;
    for (const FactorPtr& f : fs) problem.add_factor_and_blocks(f);
    report.visual_factors += static_cast<int>(fs.size());
  }
  if (!prior_->empty()) problem.add_factor_and_blocks(prior_);
  for (const FactorPtr& f : gauge_factors_) problem.add_factor_and_blocks(f);
  if (frames_.size() == 1 && gauge_factors_.empty() && prior_->empty()) {
    // Gauge fix on the first pose and a prior on the first biases; both are
    // folded into the marginalization prior with the first keyframe.
    FrameState& f0 = *frames_.front();
    gauge_factors_.push_back(std::make_shared<PoseFactor>(traj_, f0.t, traj_.pose(f0.t), config_.gauge_rotation_sigma,
                                                          config_.gauge_position_sigma));
    MatX S = MatX::Zero(6, 6);
    S.diagonal() << Vec3::Constant(1.0 / config_.bias_prior_gyro), Vec3::Constant(1.0 / config_.bias_prior_accel);
    gauge_factors_.push_back(std::make_shared<PriorFactor>(
        std::vector<BlockRef>{{f0.bias_gyro.data(), BlockKind::kBiasGyro}, {f0.bias_accel.data(), BlockKind::kBiasAccel}},
        std::vector<VecX>{f0.bias_gyro, f0.bias_accel}, S, VecX::Zero(6)));
    for (const FactorPtr& f : gauge_factors_) problem.add_factor_and_blocks(f);
  }
  if (problem.has_block(&line_delay_) && !config_.estimate_line_delay) problem.set_constant(&line_delay_);

  // Control point span actually touched by the problem.
  std::unordered_map<const double*, int> cp_index;
  for (std::size_t i = 0; i < traj_.size(); ++i) {
    cp_index.emplace(traj_.control_point(i).R.data(), static_cast<int>(i));
    cp_index.emplace(traj_.control_point(i).p.data(), static_cast<int>(i));
  }
  report.touched_span = {1 << 30, -1};
  for (const ParameterBlock& b : problem.parameter_blocks()) {
    const auto it = cp_index.find(b.data);
    if (it == cp_index.end()) continue;
    report.touched_span.first = std::min(report.touched_span.first, it->second);
    report.touched_span.last = std::max(report.touched_span.last, it->second);
  }

  report.solve = solve(problem, config_.solver);
  line_delay_ = std::max(line_delay_, 0.0);
  for (auto& [id, lm] : landmarks_) {
    if (lm->triangulated && !(lm->inverse_depth >= 1.0 / config_.max_depth && lm->inverse_depth <= 1.0 / config_.min_depth)) {
      lm->triangulated = false;
    }
  }

  report.frames = static_cast<int>(frames_.size());
  for (const auto& f : frames_) report.keyframes += f->keyframe ? 1 : 0;
  report.prior_dim = prior_->residual_dim();
  report.line_delay = line_delay_;
}

// ---------------------------------------------------------------- sliding

void Estimator::slide(WindowReport& report) {
  const std::size_t N = static_cast<std::size_t>(config_.window_size);
  if (frames_.size() < N) return;
  if (!frames_[N - 2]->keyframe) {
    drop_frame(N - 2);
    report.dropped = true;
  } else {
    marginalize_oldest();
    report.marginalized = true;
  }
}

void Estimator::drop_frame(std::size_t index) {
  // The dropped frame's IMU interval now shares the bias of the frame
  // before it; nothing else refers to the dropped bias.
  frames_.erase(frames_.begin() + static_cast<std::ptrdiff_t>(index));
  for (auto& [id, lm] : landmarks_) {
    if (lm->triangulated && observations_of(*lm, false).size() < 2) lm->triangulated = false;
  }
}

void Estimator::marginalize_oldest() {
  FrameState& kf0 = *frames_[0];
  FrameState& kf1 = *frames_[1];

  MarginalizationWindow w;
  w.traj = &traj_;
  w.t_s = kf0.t;
  w.t_s1 = kf1.t;
  w.imu = &imu_;
  w.bias_gyro_s = kf0.bias_gyro.data();
  w.bias_accel_s = kf0.bias_accel.data();
  w.bias_gyro_s1 = kf1.bias_gyro.data();
  w.bias_accel_s1 = kf1.bias_accel.data();
  w.prior = prior_;
  w.noise = config_.noise;
  w.gravity = config_.gravity;
  w.extra_factors = gauge_factors_;
  for (auto& [id, lm] : landmarks_) {
    if (lm->anchor != &kf0 || !lm->triangulated) continue;
    const std::vector<FactorPtr> fs = visual_factors_of(*lm);
    if (fs.empty()) continue;
    w.visual_factors.insert(w.visual_factors.end(), fs.begin(), fs.end());
    w.anchored_depths.push_back(&lm->inverse_depth);
  }
  const MarginalizationProblem mp =
      config_.strategy == 1 ? build_marg_subproblem_strategy1(w) : build_marg_subproblem_strategy2(w);
  const double* tr = &line_delay_;
  const bool fixed_tr = !config_.estimate_line_delay;
  prior_ = marginalize_schur(mp.factors, mp.marg_blocks, [&](const double* p) { return fixed_tr && p == tr; });
  gauge_factors_.clear();

  // Re-anchor the landmarks of the marginalized keyframe in the next
  // keyframe that observes them; drop the rest.
  for (auto it = landmarks_.begin(); it != landmarks_.end();) {
    Landmark& lm = *it->second;
    if (lm.anchor != &kf0) {
      ++it;
      continue;
    }
    std::optional<Vec3> world;
    if (lm.triangulated) {
      const Pose Twc = traj_.camera_pose(lm.anchor->t + lm.anchor_pixel.y() * line_delay_);
      world = Twc * (back_project(config_.intrinsics, lm.anchor_pixel) / lm.inverse_depth);
    }
    const FrameState* next = nullptr;
    int remaining = 0;
    for (std::size_t i = 1; i < frames_.size(); ++i) {
      const FeatureObservation* o = frames_[i]->find(lm.id);
      if (!o) continue;
      ++remaining;
      if (!next && frames_[i]->keyframe) next = frames_[i].get();
    }
    if (!next || remaining < 2) {
      it = landmarks_.erase(it);
      continue;
    }
    lm.anchor = next;
    lm.anchor_pixel = next->find(lm.id)->pixel;
    lm.triangulated = false;
    if (world) {
      const Pose Twc = traj_.camera_pose(next->t + lm.anchor_pixel.y() * line_delay_);
      const double depth = (Twc.inverse() * *world).z();
      if (depth >= config_.min_depth && depth <= config_.max_depth) {
        lm.inverse_depth = 1.0 / depth;
        lm.triangulated = true;
      }
    }
    ++it;
  }
  frames_.pop_front();
}

}  // namespace ctvio
