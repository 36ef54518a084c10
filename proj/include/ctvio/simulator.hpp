#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctvio/dataset.hpp"
#include "ctvio/spline.hpp"

namespace ctvio {

/// amplitude * sin(2 pi frequency t + phase)
struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad
};

/// Analytic body motion: per-axis sums of sinusoids for the position and
/// for a rotation vector applied on the right of `rotation_offset`. With a
/// positive `static_duration` the motion is multiplied by a quintic
/// smoothstep that rises from 0 to 1 over `ramp_duration`, so the body
/// rests at the offsets first.
struct MotionProfile {
  std::array<std::vector<Sinusoid>, 3> position;
  std::array<std::vector<Sinusoid>, 3> rotation;
  Vec3 position_offset = Vec3::Zero();
  Rotation rotation_offset = Rotation::Identity();
  double static_duration = 0.0;
  double ramp_duration = 1.0;
};

enum class SpeedPreset { kSlow = 1, kMedium = 2, kFast = 3 };

std::string to_string(SpeedPreset s);
/// Accepts "slow", "medium", "fast"; throws std::invalid_argument otherwise.
SpeedPreset parse_speed_preset(const std::string& s);

/// The built-in motion with every frequency scaled by 1, 2 or 3.
MotionProfile preset_profile(SpeedPreset speed);

struct TruthState {
  double t = 0.0;
  Pose pose;
  Vec3 v = Vec3::Zero();      // world velocity
  Vec3 a = Vec3::Zero();      // world acceleration
  Vec3 omega = Vec3::Zero();  // body angular velocity
};

class AnalyticTrajectory {
 public:
  AnalyticTrajectory() = default;
  AnalyticTrajectory(MotionProfile profile, double duration);

  /// Throws DomainError outside [0, duration].
  TruthState state(double t) const;
  /// Same closed form without the range check.
  TruthState evaluate(double t) const;

  double duration() const { return duration_; }
  const MotionProfile& profile() const { return profile_; }

 private:
  MotionProfile profile_;
  double duration_ = 0.0;
};

struct SimConfig {
  double duration = 30.0;     // s
  double imu_rate = 90.0;     // Hz
  double frame_rate = 30.0;   // Hz
  double line_delay = 69.44e-6;  // s per row

  int landmark_count = 300;
  Vec3 landmark_min = Vec3(4.0, -6.0, -4.0);  // world box, m
  Vec3 landmark_max = Vec3(10.0, 6.0, 4.0);

  PinholeIntrinsics intrinsics;
  Pose extrinsic = default_extrinsic();
  // Densities; the rate field is ignored in favour of imu_rate.
  ImuNoiseModel noise;
  double pixel_sigma = 1.0;
  BiasPair initial_bias;
  Vec3 gravity = default_gravity();

  SpeedPreset speed = SpeedPreset::kMedium;
  double static_duration = 0.0;
  // When set, the truth is the spline through the analytic motion sampled
  // at the knots of a grid starting at t = 0.
  bool spline_truth = false;
  double spline_dt = 0.03;

  double row_tolerance = 1e-4;  // fixed-point stopping rule, rows
  int max_row_iterations = 20;
  int min_tracks = 20;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  /// Noise densities, bias walks and pixel noise all set to zero.
  static SimConfig noise_free();
};

struct RsProjection {
  Vec2 pixel = Vec2::Zero();
  int iterations = 0;
  bool converged = false;
};

class Simulator {
 public:
  explicit Simulator(SimConfig config);

  const SimConfig& config() const { return config_; }
  const std::vector<Vec3>& landmarks() const { return landmarks_; }
  const std::vector<ImuSample>& imu() const { return imu_; }
  const std::vector<TruthRecord>& truth_records() const { return truth_records_; }
  /// The truth spline in spline-truth mode, otherwise nullptr.
  const Trajectory* truth_spline() const { return spline_ ? &*spline_ : nullptr; }

  /// Throws DomainError outside [0, duration].
  TruthState truth_state(double t) const;
  Pose camera_pose(double t) const;
  /// Bias in effect at t (held constant between IMU samples).
  BiasPair true_bias(double t) const;

  /// Noise-free IMU reading of the truth with the given bias.
  ImuSample ideal_imu(double t, const BiasPair& bias) const;

  /// Row-consistent projection of a world point in the frame starting at
  /// t_i; nullopt when the point leaves the image or goes behind the camera.
  std::optional<RsProjection> project_rs(const Vec3& world_point, double t_i) const;

  /// All visible landmarks, sorted by id. Pixel noise is added only when
  /// `rng` is given.
  Frame synth_rs_frame(double t_i, std::mt19937_64* rng = nullptr) const;

  /// Frame start times k / frame_rate whose last row ends within duration.
  std::vector<double> frame_times() const;

  /// Full dataset including ground truth. Writes a warning to stderr for
  /// frames with fewer than min_tracks features and throws
  /// std::runtime_error when a frame sees no landmark at all.
  Dataset generate() const;

  /// Landmarks dropped so far because the row fixed point did not converge.
  int unconverged_count() const { return unconverged_; }

 private:
  SimConfig config_;
  AnalyticTrajectory analytic_;
  std::optional<Trajectory> spline_;
  std::vector<Vec3> landmarks_;
  std::vector<ImuSample> imu_;
  std::vector<TruthRecord> truth_records_;
  mutable int unconverged_ = 0;
};

}  // namespace ctvio
