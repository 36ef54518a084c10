#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "ctvio/dataset.hpp"
#include "ctvio/factors.hpp"
#include "ctvio/io.hpp"
#include "ctvio/prior.hpp"
#include "ctvio/solver.hpp"
#include "ctvio/spline.hpp"

namespace ctvio {

enum class InitMode { kOracle, kCoarse };
std::string to_string(InitMode m);
InitMode parse_init_mode(const std::string& s);

struct EstimatorConfig {
  double knot_interval = 0.03;  // s
  int window_size = 11;
  int max_features = 150;
  double pixel_sigma = 1.0;         // px
  double huber_threshold = 1.0;     // whitened units
  double keyframe_parallax = 10.0;  // px, strict
  int min_tracks = 20;
  int strategy = 1;  // marginalization strategy, 1 or 2
  double line_delay_init = 0.0;  // s
  bool estimate_line_delay = true;

  double min_triangulation_angle = 1.0;  // deg
  double min_depth = 0.1;                // m
  double max_depth = 1000.0;

  // Gauge fix on the first pose and prior on the first biases.
  double gauge_rotation_sigma = 1e-3;  // rad
  double gauge_position_sigma = 1e-3;  // m
  double bias_prior_gyro = 1e-2;       // rad/s
  double bias_prior_accel = 1e-1;      // m/s^2

  InitMode init = InitMode::kOracle;
  // Oracle mode perturbations.
  double oracle_rotation_sigma = 0.0;  // rad
  double oracle_position_sigma = 0.0;  // m
  double oracle_depth_sigma = 0.0;     // relative
  double oracle_gyro_bias_sigma = 0.0;
  double oracle_accel_bias_sigma = 0.0;
  std::uint64_t seed = 1;
  // Coarse mode static detection.
  double static_gyro_threshold = 0.05;  // rad/s
  double static_accel_threshold = 0.3;  // m/s^2 deviation of |a| from |g|
  double min_static_duration = 0.5;     // s

  // Gauss-Newton first step; damping starts only after a rejected step.
  SolverOptions solver = [] {
    SolverOptions o;
    o.initial_lambda = 0.0;
    return o;
  }();

  PinholeIntrinsics intrinsics;
  Pose extrinsic = default_extrinsic();
  ImuNoiseModel noise;
  Vec3 gravity = default_gravity();

  /// Throws std::invalid_argument.
  void validate() const;
};

/// Ground truth used to seed oracle initialization.
struct OracleData {
  std::function<TruthRecord(double)> state;
  std::map<int, Vec3> landmarks;
  double line_delay = 0.0;
};

/// Oracle backed by IMU-rate truth records (Hermite interpolation for the
/// position, geodesic interpolation for the rotation; clamped at the ends).
OracleData oracle_from_dataset(const Dataset& d);

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyframeStats {
  double mean_parallax = 0.0;  // px vs the last keyframe, common features
  int common = 0;              // features shared with the last keyframe
  int tracked = 0;             // features shared with the previous frame
};

KeyframeStats keyframe_stats(const std::vector<FeatureObservation>& frame,
                             const std::vector<FeatureObservation>& last_keyframe,
                             const std::vector<FeatureObservation>& previous_frame);
/// Keyframe iff mean parallax > threshold or tracked < min_tracks.
bool keyframe_decision(const KeyframeStats& stats, double parallax_threshold, int min_tracks);

/// Linear triangulation from observations at their own row times. The first
/// observation is the anchor; returns its inverse depth, or nullopt for too
/// little parallax or a depth outside [min_depth, max_depth].
std::optional<double> triangulate_inverse_depth(const Trajectory& traj, const PinholeIntrinsics& intr,
                                                double line_delay, const std::vector<Observation>& observations,
                                                double min_angle_deg = 1.0, double min_depth = 0.1,
                                                double max_depth = 1000.0);

struct WindowReport {
  double t = 0.0;  // newest frame
  int frames = 0;
  int keyframes = 0;
  int landmarks = 0;  // triangulated landmarks in the problem
  int visual_factors = 0;
  int imu_factors = 0;
  int prior_dim = 0;
  double line_delay = 0.0;
  ControlPointSpan active_span;   // from the window bounds
  ControlPointSpan touched_span;  // from the factor blocks
  SolveReport solve;
  bool marginalized = false;  // slide step marginalized the oldest keyframe
  bool dropped = false;       // slide step dropped a non-keyframe
};

enum class FrameStatus { kProcessed, kDeferred };

/// Keyframe-based sliding-window estimator over a cumulative B-spline.
class Estimator {
 public:
  explicit Estimator(EstimatorConfig config, std::optional<OracleData> oracle = std::nullopt);
  ~Estimator();
  Estimator(const Estimator&) = delete;
  Estimator& operator=(const Estimator&) = delete;

  /// Throws std::invalid_argument for a timestamp that does not increase.
  void process_imu(const ImuSample& sample);
  /// Frames are processed in arrival order once the IMU stream reaches one
  /// knot interval past their readout; until then they are queued. Throws std::invalid_argument for
  /// malformed frames and InitializationError when the configured
  /// initialization cannot run.
  FrameStatus process_frame(const Frame& frame);

  /// End of stream: processes queued frames whose readout the IMU covers.
  void finish();

  bool initialized() const { return initialized_; }
  const EstimatorConfig& config() const { return config_; }
  const Trajectory& trajectory() const { return traj_; }
  double line_delay() const { return line_delay_; }
  const std::vector<StampedPose>& poses() const { return poses_; }
  const std::vector<CalibrationSample>& calibration_trace() const { return trace_; }
  const std::vector<WindowReport>& reports() const { return reports_; }
  std::size_t pending_frames() const { return pending_.size(); }

  // Window introspection.
  std::size_t window_size() const { return frames_.size(); }
  std::vector<double> window_times() const;
  std::vector<bool> window_keyframes() const;
  BiasPair window_bias(std::size_t i) const;
  std::shared_ptr<const PriorFactor> prior() const { return prior_; }
  int triangulated_landmarks() const;

 private:
  struct FrameState;
  struct Landmark;

  void drain();
  double readout() const;
  void initialize(const Frame& frame);
  void initialize_oracle(const Frame& frame);
  void initialize_coarse(const Frame& frame);
  void process(const Frame& frame);
  std::vector<FeatureObservation> select_features(const Frame& frame) const;
  void add_observations(FrameState& f);
  void triangulate_pending();
  std::vector<Observation> observations_of(const Landmark& lm, bool keyframes_only) const;
  std::vector<FactorPtr> visual_factors_of(Landmark& lm);
  void optimize(WindowReport& report);
  void slide(WindowReport& report);
  void marginalize_oldest();
  void drop_frame(std::size_t index);
  BiasPair bias_of(const FrameState& f) const;

  EstimatorConfig config_;
  std::optional<OracleData> oracle_;
  bool initialized_ = false;
  bool finishing_ = false;

  std::vector<ImuSample> imu_;
  std::deque<Frame> pending_;
  double last_frame_time_ = -1e300;

  Trajectory traj_;
  double line_delay_ = 0.0;
  std::deque<std::unique_ptr<FrameState>> frames_;
  std::map<int, std::unique_ptr<Landmark>> landmarks_;
  std::shared_ptr<PriorFactor> prior_;
  std::vector<FactorPtr> gauge_factors_;

  std::vector<StampedPose> poses_;
  std::vector<CalibrationSample> trace_;
  std::vector<WindowReport> reports_;
};

}  // namespace ctvio
