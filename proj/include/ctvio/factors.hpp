#pragma once

#include <optional>
#include <vector>

#include "ctvio/factor.hpp"
#include "ctvio/preintegration.hpp"
#include "ctvio/sensors.hpp"
#include "ctvio/spline.hpp"

namespace ctvio {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat93 = Eigen::Matrix<double, 9, 3>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// One feature observation: frame timestamp (first row) and pixel.
struct Observation {
  double frame_time = 0.0;
  Vec2 pixel = Vec2::Zero();
};

/// Everything the rolling-shutter reprojection residual depends on apart
/// from the trajectory.
struct VisualMeasurement {
  PinholeIntrinsics intrinsics;
  Observation anchor;
  Observation target;
};

/// Row exposure times (t_a, t_b) of the anchor and target observations.
std::pair<double, double> observation_times(const VisualMeasurement& m, double line_delay);

/// Reprojection residual on the normalized image plane. Throws
/// CheiralityError when the landmark ends up behind the target camera and
/// DomainError when a row time is outside the trajectory.
Vec2 visual_residual(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth, double line_delay);

/// Global-shutter residual of the same landmark, with both views at their
/// frame timestamps. Equal to visual_residual for a zero line delay.
Vec2 global_shutter_residual(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth);

struct ControlPointJacobian {
  int index = 0;
  Mat23 d_rotation = Mat23::Zero();
  Mat23 d_position = Mat23::Zero();
};

struct VisualJacobians {
  Vec2 residual = Vec2::Zero();
  // Sorted by control point index, duplicates merged.
  std::vector<ControlPointJacobian> control_points;
  Vec2 d_inverse_depth = Vec2::Zero();
  // Closed form in the rows' spline time derivatives.
  Vec2 d_line_delay = Vec2::Zero();
  // Same quantity composed from dr/dt_a and dr/dt_b, each obtained through
  // the pose Jacobians and the body twist.
  Vec2 d_line_delay_chain = Vec2::Zero();
  Vec2 d_ta = Vec2::Zero();
  Vec2 d_tb = Vec2::Zero();
};

/// Residual and all Jacobians, with the anchor and target segments given
/// explicitly (std::nullopt picks the segments containing the row times).
VisualJacobians visual_jacobians(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth,
                                 double line_delay, std::optional<int> anchor_segment = std::nullopt,
                                 std::optional<int> target_segment = std::nullopt);

/// IMU residual [gyro; accel] at the sample time.
Vec6 imu_residual(const Trajectory& traj, const ImuSample& sample, const BiasPair& bias, const Vec3& gravity);

/// b_{k+1} - b_k stacked [gyro; accel].
Vec6 bias_residual(const BiasPair& bias_k, const BiasPair& bias_k1);

/// d(residual)/d(state) of preintegration_residual for the right-perturbed
/// rotations and Euclidean positions, velocities and biases.
struct PreintegrationJacobians {
  Mat93 d_R_k, d_p_k, d_v_k;
  Mat93 d_R_k1, d_p_k1, d_v_k1;
  Mat93 d_bias_gyro, d_bias_accel;
};
PreintegrationJacobians preintegration_jacobians(const KinematicState& k, const KinematicState& k1,
                                                 const Preintegration& preint, const Vec3& gravity,
                                                 const BiasPair& bias);

/// Spline state (R, p, v) at t.
KinematicState kinematic_state(const Trajectory& traj, double t);

/// Rolling-shutter reprojection factor between an anchor keyframe
/// observation and a later observation of the same landmark.
///
/// Blocks: [R, p] of every control point touched by either row time (sorted
/// by index), then the inverse depth, then the line delay. The two spline
/// segments are fixed at construction from the line delay at that moment.
class VisualFactor final : public Factor {
 public:
  VisualFactor(Trajectory& traj, VisualMeasurement measurement, double* inverse_depth, double* line_delay,
               double pixel_sigma, double huber_threshold = 1.0);

  std::string_view type() const override { return "visual"; }
  int residual_dim() const override { return 2; }
  void evaluate(VecX& residual, MatX* jacobian) const override;
  double loss_threshold() const override { return huber_threshold_; }

  const VisualMeasurement& measurement() const { return measurement_; }
  int anchor_segment() const { return anchor_segment_; }
  int target_segment() const { return target_segment_; }

 private:
  const Trajectory* traj_;
  VisualMeasurement measurement_;
  double* inverse_depth_;
  double* line_delay_;
  Vec2 sqrt_info_;
  double huber_threshold_;
  int anchor_segment_;
  int target_segment_;
  std::vector<int> cp_indices_;
};

/// Raw IMU factor at one sample time. Blocks: [R, p] of the four control
/// points of the containing segment, then gyro bias, then accel bias.
class ImuFactor final : public Factor {
 public:
  ImuFactor(Trajectory& traj, ImuSample sample, double* bias_gyro, double* bias_accel, const ImuNoiseModel& noise,
            Vec3 gravity = default_gravity());

  std::string_view type() const override { return "imu"; }
  int residual_dim() const override { return 6; }
  void evaluate(VecX& residual, MatX* jacobian) const override;

  double time() const { return sample_.t; }
  int segment() const { return segment_; }

 private:
  const Trajectory* traj_;
  ImuSample sample_;
  Vec3 gravity_;
  int segment_;
  double u_;
  Vec6 sqrt_info_;
};

/// Bias random walk between consecutive frames. Blocks: b_g,k, b_a,k,
/// b_g,k+1, b_a,k+1.
class BiasFactor final : public Factor {
 public:
  BiasFactor(double* bias_gyro_k, double* bias_accel_k, double* bias_gyro_k1, double* bias_accel_k1,
             double duration, const ImuNoiseModel& noise);

  std::string_view type() const override { return "bias"; }
  int residual_dim() const override { return 6; }
  void evaluate(VecX& residual, MatX* jacobian) const override;

 private:
  Vec6 sqrt_info_;
};

/// Preintegrated IMU factor between the spline states at t_k and t_k1,
/// corrected to first order for the bias at t_k. Blocks: [R, p] of the
/// control points touched by both times (sorted), then b_g,k, b_a,k.
class PreintegrationFactor final : public Factor {
 public:
  PreintegrationFactor(Trajectory& traj, double t_k, double t_k1, Preintegration preint, double* bias_gyro,
                       double* bias_accel, Vec3 gravity = default_gravity());

  std::string_view type() const override { return "preintegration"; }
  int residual_dim() const override { return 9; }
  void evaluate(VecX& residual, MatX* jacobian) const override;

 private:
  const Trajectory* traj_;
  double t_k_, t_k1_;
  int seg_k_, seg_k1_;
  double u_k_, u_k1_;
  Preintegration preint_;
  Vec3 gravity_;
  Mat9 sqrt_info_;  // upper triangular, r_w = sqrt_info * r
  std::vector<int> cp_indices_;
};

/// Direct pose measurement of the spline, used for fitting and anchoring.
/// Residual [Log(R_meas^T R(t)) / sigma_R; (p(t) - p_meas) / sigma_p].
class PoseFactor final : public Factor {
 public:
  PoseFactor(Trajectory& traj, double t, Pose measured, double sigma_rotation, double sigma_position);

  std::string_view type() const override { return "pose"; }
  int residual_dim() const override { return 6; }
  void evaluate(VecX& residual, MatX* jacobian) const override;

 private:
  const Trajectory* traj_;
  int segment_;
  double u_;
  Pose measured_;
  double w_rot_, w_pos_;
};

/// World velocity measurement of the spline.
class VelocityFactor final : public Factor {
 public:
  VelocityFactor(Trajectory& traj, double t, Vec3 measured, double sigma);

  std::string_view type() const override { return "velocity"; }
  int residual_dim() const override { return 3; }
  void evaluate(VecX& residual, MatX* jacobian) const override;

 private:
  const Trajectory* traj_;
  int segment_;
  double u_;
  Vec3 measured_;
  double weight_;
};

/// Block references [R_k, p_k] for the given control point indices.
std::vector<BlockRef> control_point_blocks(Trajectory& traj, const std::vector<int>& indices);

}  // namespace ctvio
