#pragma once

#include <array>
#include <deque>
#include <span>

#include "ctvio/sensors.hpp"
#include "ctvio/types.hpp"

namespace ctvio {

/// Uniform knot grid. Control point k is nominally associated with time
/// t0 + (k - 1) * dt.
struct KnotGrid {
  double t0 = 0.0;
  double dt = 0.03;
};

/// Rotational + positional control point of the split (SO(3) x R^3) spline.
struct ControlPoint {
  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();
};

/// Segment index i and normalized time u = (t - t0)/dt - i.
struct SegmentLocation {
  int index = 0;
  double u = 0.0;
};

/// Inclusive index range into the control point list.
struct ControlPointSpan {
  int first = 0;
  int last = -1;

  int size() const { return last - first + 1; }
  bool contains(int k) const { return k >= first && k <= last; }
  bool operator==(const ControlPointSpan&) const = default;
};

/// Cumulative cubic blending values zeta(u) and their first two derivatives
/// with respect to u. zeta[0] is identically 1.
struct Blending {
  Vec4 value;
  Vec4 d1;
  Vec4 d2;
};

/// Cumulative blending matrix (rows: zeta_j, columns: powers of u), built
/// from the uniform cubic B-spline basis.
const Mat4& cumulative_blending_matrix();
Blending cumulative_blending(double u);

/// Everything a factor needs from one spline evaluation. Jacobian entries
/// are only filled when requested; index k refers to control point
/// segment + k.
struct SplineSample {
  int segment = 0;
  double u = 0.0;

  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 omega = Vec3::Zero();  // body angular velocity, rad/s
  Vec3 v = Vec3::Zero();      // world velocity, m/s
  Vec3 a = Vec3::Zero();      // world acceleration, m/s^2

  // d(right tangent of R(t)) / d(right perturbation of R_k)
  std::array<Mat3, 4> dR;
  // d omega / d(right perturbation of R_k)
  std::array<Mat3, 4> domega;
  // Weights of p_k in p(t), v(t), a(t).
  Vec4 wp = Vec4::Zero();
  Vec4 wv = Vec4::Zero();
  Vec4 wa = Vec4::Zero();

  Mat3 Rdot() const;
  Pose pose() const { return {R, p}; }
};

/// Evaluates one segment from its four control points. `u` may lie slightly
/// outside [0, 1]; the segment polynomial is then extended.
SplineSample evaluate_segment(const std::array<const ControlPoint*, 4>& cps, double u, double dt,
                              bool with_jacobians);

/// Cubic cumulative B-spline trajectory of the body (IMU) frame in the world
/// frame, plus the fixed body-to-camera extrinsic.
///
/// The supported domain is [t0, t0 + (size - 3) dt]. A query exactly at the
/// right end is evaluated as u = 1 of the last segment. Control points live
/// in a deque so that references handed to the solver stay valid while the
/// trajectory grows.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(KnotGrid grid, Pose extrinsic = {});

  const KnotGrid& grid() const { return grid_; }
  const Pose& extrinsic() const { return extrinsic_; }
  void set_extrinsic(const Pose& body_T_camera) { extrinsic_ = body_T_camera; }

  std::size_t size() const { return cps_.size(); }
  ControlPoint& control_point(std::size_t k) { return cps_.at(k); }
  const ControlPoint& control_point(std::size_t k) const { return cps_.at(k); }
  void push_back(const ControlPoint& cp) { cps_.push_back(cp); }

  double knot_time(int i) const { return grid_.t0 + i * grid_.dt; }
  double t_min() const { return grid_.t0; }
  /// Right end of the domain; only meaningful for size() >= 4.
  double t_max() const;
  bool covers(double t) const;

  /// Throws DomainError naming the supported interval.
  SegmentLocation locate(double t) const;

  SplineSample sample(double t, bool with_jacobians = false) const;
  /// Evaluates a fixed segment; u outside [0, 1] extends its polynomial.
  SplineSample sample_segment(int segment, double u, bool with_jacobians = false) const;

  Pose pose(double t) const;
  Pose camera_pose(double t) const { return pose(t) * extrinsic_; }
  Vec3 body_angular_velocity(double t) const;
  /// World-frame velocity and acceleration of the body origin.
  std::pair<Vec3, Vec3> world_velocity_acceleration(double t) const;
  Mat3 rotation_time_derivative(double t) const;

  /// Smallest index span whose control points influence some t in [ta, tb].
  ControlPointSpan active_span(double ta, double tb) const;

 private:
  KnotGrid grid_;
  Pose extrinsic_;
  std::deque<ControlPoint> cps_;
};

/// Appends control points until the domain covers t_end. Each new control
/// point is the dead-reckoned IMU pose at its nominal knot time, integrated
/// from the current domain end with the given bias removed. The IMU stream
/// must reach t_end; throws DomainError naming the missing interval.
void extend_with_prediction(Trajectory& traj, double t_end, const std::vector<ImuSample>& imu,
                            const BiasPair& bias, const Vec3& gravity);

}  // namespace ctvio
