#pragma once

#include <optional>
#include <vector>

#include "ctvio/sensors.hpp"
#include "ctvio/types.hpp"

namespace ctvio {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

/// Relative motion integrated from raw IMU samples between two frames.
/// Error-state ordering everywhere is [position, rotation, velocity].
struct Preintegration {
  Vec3 alpha = Vec3::Zero();  // position delta, m
  Vec3 beta = Vec3::Zero();   // velocity delta, m/s
  Rotation delta_R = Rotation::Identity();
  Mat9 covariance = Mat9::Zero();
  BiasPair linearization_bias;
  double duration = 0.0;

  // First-order sensitivities to the bias, columns [gyro(3), accel(3)].
  Eigen::Matrix<double, 9, 6> bias_jacobian = Eigen::Matrix<double, 9, 6>::Zero();

  /// alpha, beta, delta_R corrected to first order for a new bias.
  Vec3 corrected_alpha(const BiasPair& bias) const;
  Vec3 corrected_beta(const BiasPair& bias) const;
  Rotation corrected_rotation(const BiasPair& bias) const;
};

/// Midpoint-rule preintegration over the span of `samples` (at least two,
/// strictly increasing times). Throws std::invalid_argument otherwise.
Preintegration preintegrate(const std::vector<ImuSample>& samples, const BiasPair& bias,
                            const ImuNoiseModel& noise);

/// Samples covering exactly [t_begin, t_end], with interpolated end points.
std::vector<ImuSample> imu_interval(const std::vector<ImuSample>& stream, double t_begin, double t_end);

/// Rotation, position and velocity of the body at one instant.
struct KinematicState {
  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Unwhitened 9-vector [position; rotation; velocity] residual between two
/// states. When `bias` is given the measurement is first-order corrected to
/// it, otherwise the linearization bias is used as is.
Vec9 preintegration_residual(const KinematicState& k, const KinematicState& k1, const Preintegration& preint,
                             const Vec3& gravity, const std::optional<BiasPair>& bias = std::nullopt);

}  // namespace ctvio
