#pragma once

#include <vector>

#include "ctvio/types.hpp"

namespace ctvio {

/// Pinhole camera without distortion. Pixel rows are zero-based from the top
/// of the image; row v of a frame is exposed at t_frame + v * line_delay.
struct PinholeIntrinsics {
  double fx = 400.0;
  double fy = 400.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  /// Throws std::invalid_argument when focal lengths or principal point are
  /// out of range.
  void validate() const;
  bool contains(const Vec2& px) const;
};

/// Minimum depth accepted by project().
inline constexpr double kMinDepth = 1e-6;

/// Pixel to the normalized image plane, (x, y, 1).
Vec3 back_project(const PinholeIntrinsics& intr, const Vec2& pixel);

/// Camera-frame point to pixel. Throws CheiralityError for z <= kMinDepth.
Vec2 project(const PinholeIntrinsics& intr, const Vec3& point_in_camera);

/// Exposure time of (sub-)row `row`. Throws std::out_of_range unless
/// 0 <= row < height.
double row_time(double frame_time, double row, double line_delay, int height);

/// Throws std::invalid_argument unless 0 <= line_delay and the whole frame is
/// read out within one frame period.
void validate_line_delay(double line_delay, int height, double frame_period);

/// Continuous-time IMU noise densities. White noise in unit/sqrt(Hz), bias
/// random walk in unit/s/sqrt(Hz).
struct ImuNoiseModel {
  double gyro_noise_density = 1.7e-4;
  double accel_noise_density = 2.0e-3;
  double gyro_bias_walk = 2.0e-5;
  double accel_bias_walk = 3.0e-4;
  double rate = 90.0;

  void validate() const;
  double gyro_sigma() const;   // per-sample, rad/s
  double accel_sigma() const;  // per-sample, m/s^2
};

/// World-frame gravity term as it appears in the accelerometer model,
/// a_m = R^T (a + g).
inline Vec3 default_gravity() { return {0.0, 0.0, 9.8}; }

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame
};

struct BiasPair {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Linear interpolation of an IMU stream, holding the end samples outside
/// the stream range. `samples` must be time-sorted and nonempty.
ImuSample interpolate_imu(const std::vector<ImuSample>& samples, double t);

}  // namespace ctvio
