#include "ctvio/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ctvio {

void PinholeIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("intrinsics: image size must be positive");
  }
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

bool PinholeIntrinsics::contains(const Vec2& px) const {
  return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
}

Vec3 back_project(const PinholeIntrinsics& intr, const Vec2& pixel) {
  return {(pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0};
}

Vec2 project(const PinholeIntrinsics& intr, const Vec3& pc) {
  if (!(pc.z() > kMinDepth)) {
    throw CheiralityError("project: point at or behind the camera (z = " + std::to_string(pc.z()) + ")");
  }
  return {intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy};
}

double row_time(double frame_time, double row, double line_delay, int height) {
  if (!(row >= 0.0 && row < static_cast<double>(height))) {
    std::ostringstream os;
    os << "row_time: row " << row << " outside [0, " << height << ")";
    throw std::out_of_range(os.str());
  }
  return frame_time + row * line_delay;
}

void validate_line_delay(double line_delay, int height, double frame_period) {
  if (!(line_delay >= 0.0)) {
    throw std::invalid_argument("line delay must be nonnegative");
  }
  if (!(line_delay * height < frame_period)) {
    throw std::invalid_argument("line delay too large: readout exceeds the frame period");
  }
}

void ImuNoiseModel::validate() const {
  if (gyro_noise_density < 0.0 || accel_noise_density < 0.0 || gyro_bias_walk < 0.0 ||
      accel_bias_walk < 0.0) {
    throw std::invalid_argument("imu noise: densities must be nonnegative");
  }
  if (!(rate > 0.0)) throw std::invalid_argument("imu noise: rate must be positive");
}

double ImuNoiseModel::gyro_sigma() const { return gyro_noise_density * std::sqrt(rate); }
double ImuNoiseModel::accel_sigma() const { return accel_noise_density * std::sqrt(rate); }

ImuSample interpolate_imu(const std::vector<ImuSample>& samples, double t) {
  if (samples.empty()) throw DomainError("interpolate_imu: empty stream");
  if (t <= samples.front().t) return {t, samples.front().gyro, samples.front().accel};
  if (t >= samples.back().t) return {t, samples.back().gyro, samples.back().accel};
  auto hi = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double value, const ImuSample& s) { return value < s.t; });
  auto lo = std::prev(hi);
  const double s = (t - lo->t) / (hi->t - lo->t);
  return {t, (1.0 - s) * lo->gyro + s * hi->gyro, (1.0 - s) * lo->accel + s * hi->accel};
}

}  // namespace ctvio
