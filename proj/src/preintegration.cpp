#include "ctvio/preintegration.hpp"

#include <algorithm>

#include "ctvio/lie.hpp"

namespace ctvio {

namespace {

Vec3 bias_delta(const BiasPair& bias, const BiasPair& lin, bool gyro) {
  return gyro ? Vec3(bias.gyro - lin.gyro) : Vec3(bias.accel - lin.accel);
}

}  // namespace

Vec3 Preintegration::corrected_alpha(const BiasPair& bias) const {
  return alpha + bias_jacobian.block<3, 3>(0, 0) * bias_delta(bias, linearization_bias, true) +
         bias_jacobian.block<3, 3>(0, 3) * bias_delta(bias, linearization_bias, false);
}

Vec3 Preintegration::corrected_beta(const BiasPair& bias) const {
  return beta + bias_jacobian.block<3, 3>(6, 0) * bias_delta(bias, linearization_bias, true) +
         bias_jacobian.block<3, 3>(6, 3) * bias_delta(bias, linearization_bias, false);
}

Rotation Preintegration::corrected_rotation(const BiasPair& bias) const {
  return delta_R * so3::exp(bias_jacobian.block<3, 3>(3, 0) * bias_delta(bias, linearization_bias, true));
}

Preintegration preintegrate(const std::vector<ImuSample>& samples, const BiasPair& bias,
                            const ImuNoiseModel& noise) {
  if (samples.size() < 2) throw std::invalid_argument("preintegrate: need at least two samples");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].t > samples[i - 1].t)) {
      throw std::invalid_argument("preintegrate: sample times must be strictly increasing");
    }
  }

  Preintegration out;
  out.linearization_bias = bias;
  out.duration = samples.back().t - samples.front().t;

  const double gyro_var = noise.gyro_noise_density * noise.gyro_noise_density;
  const double accel_var = noise.accel_noise_density * noise.accel_noise_density;

  Mat9 F;
  Eigen::Matrix<double, 9, 6> B;
  Eigen::Matrix<double, 9, 6> G;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const ImuSample& m0 = samples[i - 1];
    const ImuSample& m1 = samples[i];
    const double h = m1.t - m0.t;

    const Vec3 gyro = 0.5 * (m0.gyro + m1.gyro) - bias.gyro;
    const Vec3 a0 = m0.accel - bias.accel;
    const Vec3 a1 = m1.accel - bias.accel;
    const Rotation R0 = out.delta_R;
    const Rotation E = so3::exp(gyro * h);
    const Rotation R1 = R0 * E;
    const Vec3 acc = 0.5 * (R0 * a0 + R1 * a1);

    // Linearized error propagation for [alpha, theta, beta].
    const Mat3 Jr = so3::right_jacobian(gyro * h);
    const Mat3 dacc_dtheta = -0.5 * (R0 * so3::skew(a0) + R1 * so3::skew(a1) * E.transpose());
    const Mat3 dacc_dbg = 0.5 * R1 * so3::skew(a1) * Jr * h;
    const Mat3 dacc_dba = -0.5 * (R0 + R1);

    F.setIdentity();
    F.block<3, 3>(0, 3) = 0.5 * h * h * dacc_dtheta;
    F.block<3, 3>(0, 6) = h * Mat3::Identity();
    F.block<3, 3>(3, 3) = E.transpose();
    F.block<3, 3>(6, 3) = h * dacc_dtheta;

    B.setZero();
    B.block<3, 3>(0, 0) = 0.5 * h * h * dacc_dbg;
    B.block<3, 3>(0, 3) = 0.5 * h * h * dacc_dba;
    B.block<3, 3>(3, 0) = -Jr * h;
    B.block<3, 3>(6, 0) = h * dacc_dbg;
    B.block<3, 3>(6, 3) = h * dacc_dba;

    // Measurement noise enters like a bias error over the step; the
    // continuous densities are converted to the variance of a step average.
    G = B;
    Eigen::Matrix<double, 6, 6> Q = Eigen::Matrix<double, 6, 6>::Zero();
    Q.diagonal().head<3>().setConstant(gyro_var / h);
    Q.diagonal().tail<3>().setConstant(accel_var / h);

    out.covariance = F * out.covariance * F.transpose() + G * Q * G.transpose();
    out.bias_jacobian = F * out.bias_jacobian + B;

    out.alpha += out.beta * h + 0.5 * acc * h * h;
    out.beta += acc * h;
    out.delta_R = so3::normalize(R1);
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

std::vector<ImuSample> imu_interval(const std::vector<ImuSample>& stream, double t_begin, double t_end) {
  if (stream.empty() || !(t_end > t_begin)) {
    throw std::invalid_argument("imu_interval: empty interval");
  }
  if (stream.front().t > t_begin || stream.back().t < t_end) {
    throw DomainError("imu_interval: stream does not cover the requested interval");
  }
  constexpr double kMinGap = 1e-6;
  std::vector<ImuSample> out;
  out.push_back(interpolate_imu(stream, t_begin));
  for (const ImuSample& s : stream) {
    if (s.t > t_begin + kMinGap && s.t < t_end - kMinGap) out.push_back(s);
  }
  out.push_back(interpolate_imu(stream, t_end));
  return out;
}

Vec9 preintegration_residual(const KinematicState& k, const KinematicState& k1, const Preintegration& preint,
                             const Vec3& gravity, const std::optional<BiasPair>& bias) {
  const BiasPair b = bias.value_or(preint.linearization_bias);
  const double T = preint.duration;
  const Mat3 Rt = k.R.transpose();
  Vec9 r;
  r.segment<3>(0) = Rt * (k1.p - k.p - k.v * T + 0.5 * gravity * T * T) - preint.corrected_alpha(b);
  r.segment<3>(3) = so3::log(preint.corrected_rotation(b).transpose() * Rt * k1.R);
  r.segment<3>(6) = Rt * (k1.v - k.v + gravity * T) - preint.corrected_beta(b);
  return r;
}

}  // namespace ctvio
