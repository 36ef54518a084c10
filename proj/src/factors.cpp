#include "ctvio/factors.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Cholesky>

#include "ctvio/lie.hpp"

namespace ctvio {

namespace {

double segment_u(const Trajectory& traj, int segment, double t) {
  return (t - traj.grid().t0) / traj.grid().dt - segment;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> J;
  J << iz, 0.0, -p.x() * iz * iz, 0.0, iz, -p.y() * iz * iz;
  return J;
}

std::vector<int> merged_support(int seg_a, int seg_b) {
  std::vector<int> out;
  for (int k = 0; k < 4; ++k) out.push_back(seg_a + k);
  for (int k = 0; k < 4; ++k) out.push_back(seg_b + k);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int column_of(const std::vector<int>& indices, int cp) {
  const auto it = std::lower_bound(indices.begin(), indices.end(), cp);
  return 6 * static_cast<int>(it - indices.begin());
}

// Residual and Jacobians w.r.t. the two row poses, given spline samples at
// the anchor and target row times.
struct VisualCore {
  Vec2 residual;
  Vec3 p_target;
  Mat23 d_theta_a, d_p_a, d_theta_b, d_p_b;
  Vec2 d_inverse_depth;
  Vec2 d_line_delay;
  Vec2 d_ta, d_tb;
};

VisualCore visual_core(const SplineSample& sa, const SplineSample& sb, const Pose& extrinsic,
                       const VisualMeasurement& m, double inverse_depth, bool with_jacobians) {
  const Vec3 f_a = back_project(m.intrinsics, m.anchor.pixel);
  const Vec3 f_b = back_project(m.intrinsics, m.target.pixel);
  const Mat3& R_bc = extrinsic.R;

  const Vec3 p_anchor_body = R_bc * (f_a / inverse_depth) + extrinsic.p;
  const Vec3 p_world = sa.R * p_anchor_body + sa.p;
  const Vec3 p_target_body = sb.R.transpose() * (p_world - sb.p);
  const Vec3 p_c = R_bc.transpose() * (p_target_body - extrinsic.p);
  if (!(p_c.z() > kMinDepth)) throw CheiralityError("landmark behind the target camera");

  VisualCore out;
  out.p_target = p_c;
  out.residual = p_c.head<2>() / p_c.z() - f_b.head<2>();
  if (!with_jacobians) return out;

  const Mat23 Jpi = projection_jacobian(p_c);
  const Mat3 A = R_bc.transpose() * sb.R.transpose();
  out.d_theta_a = -Jpi * A * sa.R * so3::skew(p_anchor_body);
  out.d_p_a = Jpi * A;
  out.d_theta_b = Jpi * R_bc.transpose() * so3::skew(p_target_body);
  out.d_p_b = -Jpi * A;
  out.d_inverse_depth = Jpi * A * sa.R * R_bc * (-f_a / (inverse_depth * inverse_depth));

  // Rolling-shutter term: derivative of the target-camera point w.r.t. the
  // line delay, then through the projection.
  const double va = m.anchor.pixel.y();
  const double vb = m.target.pixel.y();
  const Mat3 Rdot_a = sa.Rdot();
  const Mat3 Rdot_b = sb.Rdot();
  const Vec3 dp_dtr = R_bc.transpose() * (vb * Rdot_b.transpose() * sa.R * p_anchor_body +
                                          va * sb.R.transpose() * Rdot_a * p_anchor_body +
                                          vb * Rdot_b.transpose() * (sa.p - sb.p) +
                                          sb.R.transpose() * (va * sa.v - vb * sb.v));
  out.d_line_delay = Jpi * dp_dtr;

  out.d_ta = out.d_theta_a * sa.omega + out.d_p_a * sa.v;
  out.d_tb = out.d_theta_b * sb.omega + out.d_p_b * sb.v;
  return out;
}

}  // namespace

std::pair<double, double> observation_times(const VisualMeasurement& m, double line_delay) {
  const int h = m.intrinsics.height;
  return {row_time(m.anchor.frame_time, m.anchor.pixel.y(), line_delay, h),
          row_time(m.target.frame_time, m.target.pixel.y(), line_delay, h)};
}

Vec2 visual_residual(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth, double line_delay) {
  const auto [ta, tb] = observation_times(m, line_delay);
  return visual_core(traj.sample(ta), traj.sample(tb), traj.extrinsic(), m, inverse_depth, false).residual;
}

Vec2 global_shutter_residual(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth) {
  const Pose T_wa = traj.camera_pose(m.anchor.frame_time);
  const Pose T_wb = traj.camera_pose(m.target.frame_time);
  const Vec3 point = T_wa * (back_project(m.intrinsics, m.anchor.pixel) / inverse_depth);
  const Vec3 p_c = T_wb.inverse() * point;
  if (!(p_c.z() > kMinDepth)) throw CheiralityError("landmark behind the target camera");
  return p_c.head<2>() / p_c.z() - back_project(m.intrinsics, m.target.pixel).head<2>();
}

VisualJacobians visual_jacobians(const Trajectory& traj, const VisualMeasurement& m, double inverse_depth,
                                 double line_delay, std::optional<int> anchor_segment,
                                 std::optional<int> target_segment) {
  const auto [ta, tb] = observation_times(m, line_delay);
  const int seg_a = anchor_segment.value_or(traj.locate(ta).index);
  const int seg_b = target_segment.value_or(traj.locate(tb).index);
  const SplineSample sa = traj.sample_segment(seg_a, segment_u(traj, seg_a, ta), true);
  const SplineSample sb = traj.sample_segment(seg_b, segment_u(traj, seg_b, tb), true);
  const VisualCore core = visual_core(sa, sb, traj.extrinsic(), m, inverse_depth, true);

  std::map<int, ControlPointJacobian> cps;
  for (int k = 0; k < 4; ++k) {
    ControlPointJacobian& ja = cps[seg_a + k];
    ja.index = seg_a + k;
    ja.d_rotation += core.d_theta_a * sa.dR[k];
    ja.d_position += core.d_p_a * sa.wp[k];
    ControlPointJacobian& jb = cps[seg_b + k];
    jb.index = seg_b + k;
    jb.d_rotation += core.d_theta_b * sb.dR[k];
    jb.d_position += core.d_p_b * sb.wp[k];
  }

  VisualJacobians out;
  out.residual = core.residual;
  for (const auto& [index, j] : cps) out.control_points.push_back(j);
  out.d_inverse_depth = core.d_inverse_depth;
  out.d_line_delay = core.d_line_delay;
  out.d_ta = core.d_ta;
  out.d_tb = core.d_tb;
  out.d_line_delay_chain = core.d_ta * m.anchor.pixel.y() + core.d_tb * m.target.pixel.y();
  return out;
}

Vec6 imu_residual(const Trajectory& traj, const ImuSample& sample, const BiasPair& bias, const Vec3& gravity) {
  const SplineSample s = traj.sample(sample.t);
  Vec6 r;
  r.head<3>() = s.omega - sample.gyro + bias.gyro;
  r.tail<3>() = s.R.transpose() * (s.a + gravity) - sample.accel + bias.accel;
  return r;
}

Vec6 bias_residual(const BiasPair& bias_k, const BiasPair& bias_k1) {
  Vec6 r;
  r.head<3>() = bias_k1.gyro - bias_k.gyro;
  r.tail<3>() = bias_k1.accel - bias_k.accel;
  return r;
}

PreintegrationJacobians preintegration_jacobians(const KinematicState& k, const KinematicState& k1,
                                                 const Preintegration& preint, const Vec3& gravity,
                                                 const BiasPair& bias) {
  const double T = preint.duration;
  const Mat3 Rt = k.R.transpose();
  const Vec3 dp = k1.p - k.p - k.v * T + 0.5 * gravity * T * T;
  const Vec3 dv = k1.v - k.v + gravity * T;

  const Vec3 phi = preint.bias_jacobian.block<3, 3>(3, 0) * (bias.gyro - preint.linearization_bias.gyro);
  const Mat3 C = preint.delta_R * so3::exp(phi);
  const Mat3 E = C.transpose() * Rt * k1.R;
  const Mat3 Jinv = so3::right_jacobian_inverse(so3::log(E));

  PreintegrationJacobians J;
  J.d_R_k.setZero();
  J.d_p_k.setZero();
  J.d_v_k.setZero();
  J.d_R_k1.setZero();
  J.d_p_k1.setZero();
  J.d_v_k1.setZero();
  J.d_bias_gyro.setZero();
  J.d_bias_accel.setZero();

  J.d_R_k.block<3, 3>(0, 0) = so3::skew(Rt * dp);
  J.d_R_k.block<3, 3>(3, 0) = -Jinv * k1.R.transpose() * k.R;
  J.d_R_k.block<3, 3>(6, 0) = so3::skew(Rt * dv);
  J.d_R_k1.block<3, 3>(3, 0) = Jinv;

  J.d_p_k.block<3, 3>(0, 0) = -Rt;
  J.d_p_k1.block<3, 3>(0, 0) = Rt;
  J.d_v_k.block<3, 3>(0, 0) = -Rt * T;
  J.d_v_k.block<3, 3>(6, 0) = -Rt;
  J.d_v_k1.block<3, 3>(6, 0) = Rt;

  J.d_bias_gyro.block<3, 3>(0, 0) = -preint.bias_jacobian.block<3, 3>(0, 0);
  J.d_bias_gyro.block<3, 3>(3, 0) =
      -Jinv * E.transpose() * so3::right_jacobian(phi) * preint.bias_jacobian.block<3, 3>(3, 0);
  J.d_bias_gyro.block<3, 3>(6, 0) = -preint.bias_jacobian.block<3, 3>(6, 0);
  J.d_bias_accel.block<3, 3>(0, 0) = -preint.bias_jacobian.block<3, 3>(0, 3);
  J.d_bias_accel.block<3, 3>(6, 0) = -preint.bias_jacobian.block<3, 3>(6, 3);
  return J;
}

KinematicState kinematic_state(const Trajectory& traj, double t) {
  const SplineSample s = traj.sample(t);
  return {s.R, s.p, s.v};
}

std::vector<BlockRef> control_point_blocks(Trajectory& traj, const std::vector<int>& indices) {
  std::vector<BlockRef> out;
  out.reserve(2 * indices.size());
  for (int k : indices) {
    ControlPoint& cp = traj.control_point(static_cast<std::size_t>(k));
    out.push_back({cp.R.data(), BlockKind::kRotation});
    out.push_back({cp.p.data(), BlockKind::kPosition});
  }
  return out;
}

// ---------------------------------------------------------------------------

VisualFactor::VisualFactor(Trajectory& traj, VisualMeasurement measurement, double* inverse_depth,
                           double* line_delay, double pixel_sigma, double huber_threshold)
    : traj_(&traj),
      measurement_(std::move(measurement)),
      inverse_depth_(inverse_depth),
      line_delay_(line_delay),
      huber_threshold_(huber_threshold) {
  if (!(pixel_sigma > 0.0)) throw std::invalid_argument("VisualFactor: pixel sigma must be positive");
  const auto [ta, tb] = observation_times(measurement_, *line_delay_);
  anchor_segment_ = traj.locate(ta).index;
  target_segment_ = traj.locate(tb).index;
  sqrt_info_ = Vec2(measurement_.intrinsics.fx / pixel_sigma, measurement_.intrinsics.fy / pixel_sigma);
  cp_indices_ = merged_support(anchor_segment_, target_segment_);
  blocks_ = control_point_blocks(traj, cp_indices_);
  blocks_.push_back({inverse_depth, BlockKind::kInverseDepth});
  blocks_.push_back({line_delay, BlockKind::kLineDelay});
}

void VisualFactor::evaluate(VecX& residual, MatX* jacobian) const {
  const double line_delay = *line_delay_;
  const auto [ta, tb] = observation_times(measurement_, line_delay);
  const bool jac = jacobian != nullptr;
  const SplineSample sa = traj_->sample_segment(anchor_segment_, segment_u(*traj_, anchor_segment_, ta), jac);
  const SplineSample sb = traj_->sample_segment(target_segment_, segment_u(*traj_, target_segment_, tb), jac);
  const VisualCore core = visual_core(sa, sb, traj_->extrinsic(), measurement_, *inverse_depth_, jac);
  residual = sqrt_info_.cwiseProduct(core.residual);
  if (!jac) return;

  MatX& J = *jacobian;
  J.setZero(2, jacobian_cols());
  for (int k = 0; k < 4; ++k) {
    const int ca = column_of(cp_indices_, anchor_segment_ + k);
    J.block<2, 3>(0, ca) += core.d_theta_a * sa.dR[k];
    J.block<2, 3>(0, ca + 3) += core.d_p_a * sa.wp[k];
    const int cb = column_of(cp_indices_, target_segment_ + k);
    J.block<2, 3>(0, cb) += core.d_theta_b * sb.dR[k];
    J.block<2, 3>(0, cb + 3) += core.d_p_b * sb.wp[k];
  }
  const int n = 6 * static_cast<int>(cp_indices_.size());
  J.col(n) = core.d_inverse_depth;
  J.col(n + 1) = core.d_line_delay;
  J = sqrt_info_.asDiagonal() * J;
}

// ---------------------------------------------------------------------------

ImuFactor::ImuFactor(Trajectory& traj, ImuSample sample, double* bias_gyro, double* bias_accel,
                     const ImuNoiseModel& noise, Vec3 gravity)
    : traj_(&traj), sample_(sample), gravity_(gravity) {
  const SegmentLocation loc = traj.locate(sample.t);
  segment_ = loc.index;
  u_ = loc.u;
  sqrt_info_.head<3>().setConstant(1.0 / noise.gyro_sigma());
  sqrt_info_.tail<3>().setConstant(1.0 / noise.accel_sigma());
  blocks_ = control_point_blocks(traj, {segment_, segment_ + 1, segment_ + 2, segment_ + 3});
  blocks_.push_back({bias_gyro, BlockKind::kBiasGyro});
  blocks_.push_back({bias_accel, BlockKind::kBiasAccel});
}

void ImuFactor::evaluate(VecX& residual, MatX* jacobian) const {
  const SplineSample s = traj_->sample_segment(segment_, u_, jacobian != nullptr);
  const Eigen::Map<const Vec3> bg(blocks_[8].data);
  const Eigen::Map<const Vec3> ba(blocks_[9].data);
  const Vec3 specific_force = s.R.transpose() * (s.a + gravity_);
  Vec6 r;
  r.head<3>() = s.omega - sample_.gyro + bg;
  r.tail<3>() = specific_force - sample_.accel + ba;
  residual = sqrt_info_.cwiseProduct(r);
  if (!jacobian) return;

  MatX& J = *jacobian;
  J.setZero(6, 30);
  const Mat3 d_theta = so3::skew(specific_force);
  for (int k = 0; k < 4; ++k) {
    J.block<3, 3>(0, 6 * k) = s.domega[k];
    J.block<3, 3>(3, 6 * k) = d_theta * s.dR[k];
    J.block<3, 3>(3, 6 * k + 3) = s.R.transpose() * s.wa[k];
  }
  J.block<3, 3>(0, 24).setIdentity();
  J.block<3, 3>(3, 27).setIdentity();
  J = sqrt_info_.asDiagonal() * J;
}

// ---------------------------------------------------------------------------

BiasFactor::BiasFactor(double* bias_gyro_k, double* bias_accel_k, double* bias_gyro_k1, double* bias_accel_k1,
                       double duration, const ImuNoiseModel& noise) {
  if (!(duration > 0.0)) throw std::invalid_argument("BiasFactor: duration must be positive");
  sqrt_info_.head<3>().setConstant(1.0 / (noise.gyro_bias_walk * std::sqrt(duration)));
  sqrt_info_.tail<3>().setConstant(1.0 / (noise.accel_bias_walk * std::sqrt(duration)));
  blocks_ = {{bias_gyro_k, BlockKind::kBiasGyro},
             {bias_accel_k, BlockKind::kBiasAccel},
             {bias_gyro_k1, BlockKind::kBiasGyro},
             {bias_accel_k1, BlockKind::kBiasAccel}};
}

void BiasFactor::evaluate(VecX& residual, MatX* jacobian) const {
  BiasPair k{Eigen::Map<const Vec3>(blocks_[0].data), Eigen::Map<const Vec3>(blocks_[1].data)};
  BiasPair k1{Eigen::Map<const Vec3>(blocks_[2].data), Eigen::Map<const Vec3>(blocks_[3].data)};
  residual = sqrt_info_.cwiseProduct(bias_residual(k, k1));
  if (!jacobian) return;
  MatX& J = *jacobian;
  J.setZero(6, 12);
  J.leftCols<6>() = -MatX::Identity(6, 6);
  J.rightCols<6>() = MatX::Identity(6, 6);
  J = sqrt_info_.asDiagonal() * J;
}

// ---------------------------------------------------------------------------

PreintegrationFactor::PreintegrationFactor(Trajectory& traj, double t_k, double t_k1, Preintegration preint,
                                           double* bias_gyro, double* bias_accel, Vec3 gravity)
    : traj_(&traj), t_k_(t_k), t_k1_(t_k1), preint_(std::move(preint)), gravity_(gravity) {
  const SegmentLocation a = traj.locate(t_k);
  const SegmentLocation b = traj.locate(t_k1);
  seg_k_ = a.index;
  u_k_ = a.u;
  seg_k1_ = b.index;
  u_k1_ = b.u;

  const Mat9 cov = 0.5 * (preint_.covariance + preint_.covariance.transpose()) +
                   1e-18 * Mat9::Identity();
  const Mat9 info = cov.inverse();
  // info = L L^T, so |L^T r|^2 = r^T info r.
  const Eigen::LLT<Mat9> llt(0.5 * (info + info.transpose()));
  if (llt.info() != Eigen::Success) throw std::invalid_argument("PreintegrationFactor: covariance not positive definite");
  sqrt_info_ = llt.matrixL().transpose();

  cp_indices_ = merged_support(seg_k_, seg_k1_);
  blocks_ = control_point_blocks(traj, cp_indices_);
  blocks_.push_back({bias_gyro, BlockKind::kBiasGyro});
  blocks_.push_back({bias_accel, BlockKind::kBiasAccel});
}

void PreintegrationFactor::evaluate(VecX& residual, MatX* jacobian) const {
  const bool jac = jacobian != nullptr;
  const SplineSample a = traj_->sample_segment(seg_k_, u_k_, jac);
  const SplineSample b = traj_->sample_segment(seg_k1_, u_k1_, jac);
  const KinematicState k{a.R, a.p, a.v};
  const KinematicState k1{b.R, b.p, b.v};
  const std::size_t nb = blocks_.size();
  const BiasPair bias{Eigen::Map<const Vec3>(blocks_[nb - 2].data), Eigen::Map<const Vec3>(blocks_[nb - 1].data)};
  residual = sqrt_info_ * preintegration_residual(k, k1, preint_, gravity_, bias);
  if (!jac) return;

  const PreintegrationJacobians P = preintegration_jacobians(k, k1, preint_, gravity_, bias);
  MatX& J = *jacobian;
  J.setZero(9, jacobian_cols());
  for (int i = 0; i < 4; ++i) {
    const int ca = column_of(cp_indices_, seg_k_ + i);
    J.block<9, 3>(0, ca) += P.d_R_k * a.dR[i];
    J.block<9, 3>(0, ca + 3) += P.d_p_k * a.wp[i] + P.d_v_k * a.wv[i];
    const int cb = column_of(cp_indices_, seg_k1_ + i);
    J.block<9, 3>(0, cb) += P.d_R_k1 * b.dR[i];
    J.block<9, 3>(0, cb + 3) += P.d_p_k1 * b.wp[i] + P.d_v_k1 * b.wv[i];
  }
  const int n = 6 * static_cast<int>(cp_indices_.size());
  J.block<9, 3>(0, n) = P.d_bias_gyro;
  J.block<9, 3>(0, n + 3) = P.d_bias_accel;
  J = sqrt_info_ * J;
}

// ---------------------------------------------------------------------------

PoseFactor::PoseFactor(Trajectory& traj, double t, Pose measured, double sigma_rotation, double sigma_position)
    : traj_(&traj), measured_(std::move(measured)), w_rot_(1.0 / sigma_rotation), w_pos_(1.0 / sigma_position) {
  const SegmentLocation loc = traj.locate(t);
  segment_ = loc.index;
  u_ = loc.u;
  blocks_ = control_point_blocks(traj, {segment_, segment_ + 1, segment_ + 2, segment_ + 3});
}

void PoseFactor::evaluate(VecX& residual, MatX* jacobian) const {
  const SplineSample s = traj_->sample_segment(segment_, u_, jacobian != nullptr);
  const Vec3 rot = so3::log(measured_.R.transpose() * s.R);
  residual.resize(6);
  residual.head<3>() = w_rot_ * rot;
  residual.tail<3>() = w_pos_ * (s.p - measured_.p);
  if (!jacobian) return;
  MatX& J = *jacobian;
  J.setZero(6, 24);
  const Mat3 Jinv = so3::right_jacobian_inverse(rot);
  for (int k = 0; k < 4; ++k) {
    J.block<3, 3>(0, 6 * k) = w_rot_ * Jinv * s.dR[k];
    J.block<3, 3>(3, 6 * k + 3) = w_pos_ * s.wp[k] * Mat3::Identity();
  }
}

VelocityFactor::VelocityFactor(Trajectory& traj, double t, Vec3 measured, double sigma)
    : traj_(&traj), measured_(measured), weight_(1.0 / sigma) {
  const SegmentLocation loc = traj.locate(t);
  segment_ = loc.index;
  u_ = loc.u;
  blocks_ = control_point_blocks(traj, {segment_, segment_ + 1, segment_ + 2, segment_ + 3});
}

void VelocityFactor::evaluate(VecX& residual, MatX* jacobian) const {
  const SplineSample s = traj_->sample_segment(segment_, u_, false);
  residual = weight_ * (s.v - measured_);
  if (!jacobian) return;
  MatX& J = *jacobian;
  J.setZero(3, 24);
  for (int k = 0; k < 4; ++k) J.block<3, 3>(0, 6 * k + 3) = weight_ * s.wv[k] * Mat3::Identity();
}

}  // namespace ctvio
