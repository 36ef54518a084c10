#include "ctvio/spline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctvio/lie.hpp"

namespace ctvio {

namespace {

Mat4 make_cumulative_matrix() {
  // Uniform cubic B-spline basis, row k = weight of control point k as a
  // polynomial in u (columns 1, u, u^2, u^3).
  Mat4 basis;
  basis << 1.0, -3.0, 3.0, -1.0,
           4.0, 0.0, -6.0, 3.0,
           1.0, 3.0, 3.0, -3.0,
           0.0, 0.0, 0.0, 1.0;
  Mat4 cumulative = Mat4::Zero();
  for (int j = 0; j < 4; ++j) {
    for (int k = j; k < 4; ++k) cumulative.row(j) += basis.row(k);
  }
  return cumulative / 6.0;
}

constexpr double kEndTolerance = 1e-9;

}  // namespace

const Mat4& cumulative_blending_matrix() {
  static const Mat4 m = make_cumulative_matrix();
  return m;
}

Blending cumulative_blending(double u) {
  const Mat4& M = cumulative_blending_matrix();
  const Vec4 powers(1.0, u, u * u, u * u * u);
  const Vec4 d1(0.0, 1.0, 2.0 * u, 3.0 * u * u);
  const Vec4 d2(0.0, 0.0, 2.0, 6.0 * u);
  return {M * powers, M * d1, M * d2};
}

Mat3 SplineSample::Rdot() const { return R * so3::skew(omega); }

SplineSample evaluate_segment(const std::array<const ControlPoint*, 4>& cps, double u, double dt,
                              bool with_jacobians) {
  SplineSample s;
  s.u = u;
  const Blending b = cumulative_blending(u);
  const Vec4 zeta = b.value;
  const Vec4 zeta_dot = b.d1 / dt;
  const Vec4 zeta_ddot = b.d2 / (dt * dt);

  std::array<Vec3, 4> d;      // d[j] = Log(R_{j-1}^T R_j), j = 1..3
  std::array<Mat3, 4> X;      // X[j] = R_{j-1}^T R_j
  std::array<Mat3, 4> A;      // A[j] = Exp(zeta_j d_j)
  std::array<Vec3, 4> omega;  // omega after factor j
  omega[0].setZero();

  Rotation R = cps[0]->R;
  Vec3 p = cps[0]->p;
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
  for (int j = 1; j < 4; ++j) {
    X[j] = cps[j - 1]->R.transpose() * cps[j]->R;
    d[j] = so3::log(X[j]);
    A[j] = so3::exp(zeta[j] * d[j]);
    R = R * A[j];
    omega[j] = A[j].transpose() * omega[j - 1] + zeta_dot[j] * d[j];
    const Vec3 dp = cps[j]->p - cps[j - 1]->p;
    p += zeta[j] * dp;
    v += zeta_dot[j] * dp;
    a += zeta_ddot[j] * dp;
  }
  s.R = R;
  s.p = p;
  s.v = v;
  s.a = a;
  s.omega = omega[3];

  for (int k = 0; k < 4; ++k) {
    const bool has_next = k < 3;
    s.wp[k] = zeta[k] - (has_next ? zeta[k + 1] : 0.0);
    s.wv[k] = zeta_dot[k] - (has_next ? zeta_dot[k + 1] : 0.0);
    s.wa[k] = zeta_ddot[k] - (has_next ? zeta_ddot[k + 1] : 0.0);
  }

  if (!with_jacobians) return s;

  // P[j] = A_{j+1} ... A_3, so R = R_0 A_1 ... A_j P[j].
  std::array<Mat3, 4> P;
  P[3].setIdentity();
  for (int j = 2; j >= 0; --j) P[j] = A[j + 1] * P[j + 1];

  // Sensitivity of the rotation tangent (G) and of omega (W) to the j-th
  // relative rotation d_j, then chained to the control point perturbations.
  std::array<Mat3, 4> G, W, Jinv;
  for (int j = 1; j < 4; ++j) {
    const Mat3 Jr = so3::right_jacobian(zeta[j] * d[j]);
    G[j] = P[j].transpose() * zeta[j] * Jr;
    W[j] = P[j].transpose() *
           (so3::skew(A[j].transpose() * omega[j - 1]) * zeta[j] * Jr + zeta_dot[j] * Mat3::Identity());
    Jinv[j] = so3::right_jacobian_inverse(d[j]);
  }
  for (int k = 0; k < 4; ++k) {
    Mat3 dR = k == 0 ? P[0].transpose() : Mat3::Zero().eval();
    Mat3 dW = Mat3::Zero();
    if (k >= 1) {
      dR += G[k] * Jinv[k];
      dW += W[k] * Jinv[k];
    }
    if (k <= 2) {
      const Mat3 lead = Jinv[k + 1] * X[k + 1].transpose();
      dR -= G[k + 1] * lead;
      dW -= W[k + 1] * lead;
    }
    s.dR[k] = dR;
    s.domega[k] = dW;
  }
  return s;
}

Trajectory::Trajectory(KnotGrid grid, Pose extrinsic) : grid_(grid), extrinsic_(extrinsic) {
  if (!(grid_.dt > 0.0)) throw std::invalid_argument("knot interval must be positive");
}

double Trajectory::t_max() const {
  return grid_.t0 + (static_cast<double>(cps_.size()) - 3.0) * grid_.dt;
}

bool Trajectory::covers(double t) const {
  if (cps_.size() < 4) return false;
  const double s = (t - grid_.t0) / grid_.dt;
  return s >= -kEndTolerance && s <= static_cast<double>(cps_.size()) - 3.0 + kEndTolerance;
}

SegmentLocation Trajectory::locate(double t) const {
  if (!covers(t)) {
    std::ostringstream os;
    os.precision(12);
    if (cps_.size() < 4) {
      os << "trajectory has " << cps_.size() << " control points, at least 4 are needed";
    } else {
      os << "time " << t << " outside trajectory domain [" << t_min() << ", " << t_max() << "]";
    }
    throw DomainError(os.str());
  }
  const double s = std::max((t - grid_.t0) / grid_.dt, 0.0);
  const int last_segment = static_cast<int>(cps_.size()) - 4;
  int i = static_cast<int>(std::floor(s));
  if (i > last_segment) i = last_segment;
  const double u = std::min(s - i, 1.0);
  return {i, u};
}

SplineSample Trajectory::sample_segment(int segment, double u, bool with_jacobians) const {
  if (segment < 0 || segment + 3 >= static_cast<int>(cps_.size())) {
    throw DomainError("segment " + std::to_string(segment) + " has no full control point support");
  }
  const std::array<const ControlPoint*, 4> cps{&cps_[segment], &cps_[segment + 1], &cps_[segment + 2],
                                               &cps_[segment + 3]};
  SplineSample s = evaluate_segment(cps, u, grid_.dt, with_jacobians);
  s.segment = segment;
  return s;
}

SplineSample Trajectory::sample(double t, bool with_jacobians) const {
  const SegmentLocation loc = locate(t);
  return sample_segment(loc.index, loc.u, with_jacobians);
}

Pose Trajectory::pose(double t) const { return sample(t).pose(); }

Vec3 Trajectory::body_angular_velocity(double t) const { return sample(t).omega; }

std::pair<Vec3, Vec3> Trajectory::world_velocity_acceleration(double t) const {
  const SplineSample s = sample(t);
  return {s.v, s.a};
}

Mat3 Trajectory::rotation_time_derivative(double t) const { return sample(t).Rdot(); }

ControlPointSpan Trajectory::active_span(double ta, double tb) const {
  if (tb < ta) std::swap(ta, tb);
  const SegmentLocation a = locate(ta);
  const SegmentLocation b = locate(tb);
  return {a.index, b.index + 3};
}

void extend_with_prediction(Trajectory& traj, double t_end, const std::vector<ImuSample>& imu,
                            const BiasPair& bias, const Vec3& gravity) {
  if (traj.covers(t_end)) return;
  if (traj.size() < 4) throw DomainError("extend_with_prediction: trajectory has fewer than 4 control points");
  const double t_start = traj.t_max();
  if (imu.empty() || imu.back().t < t_end) {
    std::ostringstream os;
    os.precision(12);
    os << "insufficient IMU coverage: need samples up to " << t_end << ", stream ends at "
       << (imu.empty() ? t_start : imu.back().t) << " (missing interval ["
       << (imu.empty() ? t_start : imu.back().t) << ", " << t_end << "])";
    throw DomainError(os.str());
  }

  const SplineSample start = traj.sample(t_start);
  Rotation R = start.R;
  Vec3 p = start.p;
  Vec3 v = start.v;
  double t = t_start;

  auto it = std::upper_bound(imu.begin(), imu.end(), t,
                             [](double value, const ImuSample& s) { return value < s.t; });
  const KnotGrid& grid = traj.grid();
  while (!traj.covers(t_end)) {
    const double target = grid.t0 + (static_cast<double>(traj.size()) - 1.0) * grid.dt;
    while (t < target) {
      const double t_next = (it != imu.end() && it->t < target) ? it->t : target;
      const double h = t_next - t;
      if (h > 0.0) {
        const ImuSample m0 = interpolate_imu(imu, t);
        const ImuSample m1 = interpolate_imu(imu, t_next);
        const Vec3 gyro = 0.5 * (m0.gyro + m1.gyro) - bias.gyro;
        const Rotation R_next = R * so3::exp(gyro * h);
        const Vec3 acc0 = R * (m0.accel - bias.accel) - gravity;
        const Vec3 acc1 = R_next * (m1.accel - bias.accel) - gravity;
        const Vec3 acc = 0.5 * (acc0 + acc1);
        p += v * h + 0.5 * acc * h * h;
        v += acc * h;
        R = R_next;
      }
      t = t_next;
      if (it != imu.end() && it->t <= t) ++it;
    }
    traj.push_back({so3::normalize(R), p});
  }
}

}  // namespace ctvio
