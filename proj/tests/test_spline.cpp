#include <doctest.h>

#include "ctvio/lie.hpp"
#include "ctvio/spline.hpp"
#include "test_util.hpp"

using namespace ctvio;
using ctvio::testing::random_trajectory;
using ctvio::testing::random_vec;
using ctvio::testing::relative_error;
using ctvio::testing::uniform;

namespace {

Trajectory constant_trajectory(int count, const Rotation& R, const Vec3& p, double dt = 0.1) {
  Trajectory traj(KnotGrid{0.0, dt});
  for (int k = 0; k < count; ++k) traj.push_back({R, p});
  return traj;
}

}  // namespace

TEST_CASE("cumulative blending matrix") {
  const Mat4& M = cumulative_blending_matrix();
  Mat4 expected;
  expected << 6, 0, 0, 0,
              5, 3, -3, 1,
              1, 3, 3, -2,
              0, 0, 0, 1;
  CHECK((M - expected / 6.0).norm() < 1e-15);
  for (double u : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    const Blending b = cumulative_blending(u);
    CHECK(b.value[0] == 1.0);
    CHECK(b.d1[0] == 0.0);
    // Differences of cumulative values are the plain basis weights, which
    // must be a partition of unity and nonnegative.
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double w = b.value[k] - (k < 3 ? b.value[k + 1] : 0.0);
      CHECK(w >= -1e-15);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("blending derivatives match finite differences") {
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const double u = uniform(0.01, 0.99);
    const Blending b = cumulative_blending(u);
    const Vec4 fd1 = (cumulative_blending(u + h).value - cumulative_blending(u - h).value) / (2 * h);
    const Vec4 fd2 = (cumulative_blending(u + h).d1 - cumulative_blending(u - h).d1) / (2 * h);
    CHECK(relative_error(b.d1, fd1) < 1e-7);
    CHECK(relative_error(b.d2, fd2) < 1e-7);
  }
}

TEST_CASE("blending continuity across segments") {
  // zeta(1) on segment i equals zeta(0) on segment i+1 after shifting the
  // index: the plain weights at u=1 of (p_i..p_i+3) equal those at u=0 of
  // (p_i+1..p_i+4).
  const Blending end = cumulative_blending(1.0);
  const Blending start = cumulative_blending(0.0);
  auto weights = [](const Vec4& z) {
    Vec4 w;
    for (int k = 0; k < 4; ++k) w[k] = z[k] - (k < 3 ? z[k + 1] : 0.0);
    return w;
  };
  const Vec4 w_end = weights(end.value);
  const Vec4 w_start = weights(start.value);
  CHECK(std::abs(w_end[0]) < 1e-15);
  for (int k = 1; k < 4; ++k) CHECK(w_end[k] == doctest::Approx(w_start[k - 1]).epsilon(1e-14));
  CHECK(w_start[3] == doctest::Approx(0.0));
}

TEST_CASE("locate") {
  const Trajectory traj = constant_trajectory(10, Mat3::Identity(), Vec3::Zero(), 0.1);
  auto loc = traj.locate(0.25);
  CHECK(loc.index == 2);
  CHECK(loc.u == doctest::Approx(0.5).epsilon(1e-12));
  loc = traj.locate(0.0);
  CHECK(loc.index == 0);
  CHECK(loc.u == 0.0);
  loc = traj.locate(3.9999 * 0.1);
  CHECK(loc.index == 3);
  CHECK(std::abs(loc.u - 0.9999) < 1e-9);
  // Right end of the domain is u = 1 of the last segment.
  loc = traj.locate(traj.t_max());
  CHECK(loc.index == 6);
  CHECK(loc.u == doctest::Approx(1.0));
  CHECK_THROWS_AS(traj.locate(-0.01), DomainError);
  CHECK_THROWS_AS(traj.locate(traj.t_max() + 0.01), DomainError);
  try {
    traj.locate(5.0);
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("[0, 0.7]") != std::string::npos);
  }
}

TEST_CASE("constant control points give a constant pose") {
  const Rotation R = ctvio::testing::random_rotation();
  const Vec3 p(1, 2, 3);
  const Trajectory traj = constant_trajectory(8, R, p);
  for (int i = 0; i < 20; ++i) {
    const double t = uniform(traj.t_min(), traj.t_max());
    const SplineSample s = traj.sample(t);
    CHECK((s.R - R).norm() < 1e-12);
    CHECK((s.p - p).norm() < 1e-12);
    CHECK(s.omega.norm() < 1e-12);
    CHECK(s.v.norm() < 1e-12);
    CHECK(s.a.norm() < 1e-12);
    CHECK(traj.rotation_time_derivative(t).norm() < 1e-12);
  }
}

TEST_CASE("equally spaced positions reproduce a straight line") {
  const double dt = 0.05;
  Trajectory traj(KnotGrid{1.0, dt});
  const Vec3 p0(0.5, -1, 2), d(0.1, 0.02, -0.03);
  for (int k = 0; k < 10; ++k) traj.push_back({Mat3::Identity(), p0 + k * d});
  for (int i = 0; i < 50; ++i) {
    const double t = uniform(traj.t_min(), traj.t_max());
    const auto [v, a] = traj.world_velocity_acceleration(t);
    CHECK((v - d / dt).norm() < 1e-9);
    CHECK(a.norm() < 1e-9);
    // Nominal control point time is t0 + (k - 1) dt.
    CHECK((traj.pose(t).p - (p0 + ((t - 1.0) / dt + 1.0) * d)).norm() < 1e-12);
  }
}

TEST_CASE("rotations about a fixed axis reproduce the closed form") {
  const double dt = 0.03;
  const Vec3 omega(0.3, -1.2, 0.7);
  Trajectory traj(KnotGrid{2.0, dt});
  // Control point k sits at nominal time t0 + (k - 1) dt.
  for (int k = 0; k < 12; ++k) traj.push_back({so3::exp((k - 1) * dt * omega), Vec3::Zero()});
  for (int i = 0; i < 100; ++i) {
    const double t = uniform(traj.t_min(), traj.t_max());
    const SplineSample s = traj.sample(t);
    CHECK((s.R - so3::exp(omega * (t - 2.0))).norm() < 1e-9);
    CHECK((s.omega - omega).norm() < 1e-8);
  }
}

TEST_CASE("C2 continuity at knots") {
  const Trajectory traj = random_trajectory(12, 0.1, 0.0, 0.05, 0.02);
  for (int i = 1; i < 9; ++i) {
    const SplineSample end = traj.sample_segment(i - 1, 1.0);
    const SplineSample begin = traj.sample_segment(i, 0.0);
    CHECK((end.R - begin.R).norm() < 1e-12);
    CHECK((end.p - begin.p).norm() < 1e-12);
    CHECK((end.v - begin.v).norm() < 1e-12);
    CHECK((end.a - begin.a).norm() < 1e-10);
    CHECK((end.omega - begin.omega).norm() < 1e-12);

    const double tk = traj.knot_time(i);
    const double eps = 1e-9 * traj.grid().dt;
    const SplineSample left = traj.sample_segment(i - 1, 1.0 - eps / traj.grid().dt);
    const SplineSample right = traj.sample(tk + eps);
    CHECK((left.R - right.R).norm() < 1e-8);
    CHECK((left.p - right.p).norm() < 1e-8);
    CHECK((left.v - right.v).norm() < 1e-8);
    CHECK((left.a - right.a).norm() < 1e-8);
    CHECK((left.omega - right.omega).norm() < 1e-8);
  }
}

TEST_CASE("analytic time derivatives match finite differences") {
  const Trajectory traj = random_trajectory(15, 0.1);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 200) {
    const double t = uniform(traj.t_min() + 2 * h, traj.t_max() - 2 * h);
    const SplineSample s = traj.sample(t);
    const SplineSample sp = traj.sample(t + h);
    const SplineSample sm = traj.sample(t - h);
    const Vec3 omega_fd = so3::log(sm.R.transpose() * sp.R) / (2 * h);
    const Vec3 v_fd = (sp.p - sm.p) / (2 * h);
    const Vec3 a_fd = (sp.v - sm.v) / (2 * h);
    const Mat3 Rdot_fd = (sp.R - sm.R) / (2 * h);
    CHECK(relative_error(s.omega, omega_fd) < 1e-4);
    CHECK(relative_error(s.v, v_fd) < 1e-4);
    CHECK(relative_error(s.a, a_fd) < 1e-4);
    CHECK((s.Rdot() - Rdot_fd).cwiseAbs().maxCoeff() < 1e-4);
    const Mat3 RtRdot = s.R.transpose() * s.Rdot();
    CHECK((RtRdot + RtRdot.transpose()).norm() < 1e-9);
    ++checked;
  }
}

TEST_CASE("control point jacobians match finite differences") {
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    Trajectory traj = random_trajectory(8, 0.1);
    const double t = uniform(traj.t_min(), traj.t_max());
    const SplineSample s = traj.sample(t, true);
    for (int k = 0; k < 4; ++k) {
      ControlPoint& cp = traj.control_point(s.segment + k);
      const ControlPoint saved = cp;
      Mat3 dR_fd, dW_fd, dp_fd, dv_fd, da_fd;
      for (int c = 0; c < 3; ++c) {
        const Vec3 e = Vec3::Unit(c) * h;
        cp.R = saved.R * so3::exp(e);
        const SplineSample plus = traj.sample_segment(s.segment, s.u);
        cp.R = saved.R * so3::exp(-e);
        const SplineSample minus = traj.sample_segment(s.segment, s.u);
        cp.R = saved.R;
        dR_fd.col(c) = so3::log(minus.R.transpose() * plus.R) / (2 * h);
        dW_fd.col(c) = (plus.omega - minus.omega) / (2 * h);

        cp.p = saved.p + e;
        const SplineSample pp = traj.sample_segment(s.segment, s.u);
        cp.p = saved.p - e;
        const SplineSample pm = traj.sample_segment(s.segment, s.u);
        cp.p = saved.p;
        dp_fd.col(c) = (pp.p - pm.p) / (2 * h);
        dv_fd.col(c) = (pp.v - pm.v) / (2 * h);
        da_fd.col(c) = (pp.a - pm.a) / (2 * h);
      }
      CHECK(relative_error(s.dR[k], dR_fd, 1e-3) < 1e-5);
      CHECK(relative_error(s.domega[k], dW_fd, 1e-3) < 1e-5);
      CHECK(relative_error(s.wp[k] * Mat3::Identity(), dp_fd, 1e-3) < 1e-5);
      CHECK(relative_error(s.wv[k] * Mat3::Identity(), dv_fd, 1e-3) < 1e-5);
      CHECK(relative_error(s.wa[k] * Mat3::Identity(), da_fd, 1e-1) < 1e-5);
    }
  }
}

TEST_CASE("evaluation only depends on the segment's four control points") {
  Trajectory traj = random_trajectory(10, 0.1);
  const double t = traj.knot_time(3) + 0.04;
  const SplineSample before = traj.sample(t);
  for (int k : {0, 1, 2, 7, 8, 9}) {
    traj.control_point(k).R = traj.control_point(k).R * so3::exp(Vec3(0.1, 0.2, 0.3));
    traj.control_point(k).p += Vec3(1, 1, 1);
  }
  const SplineSample after = traj.sample(t);
  CHECK(before.R == after.R);
  CHECK(before.p == after.p);
  CHECK(before.omega == after.omega);
  CHECK(before.v == after.v);
}

TEST_CASE("active span") {
  const Trajectory traj = constant_trajectory(12, Mat3::Identity(), Vec3::Zero(), 0.1);
  const double mid2 = traj.knot_time(2) + 0.03;
  CHECK(traj.active_span(mid2, mid2) == ControlPointSpan{2, 5});
  CHECK(traj.active_span(traj.knot_time(1), traj.knot_time(3)) == ControlPointSpan{1, 6});
  // Union of per-instant supports.
  for (int trial = 0; trial < 100; ++trial) {
    double ta = uniform(traj.t_min(), traj.t_max());
    double tb = uniform(traj.t_min(), traj.t_max());
    if (ta > tb) std::swap(ta, tb);
    int lo = 1 << 20, hi = -1;
    for (int i = 0; i <= 200; ++i) {
      const double t = ta + (tb - ta) * i / 200.0;
      const int seg = traj.locate(t).index;
      lo = std::min(lo, seg);
      hi = std::max(hi, seg + 3);
    }
    CHECK(traj.active_span(ta, tb) == ControlPointSpan{lo, hi});
  }
  CHECK_THROWS_AS(traj.active_span(0.0, 5.0), DomainError);
}

TEST_CASE("extend with prediction") {
  const Vec3 g = default_gravity();
  SUBCASE("static IMU keeps the last pose") {
    const Rotation R = so3::exp(Vec3(0.1, -0.2, 0.3));
    const Vec3 p(1, 2, 3);
    Trajectory traj = constant_trajectory(4, R, p, 0.03);
    std::vector<ImuSample> imu;
    for (int i = 0; i <= 100; ++i) imu.push_back({i / 90.0, Vec3::Zero(), R.transpose() * g});
    extend_with_prediction(traj, 0.5, imu, BiasPair{}, g);
    CHECK(traj.covers(0.5));
    for (std::size_t k = 4; k < traj.size(); ++k) {
      CHECK((traj.control_point(k).R - R).norm() < 1e-12);
      CHECK((traj.control_point(k).p - p).norm() < 1e-12);
    }
  }
  SUBCASE("already covered is a no-op") {
    Trajectory traj = constant_trajectory(6, Mat3::Identity(), Vec3::Zero(), 0.03);
    extend_with_prediction(traj, 0.02, {}, BiasPair{}, g);
    CHECK(traj.size() == 6);
  }
  SUBCASE("missing IMU coverage names the interval") {
    Trajectory traj = constant_trajectory(4, Mat3::Identity(), Vec3::Zero(), 0.03);
    std::vector<ImuSample> imu{{0.0, Vec3::Zero(), g}, {0.05, Vec3::Zero(), g}};
    CHECK_THROWS_WITH_AS(extend_with_prediction(traj, 0.2, imu, BiasPair{}, g),
                         doctest::Contains("missing interval"), DomainError);
  }
}
