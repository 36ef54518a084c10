#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "ctvio/factors.hpp"
#include "ctvio/lie.hpp"
#include "ctvio/preintegration.hpp"
#include "test_util.hpp"

using namespace ctvio;
using namespace ctvio::testing;

namespace {

std::vector<ImuSample> constant_stream(const Vec3& gyro, const Vec3& accel, double duration, int n) {
  std::vector<ImuSample> out;
  for (int i = 0; i <= n; ++i) out.push_back({duration * i / n, gyro, accel});
  return out;
}

// Body spinning about its z axis with a body-z specific force, so that the
// world acceleration R(t) f - g stays constant and the midpoint rule is exact.
struct ScrewMotion {
  Rotation R0;
  Vec3 p0, v0;
  double rate, force;

  KinematicState at(double t) const {
    const Vec3 a = R0 * Vec3(0, 0, force) - default_gravity();
    return {R0 * so3::exp(Vec3(0, 0, rate * t)), p0 + v0 * t + 0.5 * a * t * t, v0 + a * t};
  }
};

}  // namespace

TEST_CASE("static stream is consistent with static states") {
  const auto samples = constant_stream(Vec3::Zero(), Vec3(0, 0, 9.8), 0.1, 9);
  const Preintegration pre = preintegrate(samples, {}, ImuNoiseModel{});
  const KinematicState s{Rotation::Identity(), Vec3(1, 2, 3), Vec3::Zero()};
  CHECK(preintegration_residual(s, s, pre, default_gravity()).norm() < 1e-9);
  CHECK((pre.covariance - pre.covariance.transpose()).norm() == 0.0);
  CHECK(pre.covariance.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff() >= -1e-18);
}

TEST_CASE("constant acceleration closed form") {
  const double a = 0.7, T = 0.2;
  const auto samples = constant_stream(Vec3::Zero(), Vec3(a, 0, 9.8), T, 18);
  const Preintegration pre = preintegrate(samples, {}, ImuNoiseModel{});
  CHECK((pre.alpha - Vec3(0.5 * a * T * T, 0, 9.8 * 0.5 * T * T)).norm() < 1e-6);
  CHECK((pre.beta - Vec3(a * T, 0, 9.8 * T)).norm() < 1e-6);
  CHECK(pre.duration == doctest::Approx(T));
}

TEST_CASE("ground-truth states satisfy an exact preintegration") {
  for (int trial = 0; trial < 20; ++trial) {
    const ScrewMotion m{random_rotation(), random_vec(5.0), random_vec(1.0), uniform(-2.0, 2.0), uniform(5.0, 15.0)};
    const double T = uniform(0.03, 0.3);
    const auto samples = constant_stream(Vec3(0, 0, m.rate), Vec3(0, 0, m.force), T, 27);
    const Preintegration pre = preintegrate(samples, {}, ImuNoiseModel{});
    CHECK(preintegration_residual(m.at(0.0), m.at(T), pre, default_gravity()).norm() < 1e-8);
  }
}

TEST_CASE("midpoint rule converges at second order") {
  auto stream = [](int n) {
    std::vector<ImuSample> out;
    for (int i = 0; i <= n; ++i) {
      const double t = 0.3 * i / n;
      out.push_back({t, Vec3(std::sin(3 * t), 0.5, std::cos(2 * t)), Vec3(std::cos(5 * t), 1.0, 9.8 + t)});
    }
    return out;
  };
  const Preintegration p1 = preintegrate(stream(10), {}, ImuNoiseModel{});
  const Preintegration p2 = preintegrate(stream(20), {}, ImuNoiseModel{});
  const Preintegration p4 = preintegrate(stream(40), {}, ImuNoiseModel{});
  const double d1 = (p1.alpha - p2.alpha).norm() + (p1.beta - p2.beta).norm();
  const double d2 = (p2.alpha - p4.alpha).norm() + (p2.beta - p4.beta).norm();
  CHECK(d1 / d2 > 3.0);
  CHECK(d1 / d2 < 5.0);
}

TEST_CASE("degenerate intervals are rejected") {
  CHECK_THROWS_AS(preintegrate({}, {}, ImuNoiseModel{}), std::invalid_argument);
  CHECK_THROWS_AS(preintegrate({ImuSample{0.1}}, {}, ImuNoiseModel{}), std::invalid_argument);
  CHECK_THROWS_AS(preintegrate({ImuSample{0.1}, ImuSample{0.1}}, {}, ImuNoiseModel{}), std::invalid_argument);
}

TEST_CASE("bias Jacobians predict re-integration") {
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ImuSample> samples;
    for (int i = 0; i <= 9; ++i) samples.push_back({0.011 * i, random_vec(1.0), random_vec(10.0)});
    const BiasPair b0{random_vec(0.01), random_vec(0.1)};
    const Preintegration pre = preintegrate(samples, b0, ImuNoiseModel{});
    const BiasPair b1{b0.gyro + random_vec(1e-4), b0.accel + random_vec(1e-3)};
    const Preintegration exact = preintegrate(samples, b1, ImuNoiseModel{});
    const double da = (pre.alpha - exact.alpha).norm();
    CHECK((pre.corrected_alpha(b1) - exact.alpha).norm() < 0.02 * std::max(da, 1e-12));
    CHECK((pre.corrected_beta(b1) - exact.beta).norm() < 0.02 * (pre.beta - exact.beta).norm());
    CHECK(so3::log(pre.corrected_rotation(b1).transpose() * exact.delta_R).norm() <
          0.02 * so3::log(pre.delta_R.transpose() * exact.delta_R).norm());
  }
}

TEST_CASE("covariance propagation matches a Monte Carlo estimate") {
  ImuNoiseModel noise;
  std::vector<ImuSample> clean;
  for (int i = 0; i <= 18; ++i) {
    const double t = i / noise.rate;
    clean.push_back({t, Vec3(0.3, -0.2, 0.5), Vec3(0.5, 0.1, 9.8)});
  }
  const Preintegration nominal = preintegrate(clean, {}, noise);
  std::normal_distribution<double> n01;
  Mat9 cov = Mat9::Zero();
  const int runs = 4000;
  for (int r = 0; r < runs; ++r) {
    // Per-step averages of white noise: one draw per interval, applied to
    // both ends so the midpoint averages see exactly that draw.
    std::vector<Vec3> ng(clean.size()), na(clean.size());
    for (std::size_t i = 0; i + 1 < clean.size(); ++i) {
      const double h = clean[i + 1].t - clean[i].t;
      for (int k = 0; k < 3; ++k) {
        ng[i][k] = noise.gyro_noise_density / std::sqrt(h) * n01(rng());
        na[i][k] = noise.accel_noise_density / std::sqrt(h) * n01(rng());
      }
    }
    // Integrate step by step with the per-step noise.
    Rotation R = Rotation::Identity();
    Vec3 alpha = Vec3::Zero(), beta = Vec3::Zero();
    for (std::size_t i = 0; i + 1 < clean.size(); ++i) {
      const double h = clean[i + 1].t - clean[i].t;
      const Vec3 w = 0.5 * (clean[i].gyro + clean[i + 1].gyro) + ng[i];
      const Rotation R1 = R * so3::exp(w * h);
      const Vec3 acc = 0.5 * (R * (clean[i].accel + na[i]) + R1 * (clean[i + 1].accel + na[i]));
      alpha += beta * h + 0.5 * acc * h * h;
      beta += acc * h;
      R = R1;
    }
    Vec9 e;
    e << alpha - nominal.alpha, so3::log(nominal.delta_R.transpose() * R), beta - nominal.beta;
    cov += e * e.transpose() / runs;
  }
  CHECK(relative_error(cov, nominal.covariance) < 0.1);
}

TEST_CASE("preintegration residual Jacobians match finite differences") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ImuSample> samples;
    for (int i = 0; i <= 6; ++i) samples.push_back({0.011 * i, random_vec(1.0), random_vec(10.0)});
    const Preintegration pre = preintegrate(samples, {random_vec(0.01), random_vec(0.1)}, ImuNoiseModel{});
    const KinematicState k{random_rotation(), random_vec(2.0), random_vec(1.0)};
    const KinematicState k1{random_rotation(), random_vec(2.0), random_vec(1.0)};
    const BiasPair b{pre.linearization_bias.gyro + random_vec(0.01), pre.linearization_bias.accel + random_vec(0.1)};
    const PreintegrationJacobians J = preintegration_jacobians(k, k1, pre, default_gravity(), b);

    // 24-vector x = [dtheta_k dp_k dv_k dtheta_k1 dp_k1 dv_k1 dbg dba] on top of the states.
    auto f = [&](const VecX& x) -> VecX {
      KinematicState a = k, c = k1;
      a.R = k.R * so3::exp(x.segment<3>(0));
      a.p += x.segment<3>(3);
      a.v += x.segment<3>(6);
      c.R = k1.R * so3::exp(x.segment<3>(9));
      c.p += x.segment<3>(12);
      c.v += x.segment<3>(15);
      const BiasPair bb{b.gyro + x.segment<3>(18), b.accel + x.segment<3>(21)};
      return preintegration_residual(a, c, pre, default_gravity(), bb);
    };
    MatX analytic(9, 24);
    analytic << J.d_R_k, J.d_p_k, J.d_v_k, J.d_R_k1, J.d_p_k1, J.d_v_k1, J.d_bias_gyro, J.d_bias_accel;
    worst = std::max(worst, relative_error(analytic, numeric_jacobian(f, VecX::Zero(24), 1e-6)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("preintegration residual is invariant to a rigid change of world frame") {
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ImuSample> samples;
    for (int i = 0; i <= 6; ++i) samples.push_back({0.011 * i, random_vec(1.0), random_vec(10.0)});
    const Preintegration pre = preintegrate(samples, {}, ImuNoiseModel{});
    const KinematicState k{random_rotation(), random_vec(2.0), random_vec(1.0)};
    const KinematicState k1{random_rotation(), random_vec(2.0), random_vec(1.0)};
    const Rotation Rg = random_rotation();
    const Vec3 tg = random_vec(10.0);
    auto move = [&](const KinematicState& s) { return KinematicState{Rg * s.R, Rg * s.p + tg, Rg * s.v}; };
    const Vec9 r0 = preintegration_residual(k, k1, pre, default_gravity());
    const Vec9 r1 = preintegration_residual(move(k), move(k1), pre, Rg * default_gravity());
    CHECK((r0 - r1).norm() < 1e-9 * std::max(1.0, r0.norm()));
  }
}

TEST_CASE("preintegration factor Jacobians match finite differences") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Trajectory traj = random_trajectory(10, 0.03, 0.0, 0.1, 0.05);
    const double t0 = uniform(0.0, 0.1);
    const double t1 = uniform(t0 + 0.02, traj.t_max());
    std::vector<ImuSample> samples;
    const int n = 8;
    for (int i = 0; i <= n; ++i) samples.push_back({t0 + (t1 - t0) * i / n, random_vec(1.0), random_vec(10.0)});
    const Preintegration pre = preintegrate(samples, {random_vec(0.01), random_vec(0.1)}, ImuNoiseModel{});
    Vec3 bg = pre.linearization_bias.gyro + random_vec(0.01);
    Vec3 ba = pre.linearization_bias.accel + random_vec(0.1);
    const PreintegrationFactor f(traj, t0, t1, pre, bg.data(), ba.data());
    worst = std::max(worst, factor_jacobian_error(f));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("IMU interval extraction interpolates the ends") {
  std::vector<ImuSample> stream;
  for (int i = 0; i < 20; ++i) stream.push_back({i * 0.01, Vec3::Constant(i), Vec3::Constant(-i)});
  const auto part = imu_interval(stream, 0.035, 0.08);
  REQUIRE(part.size() == 6);
  CHECK(part.front().t == 0.035);
  CHECK(part.front().gyro.x() == doctest::Approx(3.5));
  CHECK(part.back().t == 0.08);
  CHECK_THROWS_AS(imu_interval(stream, 0.1, 0.3), DomainError);
}
