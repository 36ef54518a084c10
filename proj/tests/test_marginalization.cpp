#include <doctest.h>

#include <set>

#include "ctvio/marginalization.hpp"
#include "ctvio/solver.hpp"
#include "test_util.hpp"

using namespace ctvio;
using namespace ctvio::testing;

namespace {

MatX information_of(const PriorFactor& prior) { return prior.sqrt_info().transpose() * prior.sqrt_info(); }

// Random linear-Gaussian problem over scalar-or-3D Euclidean blocks.
struct GaussianProblem {
  std::vector<VecX> values;  // storage, one per block
  std::vector<BlockKind> kinds;
  std::vector<FactorPtr> factors;
  MatX A;
  VecX b;
  std::vector<int> offsets;
  int dim = 0;
};

GaussianProblem random_gaussian_problem(int blocks, int factors) {
  GaussianProblem p;
  for (int i = 0; i < blocks; ++i) {
    const BlockKind kind = i % 3 == 0 ? BlockKind::kInverseDepth : BlockKind::kPosition;
    p.kinds.push_back(kind);
    p.values.push_back(VecX::Random(tangent_dim(kind)));
    p.offsets.push_back(p.dim);
    p.dim += tangent_dim(kind);
  }
  p.A.setZero(0, p.dim);
  auto add = [&](std::vector<int> ids, int rows) {
    std::vector<BlockRef> refs;
    int cols = 0;
    for (int id : ids) {
      refs.push_back({p.values[id].data(), p.kinds[id]});
      cols += tangent_dim(p.kinds[id]);
    }
    const MatX A = MatX::Random(rows, cols);
    const VecX b = VecX::Random(rows);
    p.factors.push_back(std::make_shared<LinearFactor>(refs, A, b));
    MatX Af = MatX::Zero(rows, p.dim);
    int c = 0;
    for (int id : ids) {
      const int n = tangent_dim(p.kinds[id]);
      Af.middleCols(p.offsets[id], n) = A.middleCols(c, n);
      c += n;
    }
    p.A.conservativeResize(p.A.rows() + rows, Eigen::NoChange);
    p.A.bottomRows(rows) = Af;
    p.b.conservativeResize(p.b.size() + rows);
    p.b.tail(rows) = b;
  };
  // A unary anchor per block keeps the full problem well posed.
  for (int i = 0; i < blocks; ++i) add({i}, tangent_dim(p.kinds[i]));
  for (int f = 0; f < factors; ++f) {
    const int i = static_cast<int>(uniform(0, blocks - 1e-9));
    int j = static_cast<int>(uniform(0, blocks - 1e-9));
    if (j == i) j = (i + 1) % blocks;
    add({i, j}, 3);
  }
  return p;
}

// Kept-variable minimizer of the full problem by a dense solve.
VecX dense_minimizer(const GaussianProblem& p) { return p.A.colPivHouseholderQr().solve(p.b); }

}  // namespace

TEST_CASE("chain marginalization matches dense marginal information") {
  Vec3 x0 = random_vec(1.0), x1 = random_vec(1.0), x2 = random_vec(1.0);
  auto ref = [](Vec3& v) { return BlockRef{v.data(), BlockKind::kPosition}; };
  const MatX I3 = MatX::Identity(3, 3);
  MatX D(3, 6);
  D << -I3, I3;
  std::vector<FactorPtr> factors{
      std::make_shared<LinearFactor>(std::vector<BlockRef>{ref(x0)}, I3, VecX::Zero(3)),
      std::make_shared<LinearFactor>(std::vector<BlockRef>{ref(x0), ref(x1)}, D, VecX::Ones(3)),
      std::make_shared<LinearFactor>(std::vector<BlockRef>{ref(x1), ref(x2)}, D, VecX::Ones(3)),
  };
  const auto prior = marginalize_schur(factors, {x0.data()});
  REQUIRE(prior->blocks().size() == 2);

  // Dense: full information, invert, take the marginal covariance, invert back.
  MatX H = MatX::Zero(9, 9);
  H.block(0, 0, 3, 3) += I3;
  const MatX DtD = D.transpose() * D;
  H.block(0, 0, 6, 6) += DtD;
  H.block(3, 3, 6, 6) += DtD;
  const MatX marginal_info = H.inverse().bottomRightCorner(6, 6).inverse();
  CHECK((information_of(*prior) - marginal_info).norm() < 1e-10);
}

TEST_CASE("prior plus remaining factors reproduces the full minimizer") {
  for (int trial = 0; trial < 50; ++trial) {
    GaussianProblem p = random_gaussian_problem(12, 14);  // <= 30 scalar variables
    REQUIRE(p.dim <= 30);
    const VecX full = dense_minimizer(p);

    // Marginalize the first few blocks together with every factor touching them.
    const int n_marg = 4;
    std::set<const double*> marg;
    std::vector<const double*> marg_list;
    for (int i = 0; i < n_marg; ++i) {
      marg.insert(p.values[i].data());
      marg_list.push_back(p.values[i].data());
    }
    std::vector<FactorPtr> sub, rest;
    for (const FactorPtr& f : p.factors) {
      bool touches = false;
      for (const BlockRef& b : f->blocks()) touches |= marg.count(b.data) != 0;
      (touches ? sub : rest).push_back(f);
    }
    const auto prior = marginalize_schur(sub, marg_list);

    Problem reduced;
    for (const FactorPtr& f : rest) reduced.add_factor_and_blocks(f);
    reduced.add_factor_and_blocks(prior);
    for (int i = n_marg; i < 12; ++i) reduced.add_parameter_block(p.values[i].data(), p.kinds[i]);
    SolverOptions opts;
    opts.initial_lambda = 0.0;
    opts.max_iterations = 3;
    opts.inverse_depth_shrink = 0.0;
    solve(reduced, opts);
    for (int i = n_marg; i < 12; ++i) {
      const VecX expected = full.segment(p.offsets[i], tangent_dim(p.kinds[i]));
      CHECK((p.values[i] - expected).norm() <= 1e-9);
    }
  }
}

TEST_CASE("prior structure and reconstruction") {
  GaussianProblem p = random_gaussian_problem(8, 10);
  std::vector<const double*> marg{p.values[0].data(), p.values[1].data()};
  const auto prior = marginalize_schur(p.factors, marg);
  const MatX& S = prior->sqrt_info();
  CHECK(S.triangularView<Eigen::StrictlyLower>().toDenseMatrix().norm() == 0.0);
  for (int i = 0; i < std::min(S.rows(), S.cols()); ++i) CHECK(S(i, i) >= 0.0);

  // Dense Schur complement of the linearized full system.
  ColumnLayout layout;
  for (int i = 0; i < 8; ++i) layout.append({p.values[i].data(), p.kinds[i]});
  const LinearSystem sys = linearize(p.factors, layout);
  const int m = tangent_dim(p.kinds[0]) + tangent_dim(p.kinds[1]);
  const int n = sys.H.rows() - m;
  const MatX Hs = sys.H.bottomRightCorner(n, n) -
                  sys.H.bottomLeftCorner(n, m) * sys.H.topLeftCorner(m, m).inverse() * sys.H.topRightCorner(m, n);
  CHECK((information_of(*prior) - Hs).norm() < 1e-9);

  // At the linearization point the residual is the offset.
  VecX r;
  prior->evaluate(r, nullptr);
  CHECK((r - prior->offset()).norm() == 0.0);
  std::vector<VecX> values;
  for (int i = 2; i < 8; ++i) values.push_back(p.values[i]);
  CHECK((prior->residual_at(values) - prior->offset()).norm() == 0.0);
  values.pop_back();
  CHECK_THROWS_AS(prior->residual_at(values), std::invalid_argument);
}

TEST_CASE("uncoupled marginal block leaves the other information unchanged") {
  Vec3 a = random_vec(1.0), b = random_vec(1.0);
  const MatX Aa = MatX::Random(4, 3), Ab = MatX::Random(5, 3);
  std::vector<FactorPtr> factors{
      std::make_shared<LinearFactor>(std::vector<BlockRef>{{a.data(), BlockKind::kPosition}}, Aa, VecX::Random(4)),
      std::make_shared<LinearFactor>(std::vector<BlockRef>{{b.data(), BlockKind::kPosition}}, Ab, VecX::Random(5)),
  };
  const auto prior = marginalize_schur(factors, {a.data()});
  CHECK((information_of(*prior) - Ab.transpose() * Ab).norm() < 1e-10);
}

TEST_CASE("rank-deficient marginal block yields a finite prior") {
  Vec3 a = random_vec(1.0), b = random_vec(1.0);
  MatX A(3, 6);
  A << 1, 0, 0, 1, 0, 0,  //
      0, 0, 0, 0, 1, 0,   //
      0, 0, 0, 0, 0, 1;
  std::vector<FactorPtr> factors{std::make_shared<LinearFactor>(
      std::vector<BlockRef>{{a.data(), BlockKind::kPosition}, {b.data(), BlockKind::kPosition}}, A, VecX::Ones(3))};
  const auto prior = marginalize_schur(factors, {a.data()});
  CHECK(prior->sqrt_info().allFinite());
  CHECK(prior->offset().allFinite());
  CHECK(prior->residual_dim() == 2);
}

TEST_CASE("empty prior is a zero-dimension no-op") {
  const PriorFactor empty;
  CHECK(empty.empty());
  VecX r;
  empty.evaluate(r, nullptr);
  CHECK(r.size() == 0);
  Vec3 a = Vec3::Zero();
  const auto prior = marginalize_schur(
      {std::make_shared<LinearFactor>(std::vector<BlockRef>{{a.data(), BlockKind::kPosition}}, MatX::Identity(3, 3),
                                      VecX::Zero(3))},
      {a.data()});
  CHECK(prior->empty());
}

TEST_CASE("prior Jacobians over rotations match finite differences") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rotation R = random_rotation();
    Vec3 p = random_vec(1.0);
    double tr = 5e-5;
    std::vector<BlockRef> blocks{{R.data(), BlockKind::kRotation},
                                 {p.data(), BlockKind::kPosition},
                                 {&tr, BlockKind::kLineDelay}};
    std::vector<VecX> lin;
    for (const BlockRef& b : blocks) lin.push_back(copy_block(b));
    MatX S = MatX::Random(7, 7);
    S.triangularView<Eigen::StrictlyLower>().setZero();
    const PriorFactor prior(blocks, lin, S, VecX::Random(7));
    R = R * so3::exp(random_vec(0.5));
    p += random_vec(0.5);
    tr += 1e-5;
    worst = std::max(worst, factor_jacobian_error(prior));
  }
  CHECK(worst < 1e-5);
}

// ---------------------------------------------------------------------------

namespace {

struct WindowFixture {
  Trajectory traj;
  std::vector<ImuSample> imu;
  Vec3 bg_s = Vec3::Zero(), ba_s = Vec3::Zero(), bg_s1 = Vec3::Zero(), ba_s1 = Vec3::Zero();
  double line_delay = 6.944e-5;
  std::vector<double> depths;
  std::vector<FactorPtr> visual;

  explicit WindowFixture(double t_s, double t_s1) : traj(random_trajectory(16, 0.03, 0.0, 0.05, 0.03)) {
    Pose ext;
    ext.R << 0, 0, 1, -1, 0, 0, 0, -1, 0;
    traj.set_extrinsic(ext);
    for (int i = 0; i * (1.0 / 90) <= traj.t_max(); ++i) {
      const double t = i / 90.0;
      imu.push_back({t, random_vec(0.5), Vec3(0, 0, 9.8) + random_vec(0.5)});
    }
    depths.resize(6);
    for (int l = 0; l < 6; ++l) {
      depths[l] = uniform(0.1, 0.3);
      for (int k = 1; k <= 3; ++k) {
        VisualMeasurement m;
        m.anchor = {t_s, Vec2(uniform(100, 540), uniform(100, 380))};
        m.target = {t_s1 + 0.033 * (k - 1), Vec2(uniform(100, 540), uniform(100, 380))};
        visual.push_back(std::make_shared<VisualFactor>(traj, m, &depths[l], &line_delay, 1.0));
      }
    }
  }

  MarginalizationWindow window(double t_s, double t_s1, bool with_visual = true) {
    MarginalizationWindow w;
    w.traj = &traj;
    w.t_s = t_s;
    w.t_s1 = t_s1;
    w.imu = &imu;
    w.bias_gyro_s = bg_s.data();
    w.bias_accel_s = ba_s.data();
    w.bias_gyro_s1 = bg_s1.data();
    w.bias_accel_s1 = ba_s1.data();
    if (with_visual) {
      w.visual_factors = visual;
      for (double& d : depths) w.anchored_depths.push_back(&d);
    }
    return w;
  }
};

std::set<const double*> prior_blocks(const PriorFactor& prior) {
  std::set<const double*> out;
  for (const BlockRef& b : prior.blocks()) out.insert(b.data);
  return out;
}

}  // namespace

TEST_CASE("strategy 1 prior involves every control point at the second keyframe") {
  for (double t_s : {0.0, 0.011, 0.029}) {
    const double t_s1 = t_s + 2.0 / 30.0;
    WindowFixture fx(t_s, t_s1);
    const MarginalizationProblem sub = build_marg_subproblem_strategy1(fx.window(t_s, t_s1));
    const auto prior = marginalize_schur(sub.factors, sub.marg_blocks);
    const std::set<const double*> blocks = prior_blocks(*prior);
    const int first = fx.traj.locate(t_s1).index;
    for (int k = first; k < first + 4; ++k) {
      CHECK(blocks.count(fx.traj.control_point(k).R.data()) == 1);
      CHECK(blocks.count(fx.traj.control_point(k).p.data()) == 1);
    }
    // Marginalized control points are exactly the touched ones older than Phi(t_s1).
    for (int k : sub.marg_control_points) CHECK(k < first);
    CHECK(sub.marg_control_points.front() == fx.traj.locate(t_s).index);
    CHECK(sub.marg_control_points.back() == first - 1);
    CHECK(blocks.count(fx.bg_s.data()) == 0);
    CHECK(blocks.count(fx.bg_s1.data()) == 1);
    CHECK(blocks.count(&fx.line_delay) == 1);
    for (double& d : fx.depths) CHECK(blocks.count(&d) == 0);
  }
}

TEST_CASE("strategy 2 marginalizes the same control points with a different prior") {
  const double t_s = 0.011, t_s1 = t_s + 2.0 / 30.0;
  WindowFixture fx(t_s, t_s1);
  const MarginalizationProblem s1 = build_marg_subproblem_strategy1(fx.window(t_s, t_s1));
  const MarginalizationProblem s2 = build_marg_subproblem_strategy2(fx.window(t_s, t_s1));
  CHECK(s1.marg_control_points == s2.marg_control_points);
  for (int k : s2.marg_control_points) CHECK(k < fx.traj.locate(t_s1).index);
  const auto p1 = marginalize_schur(s1.factors, s1.marg_blocks);
  const auto p2 = marginalize_schur(s2.factors, s2.marg_blocks);
  CHECK(p1->sqrt_info().allFinite());
  CHECK(p2->sqrt_info().allFinite());
  const bool same_layout = prior_blocks(*p1) == prior_blocks(*p2);
  if (same_layout && p1->blocks() == p2->blocks()) {
    CHECK((information_of(*p1) - information_of(*p2)).norm() > 1e-6);
  } else {
    CHECK(prior_blocks(*p1) != prior_blocks(*p2));
  }
  int imu_factors = 0;
  for (const FactorPtr& f : s2.factors) imu_factors += f->type() == "imu";
  CHECK(imu_factors == 6);  // samples at 1/90 .. 6/90 s
}

TEST_CASE("degenerate marginalization windows") {
  const double t_s = 0.011, t_s1 = t_s + 2.0 / 30.0;
  WindowFixture fx(t_s, t_s1);
  // No visual factors: the prior still comes out of the IMU and bias terms.
  const MarginalizationProblem sub = build_marg_subproblem_strategy1(fx.window(t_s, t_s1, false));
  const auto prior = marginalize_schur(sub.factors, sub.marg_blocks);
  CHECK(!prior->empty());

  // No IMU samples inside the interval.
  WindowFixture sparse(t_s, t_s1);
  sparse.imu = {sparse.imu.front(), sparse.imu.back()};
  CHECK_THROWS_AS(build_marg_subproblem_strategy2(sparse.window(t_s, t_s1)), DomainError);
}
