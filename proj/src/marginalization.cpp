#include "ctvio/marginalization.hpp"

#include <algorithm>
#include <unordered_set>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "ctvio/solver.hpp"

namespace ctvio {

std::shared_ptr<PriorFactor> marginalize_schur(const std::vector<FactorPtr>& factors,
                                               const std::vector<const double*>& marg_blocks,
                                               const std::function<bool(const double*)>& is_constant,
                                               double eigen_floor) {
  const std::unordered_set<const double*> marg(marg_blocks.begin(), marg_blocks.end());
  auto constant = [&](const double* p) { return is_constant && is_constant(p); };

  // Marginalized columns first, then the kept blocks in first-appearance order.
  ColumnLayout layout;
  std::vector<BlockRef> kept;
  std::unordered_set<const double*> seen;
  for (const FactorPtr& f : factors) {
    for (const BlockRef& b : f->blocks()) {
      if (constant(b.data) || !marg.count(b.data)) continue;
      layout.append(b);
    }
  }
  const int m = layout.cols;
  for (const FactorPtr& f : factors) {
    for (const BlockRef& b : f->blocks()) {
      if (constant(b.data) || marg.count(b.data) || !seen.insert(b.data).second) continue;
      layout.append(b);
      kept.push_back(b);
    }
  }
  const int n = layout.cols - m;

  const LinearSystem sys = linearize(factors, layout);
  MatX Hs = sys.H.bottomRightCorner(n, n);
  VecX gs = sys.g.tail(n);
  if (m > 0) {
    const Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (sys.H.topLeftCorner(m, m) + sys.H.topLeftCorner(m, m).transpose()));
    const VecX inv = es.eigenvalues().unaryExpr([&](double x) { return x > eigen_floor ? 1.0 / x : 0.0; });
    const MatX Hmm_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    const MatX Hkm = sys.H.bottomLeftCorner(n, m);
    Hs -= Hkm * Hmm_pinv * Hkm.transpose();
    gs -= Hkm * Hmm_pinv * sys.g.head(m);
  }

  std::vector<VecX> linearization;
  for (const BlockRef& b : kept) linearization.push_back(copy_block(b));
  if (n == 0) return std::make_shared<PriorFactor>(kept, linearization, MatX(0, 0), VecX(0));

  // H* = J^T J with J = sqrt(L) V^T on the kept spectrum, offset e0 such
  // that J^T e0 = g*.
  const Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (Hs + Hs.transpose()));
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (es.eigenvalues()[i] > eigen_floor) keep.push_back(i);
  }
  const int rank = static_cast<int>(keep.size());
  MatX J(rank, n);
  VecX e0(rank);
  for (int r = 0; r < rank; ++r) {
    const double lam = es.eigenvalues()[keep[r]];
    const VecX v = es.eigenvectors().col(keep[r]);
    J.row(r) = std::sqrt(lam) * v.transpose();
    e0[r] = v.dot(gs) / std::sqrt(lam);
  }

  // Rotate to upper-triangular form with a nonnegative diagonal.
  MatX S = J;
  VecX offset = e0;
  if (rank > 0) {
    const Eigen::HouseholderQR<MatX> qr(J);
    const MatX Q = qr.householderQ();
    S = (Q.transpose() * J).eval();
    offset = Q.transpose() * e0;
    S.triangularView<Eigen::StrictlyLower>().setZero();
    for (int r = 0; r < rank; ++r) {
      if (S(r, r) < 0.0) {
        S.row(r) *= -1.0;
        offset[r] *= -1.0;
      }
    }
  }
  return std::make_shared<PriorFactor>(kept, linearization, S, offset);
}

namespace {

void attach_marg_set(const MarginalizationWindow& w, MarginalizationProblem& p) {
  const int first_kept = w.traj->locate(w.t_s1).index;
  std::unordered_set<const double*> touched;
  for (const FactorPtr& f : p.factors) {
    for (const BlockRef& b : f->blocks()) touched.insert(b.data);
  }
  for (int k = 0; k < first_kept; ++k) {
    ControlPoint& cp = w.traj->control_point(static_cast<std::size_t>(k));
    const bool hit_R = touched.count(cp.R.data()) != 0;
    const bool hit_p = touched.count(cp.p.data()) != 0;
    if (!hit_R && !hit_p) continue;
    p.marg_control_points.push_back(k);
    p.marg_blocks.push_back(cp.R.data());
    p.marg_blocks.push_back(cp.p.data());
  }
  p.marg_blocks.push_back(w.bias_gyro_s);
  p.marg_blocks.push_back(w.bias_accel_s);
  for (double* d : w.anchored_depths) p.marg_blocks.push_back(d);
}

MarginalizationProblem common_part(const MarginalizationWindow& w) {
  if (w.traj == nullptr || w.imu == nullptr) throw std::invalid_argument("marginalization: incomplete window");
  if (!(w.t_s1 > w.t_s)) throw std::invalid_argument("marginalization: keyframe times not increasing");
  MarginalizationProblem p;
  p.factors = w.visual_factors;
  p.factors.insert(p.factors.end(), w.extra_factors.begin(), w.extra_factors.end());
  p.factors.push_back(std::make_shared<BiasFactor>(w.bias_gyro_s, w.bias_accel_s, w.bias_gyro_s1, w.bias_accel_s1,
                                                   w.t_s1 - w.t_s, w.noise));
  if (w.prior && !w.prior->empty()) p.factors.push_back(w.prior);
  return p;
}

}  // namespace

MarginalizationProblem build_marg_subproblem_strategy1(const MarginalizationWindow& w) {
  MarginalizationProblem p = common_part(w);
  const std::vector<ImuSample> samples = imu_interval(*w.imu, w.t_s, w.t_s1);
  const BiasPair bias{Eigen::Map<const Vec3>(w.bias_gyro_s), Eigen::Map<const Vec3>(w.bias_accel_s)};
  p.factors.push_back(std::make_shared<PreintegrationFactor>(*w.traj, w.t_s, w.t_s1, preintegrate(samples, bias, w.noise),
                                                             w.bias_gyro_s, w.bias_accel_s, w.gravity));
  attach_marg_set(w, p);
  return p;
}

MarginalizationProblem build_marg_subproblem_strategy2(const MarginalizationWindow& w) {
  MarginalizationProblem p = common_part(w);
  int count = 0;
  for (const ImuSample& s : *w.imu) {
    if (s.t < w.t_s || s.t >= w.t_s1) continue;
    p.factors.push_back(std::make_shared<ImuFactor>(*w.traj, s, w.bias_gyro_s, w.bias_accel_s, w.noise, w.gravity));
    ++count;
  }
  if (count == 0) throw DomainError("marginalization: no IMU samples in the oldest keyframe interval");
  attach_marg_set(w, p);
  return p;
}

}  // namespace ctvio
