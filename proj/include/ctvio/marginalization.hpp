#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ctvio/factors.hpp"
#include "ctvio/prior.hpp"

namespace ctvio {

/// Eliminates `marg_blocks` from the linearization of `factors` at the
/// current parameter values by Schur complement. The returned prior covers
/// every other non-constant block the factors touch, in order of first
/// appearance. Eigenvalues below `eigen_floor` are dropped both when
/// inverting the marginalized block and when factoring the complement.
std::shared_ptr<PriorFactor> marginalize_schur(const std::vector<FactorPtr>& factors,
                                               const std::vector<const double*>& marg_blocks,
                                               const std::function<bool(const double*)>& is_constant = {},
                                               double eigen_floor = 1e-8);

/// The oldest keyframe interval [t_s, t_s1) of a window and everything
/// attached to it.
struct MarginalizationWindow {
  Trajectory* traj = nullptr;
  double t_s = 0.0;
  double t_s1 = 0.0;
  const std::vector<ImuSample>* imu = nullptr;
  double* bias_gyro_s = nullptr;
  double* bias_accel_s = nullptr;
  double* bias_gyro_s1 = nullptr;
  double* bias_accel_s1 = nullptr;
  // Visual factors of landmarks anchored in the oldest keyframe.
  std::vector<FactorPtr> visual_factors;
  // Inverse depths of those landmarks.
  std::vector<double*> anchored_depths;
  // Other factors folded into the prior as they are (e.g. an initial gauge
  // fix on the oldest keyframe).
  std::vector<FactorPtr> extra_factors;
  std::shared_ptr<const PriorFactor> prior;
  ImuNoiseModel noise;
  Vec3 gravity = default_gravity();
};

struct MarginalizationProblem {
  std::vector<FactorPtr> factors;
  std::vector<const double*> marg_blocks;
  // Control point indices in marg_blocks.
  std::vector<int> marg_control_points;
};

/// Sub-problem with one preintegration factor over [t_s, t_s1).
MarginalizationProblem build_marg_subproblem_strategy1(const MarginalizationWindow& w);

/// Sub-problem with one raw IMU factor per sample in [t_s, t_s1).
MarginalizationProblem build_marg_subproblem_strategy2(const MarginalizationWindow& w);

}  // namespace ctvio
