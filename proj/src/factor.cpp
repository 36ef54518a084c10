#include "ctvio/factor.hpp"

#include <cmath>

#include "ctvio/lie.hpp"

namespace ctvio {

int tangent_dim(BlockKind kind) {
  switch (kind) {
    case BlockKind::kRotation:
    case BlockKind::kPosition:
    case BlockKind::kBiasGyro:
    case BlockKind::kBiasAccel:
      return 3;
    case BlockKind::kInverseDepth:
    case BlockKind::kLineDelay:
      return 1;
  }
  return 0;
}

int ambient_dim(BlockKind kind) { return kind == BlockKind::kRotation ? 9 : tangent_dim(kind); }

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kRotation: return "rotation_cp";
    case BlockKind::kPosition: return "position_cp";
    case BlockKind::kBiasGyro: return "bias_gyro";
    case BlockKind::kBiasAccel: return "bias_accel";
    case BlockKind::kInverseDepth: return "inverse_depth";
    case BlockKind::kLineDelay: return "line_delay";
  }
  return "unknown";
}

void retract(BlockKind kind, double* x, const double* delta) {
  if (kind == BlockKind::kRotation) {
    Eigen::Map<Mat3> R(x);
    R = (R * so3::exp(Eigen::Map<const Vec3>(delta))).eval();
    return;
  }
  for (int i = 0; i < tangent_dim(kind); ++i) x[i] += delta[i];
}

VecX local_difference(BlockKind kind, const double* x, const double* x0) {
  if (kind == BlockKind::kRotation) {
    const Eigen::Map<const Mat3> R(x), R0(x0);
    return so3::log(R0.transpose() * R);
  }
  const int n = tangent_dim(kind);
  return Eigen::Map<const VecX>(x, n) - Eigen::Map<const VecX>(x0, n);
}

MatX local_difference_jacobian(BlockKind kind, const double* x, const double* x0) {
  if (kind == BlockKind::kRotation) {
    const Eigen::Map<const Mat3> R(x), R0(x0);
    return so3::right_jacobian_inverse(so3::log(R0.transpose() * R));
  }
  return MatX::Identity(tangent_dim(kind), tangent_dim(kind));
}

VecX copy_block(const BlockRef& block) { return Eigen::Map<const VecX>(block.data, ambient_dim(block.kind)); }

int Factor::jacobian_cols() const {
  int cols = 0;
  for (const BlockRef& b : blocks_) cols += tangent_dim(b.kind);
  return cols;
}

RobustWeight huber(double squared_norm, double threshold) {
  if (threshold <= 0.0 || squared_norm <= threshold * threshold) return {squared_norm, 1.0};
  const double norm = std::sqrt(squared_norm);
  return {2.0 * threshold * norm - threshold * threshold, std::sqrt(threshold / norm)};
}

}  // namespace ctvio
