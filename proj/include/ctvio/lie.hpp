#pragma once

#include "ctvio/types.hpp"

/// Minimal SO(3) toolbox. All perturbations in this project are right
/// multiplicative: R <- R * exp(delta).
namespace ctvio::so3 {

/// Below this angle exp/log switch to second-order Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);

/// Inverse of skew. Throws std::invalid_argument if M is not antisymmetric
/// within 1e-9.
Vec3 vee(const Mat3& M);

Rotation exp(const Vec3& phi);

/// Principal logarithm, |result| <= pi. At exactly pi the sign is chosen so
/// that the last nonzero component is nonnegative. Throws
/// std::invalid_argument for input farther than 1e-6 from SO(3).
Vec3 log(const Rotation& R);

Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inverse(const Vec3& phi);

/// Projects an approximately orthonormal matrix back onto SO(3).
Rotation normalize(const Mat3& M);

/// Max-abs entry of R R^T - I.
double orthonormality_error(const Mat3& R);

Eigen::Quaterniond to_quaternion(const Rotation& R);
Rotation from_quaternion(const Eigen::Quaterniond& q);

}  // namespace ctvio::so3
