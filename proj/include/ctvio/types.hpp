#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// 3x3 orthonormal matrix with det +1. Kept as a plain matrix because every
/// factor formula is written in matrix form.
using Rotation = Mat3;

/// Rigid transform (rotation + translation in meters), maps points from the
/// child frame into the parent frame.
struct Pose {
  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return R * x + p; }
  Pose operator*(const Pose& other) const { return {R * other.R, R * other.p + p}; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * p)}; }
};

/// Query outside the supported time domain of a trajectory or stream.
class DomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Point at or behind the camera center.
class CheiralityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctvio
