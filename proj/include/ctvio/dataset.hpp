#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "ctvio/sensors.hpp"
#include "ctvio/types.hpp"

namespace ctvio {

struct FeatureObservation {
  int id = 0;
  Vec2 pixel = Vec2::Zero();
};

/// One rolling-shutter image reduced to its feature tracks. `t` is the
/// exposure time of row 0; observations are sorted by feature id.
struct Frame {
  double t = 0.0;
  std::vector<FeatureObservation> observations;
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
  // Quaternion the pose was read with, reused on output while pose.R is
  // unchanged so that files round-trip byte for byte.
  std::optional<Eigen::Quaterniond> quaternion;
};

/// Full ground-truth state of the body at one instant.
struct TruthRecord {
  double t = 0.0;
  Pose pose;
  Vec3 v = Vec3::Zero();
  BiasPair bias;
  std::optional<Eigen::Quaterniond> quaternion;  // as for StampedPose
};

/// Body-to-camera rotation of a forward-looking camera on a body whose x
/// axis points forward and z axis up: camera z = body x, camera x = -body y,
/// camera y = -body z.
inline Pose default_extrinsic() {
  Pose T;
  T.R << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  T.p = Vec3(0.05, 0.0, 0.02);
  return T;
}

/// In-memory dataset: sensor streams, calibration and optional ground truth.
struct Dataset {
  PinholeIntrinsics intrinsics;
  Pose extrinsic = default_extrinsic();
  ImuNoiseModel noise;
  Vec3 gravity = default_gravity();
  double pixel_sigma = 1.0;
  // Ground-truth line delay in seconds, NaN when unknown.
  double line_delay = std::nan("");

  std::vector<ImuSample> imu;
  std::vector<Frame> frames;

  // Optional ground truth.
  std::vector<StampedPose> ground_truth;  // body poses at frame times
  std::vector<TruthRecord> truth_states;  // IMU-rate states and biases
  std::map<int, Vec3> landmarks;          // world positions by feature id

  bool has_truth() const { return !truth_states.empty(); }
};

}  // namespace ctvio
