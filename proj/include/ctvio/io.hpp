#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ctvio/dataset.hpp"

namespace ctvio {

/// Shortest decimal text that reads back to exactly `x`.
std::string format_double(double x);
/// Whole-string decimal parse; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view s);

/// Flat `key = value` text with `[section]` headers. Keys are addressed as
/// "section.key" ("key" before the first header). '#' starts a comment.
class KeyValueFile {
 public:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };

  /// Throws ParseError naming `source` and the line on malformed input or
  /// a repeated key.
  static KeyValueFile parse(const std::string& text, const std::string& source = "<string>");
  static KeyValueFile load(const std::string& path);

  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& key) const;
  bool has(const std::string& key) const { return find(key) != nullptr; }

  // Typed getters; a present but malformed value throws ParseError.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Vec3 get_vec3(const std::string& key, const Vec3& fallback) const;

  /// Throws ParseError for the first key not in `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void fail(const Entry& e, const std::string& what) const;

  std::string source_;
  std::vector<Entry> entries_;
};

// IMU stream: `t,gx,gy,gz,ax,ay,az` per row (s, rad/s, m/s^2). Lines
// starting with '#' are comments. Timestamps must be strictly increasing.
std::vector<ImuSample> read_imu_csv(const std::string& path);
void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples);

// Feature tracks: `frame_t,feature_id,u,v` per row, grouped into frames.
// Frame times must be strictly increasing between groups and feature ids
// strictly increasing within a frame.
std::vector<Frame> read_tracks_csv(const std::string& path);
void write_tracks_csv(const std::string& path, const std::vector<Frame>& frames);

// Trajectory: `t tx ty tz qx qy qz qw`, space separated, timestamps with 9
// decimals, unit quaternion scalar-last with qw >= 0. Throws
// std::invalid_argument for poses that are not strictly time-ordered.
std::vector<StampedPose> read_trajectory(const std::string& path);
void write_trajectory(const std::string& path, const std::vector<StampedPose>& poses);

// Truth states: `t,tx,ty,tz,qx,qy,qz,qw,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz`.
std::vector<TruthRecord> read_truth_states(const std::string& path);
void write_truth_states(const std::string& path, const std::vector<TruthRecord>& states);

// Landmarks: `id,x,y,z`.
std::map<int, Vec3> read_landmarks(const std::string& path);
void write_landmarks(const std::string& path, const std::map<int, Vec3>& landmarks);

/// Writes imu.csv, tracks.csv and dataset.cfg into `dir` (created if
/// needed), plus groundtruth.txt, truth_states.csv and landmarks.csv when
/// the dataset carries ground truth.
void write_dataset(const std::string& dir, const Dataset& d);
/// Reads a directory written by write_dataset. Ground-truth files are
/// optional.
Dataset load_dataset(const std::string& dir);

struct CalibrationSample {
  double t = 0.0;
  double line_delay = 0.0;  // s
};

// Calibration trace: `t,line_delay_s,line_delay_us`.
std::vector<CalibrationSample> read_calibration_trace(const std::string& path);
void write_calibration_trace(const std::string& path, const std::vector<CalibrationSample>& trace);

struct ApeResult {
  double rmse = 0.0;  // m
  double mean = 0.0;
  double max = 0.0;
  std::size_t pairs = 0;
  Pose alignment;  // maps the estimate onto the ground truth
};

/// Translational RMSE after rigid (no scale) alignment. Each estimate is
/// paired with the nearest ground-truth timestamp within `tolerance`
/// seconds. Throws std::invalid_argument with fewer than 3 pairs.
ApeResult compute_ape(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& ground_truth,
                      double tolerance = 1e-3);

struct CalibrationReport {
  std::size_t samples = 0;
  double final_us = 0.0;
  double mean_us = 0.0;  // over the last `window` seconds of the trace
  double std_us = 0.0;
  std::size_t window_samples = 0;
  std::optional<double> reference_us;
  std::optional<double> error_us;  // mean - reference
  // Seconds from the first sample until the trace stays within `band_us`
  // of the reference.
  std::optional<double> convergence_time;
};

/// Throws std::invalid_argument on an empty trace.
CalibrationReport calibration_report(const std::vector<CalibrationSample>& trace, double window = 5.0,
                                     std::optional<double> reference_us = std::nullopt, double band_us = 10.0);

}  // namespace ctvio
