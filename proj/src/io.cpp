#include "ctvio/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctvio/lie.hpp"

namespace ctvio {

namespace fs = std::filesystem;

std::string format_double(double x) {
  if (x == 0.0) return "0";  // also folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return x;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  if (delim == ' ') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string location(const std::string& path, int line) { return path + ":" + std::to_string(line) + ": "; }

// Calls `row(fields, line_number)` for every non-comment, non-empty line.
template <typename F>
void for_each_row(const std::string& path, char delim, std::size_t expected_fields, F&& row) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::vector<std::string> fields = split(t, delim);
    if (fields.size() != expected_fields) {
      throw ParseError(location(path, number) + "expected " + std::to_string(expected_fields) + " fields, got " +
                       std::to_string(fields.size()));
    }
    row(fields, number);
  }
}

std::vector<double> numbers(const std::vector<std::string>& fields, const std::string& path, int line) {
  std::vector<double> out;
  for (const std::string& f : fields) {
    const auto v = parse_double(f);
    if (!v || !std::isfinite(*v)) throw ParseError(location(path, line) + "not a finite number: '" + f + "'");
    out.push_back(*v);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string join(std::initializer_list<double> xs, const char* sep) {
  std::string s;
  bool first = true;
  for (double x : xs) {
    if (!first) s += sep;
    s += format_double(x);
    first = false;
  }
  return s;
}

std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", t);
  return buf;
}

// Reuses the quaternion a pose was read with while its rotation is
// unchanged, so that write -> read -> write is byte-identical.
Eigen::Quaterniond output_quaternion(const Rotation& R, const std::optional<Eigen::Quaterniond>& read_as) {
  if (read_as && so3::from_quaternion(*read_as) == R) return *read_as;
  return so3::to_quaternion(R);
}

Rotation rotation_from(double qx, double qy, double qz, double qw, const std::string& path, int line) {
  const Eigen::Quaterniond q(qw, qx, qy, qz);
  if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError(location(path, line) + "quaternion is not unit length");
  return so3::from_quaternion(q);
}

}  // namespace

// ---------------------------------------------------------------- key/value

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& source) {
  KeyValueFile kv;
  kv.source_ = source;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw ParseError(location(source, number) + "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(location(source, number) + "expected 'key = value'");
    const std::string name = trim(t.substr(0, eq));
    if (name.empty()) throw ParseError(location(source, number) + "empty key");
    Entry e{section.empty() ? name : section + "." + name, trim(t.substr(eq + 1)), number};
    if (kv.find(e.key)) throw ParseError(location(source, number) + "duplicate key '" + e.key + "'");
    kv.entries_.push_back(std::move(e));
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

const KeyValueFile::Entry* KeyValueFile::find(const std::string& key) const {
  for (const Entry& e : entries_) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

void KeyValueFile::fail(const Entry& e, const std::string& what) const {
  throw ParseError(location(source_, e.line) + e.key + ": " + what);
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  const auto v = parse_double(e->value);
  if (!v || !std::isfinite(*v)) fail(*e, "expected a number, got '" + e->value + "'");
  return *v;
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  int x = 0;
  const auto res = std::from_chars(e->value.data(), e->value.data() + e->value.size(), x);
  if (res.ec != std::errc() || res.ptr != e->value.data() + e->value.size()) {
    fail(*e, "expected an integer, got '" + e->value + "'");
  }
  return x;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes" || e->value == "on") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no" || e->value == "off") return false;
  fail(*e, "expected true or false, got '" + e->value + "'");
}

Vec3 KeyValueFile::get_vec3(const std::string& key, const Vec3& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  const std::vector<std::string> parts = split(e->value, ' ');
  if (parts.size() != 3) fail(*e, "expected three numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    const auto x = parse_double(parts[i]);
    if (!x || !std::isfinite(*x)) fail(*e, "not a number: '" + parts[i] + "'");
    v[i] = *x;
  }
  return v;
}

void KeyValueFile::reject_unknown(const std::set<std::string>& allowed) const {
  for (const Entry& e : entries_) {
    if (!allowed.count(e.key)) fail(e, "unknown key");
  }
}

// ---------------------------------------------------------------- IMU

std::vector<ImuSample> read_imu_csv(const std::string& path) {
  std::vector<ImuSample> out;
  for_each_row(path, ',', 7, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    ImuSample s{x[0], {x[1], x[2], x[3]}, {x[4], x[5], x[6]}};
    if (!out.empty() && !(s.t > out.back().t)) {
      throw ParseError(location(path, line) + "IMU timestamps not strictly increasing: " + format_double(s.t) +
                       " follows " + format_double(out.back().t));
    }
    out.push_back(s);
  });
  return out;
}

void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
  std::ofstream out = open_out(path);
  out << "# t,gx,gy,gz,ax,ay,az\n";
  for (const ImuSample& s : samples) {
    out << join({s.t, s.gyro.x(), s.gyro.y(), s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z()}, ",") << '\n';
  }
  finish(out, path);
}

// ---------------------------------------------------------------- tracks

std::vector<Frame> read_tracks_csv(const std::string& path) {
  std::vector<Frame> out;
  for_each_row(path, ',', 4, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    const double id_d = x[1];
    if (id_d != std::floor(id_d) || id_d < 0 || id_d > 2e9) {
      throw ParseError(location(path, line) + "feature id must be a nonnegative integer");
    }
    const int id = static_cast<int>(id_d);
    if (out.empty() || x[0] != out.back().t) {
      if (!out.empty() && !(x[0] > out.back().t)) {
        throw ParseError(location(path, line) + "frame timestamps not strictly increasing: " + format_double(x[0]) +
                         " follows " + format_double(out.back().t));
      }
      out.push_back({x[0], {}});
    } else if (id <= out.back().observations.back().id) {
      throw ParseError(location(path, line) + "feature ids not strictly increasing within the frame at t = " +
                       format_double(x[0]));
    }
    out.back().observations.push_back({id, {x[2], x[3]}});
  });
  return out;
}

void write_tracks_csv(const std::string& path, const std::vector<Frame>& frames) {
  std::ofstream out = open_out(path);
  out << "# frame_t,feature_id,u,v\n";
  for (const Frame& f : frames) {
    for (const FeatureObservation& o : f.observations) {
      out << format_double(f.t) << ',' << o.id << ',' << format_double(o.pixel.x()) << ','
          << format_double(o.pixel.y()) << '\n';
    }
  }
  finish(out, path);
}

// ---------------------------------------------------------------- trajectory

std::vector<StampedPose> read_trajectory(const std::string& path) {
  std::vector<StampedPose> out;
  for_each_row(path, ' ', 8, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    StampedPose p;
    p.t = x[0];
    p.pose.p = Vec3(x[1], x[2], x[3]);
    p.pose.R = rotation_from(x[4], x[5], x[6], x[7], path, line);
    p.quaternion = Eigen::Quaterniond(x[7], x[4], x[5], x[6]);
    if (!out.empty() && !(p.t > out.back().t)) {
      throw ParseError(location(path, line) + "trajectory timestamps not strictly increasing");
    }
    out.push_back(p);
  });
  return out;
}

void write_trajectory(const std::string& path, const std::vector<StampedPose>& poses) {
  for (std::size_t i = 1; i < poses.size(); ++i) {
    if (!(poses[i].t > poses[i - 1].t)) {
      throw std::invalid_argument("write_trajectory: poses not strictly time-ordered at index " + std::to_string(i));
    }
  }
  std::ofstream out = open_out(path);
  out << "# t tx ty tz qx qy qz qw\n"
      << "# body pose in the world frame; t is the exposure time of the first image row\n";
  for (const StampedPose& p : poses) {
    const Eigen::Quaterniond q = output_quaternion(p.pose.R, p.quaternion);
    out << format_time(p.t) << ' '
        << join({p.pose.p.x(), p.pose.p.y(), p.pose.p.z(), q.x(), q.y(), q.z(), q.w()}, " ") << '\n';
  }
  finish(out, path);
}

// ---------------------------------------------------------------- truth

std::vector<TruthRecord> read_truth_states(const std::string& path) {
  std::vector<TruthRecord> out;
  for_each_row(path, ',', 17, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    TruthRecord r;
    r.t = x[0];
    r.pose.p = Vec3(x[1], x[2], x[3]);
    r.pose.R = rotation_from(x[4], x[5], x[6], x[7], path, line);
    r.quaternion = Eigen::Quaterniond(x[7], x[4], x[5], x[6]);
    r.v = Vec3(x[8], x[9], x[10]);
    r.bias.gyro = Vec3(x[11], x[12], x[13]);
    r.bias.accel = Vec3(x[14], x[15], x[16]);
    if (!out.empty() && !(r.t > out.back().t)) {
      throw ParseError(location(path, line) + "truth timestamps not strictly increasing");
    }
    out.push_back(r);
  });
  return out;
}

void write_truth_states(const std::string& path, const std::vector<TruthRecord>& states) {
  std::ofstream out = open_out(path);
  out << "# t,tx,ty,tz,qx,qy,qz,qw,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz\n";
  for (const TruthRecord& r : states) {
    const Eigen::Quaterniond q = output_quaternion(r.pose.R, r.quaternion);
    out << join({r.t, r.pose.p.x(), r.pose.p.y(), r.pose.p.z(), q.x(), q.y(), q.z(), q.w(), r.v.x(), r.v.y(),
                 r.v.z(), r.bias.gyro.x(), r.bias.gyro.y(), r.bias.gyro.z(), r.bias.accel.x(), r.bias.accel.y(),
                 r.bias.accel.z()},
                ",")
        << '\n';
  }
  finish(out, path);
}

std::map<int, Vec3> read_landmarks(const std::string& path) {
  std::map<int, Vec3> out;
  for_each_row(path, ',', 4, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    if (x[0] != std::floor(x[0]) || x[0] < 0) throw ParseError(location(path, line) + "bad landmark id");
    if (!out.emplace(static_cast<int>(x[0]), Vec3(x[1], x[2], x[3])).second) {
      throw ParseError(location(path, line) + "duplicate landmark id");
    }
  });
  return out;
}

void write_landmarks(const std::string& path, const std::map<int, Vec3>& landmarks) {
  std::ofstream out = open_out(path);
  out << "# id,x,y,z\n";
  for (const auto& [id, p] : landmarks) out << id << ',' << join({p.x(), p.y(), p.z()}, ",") << '\n';
  finish(out, path);
}

// ---------------------------------------------------------------- dataset

void write_dataset(const std::string& dir, const Dataset& d) {
  fs::create_directories(dir);
  const fs::path root(dir);
  write_imu_csv((root / "imu.csv").string(), d.imu);
  write_tracks_csv((root / "tracks.csv").string(), d.frames);

  const std::string cfg_path = (root / "dataset.cfg").string();
  std::ofstream cfg = open_out(cfg_path);
  const Rotation& Rbc = d.extrinsic.R;
  cfg << "# ctvio dataset description\n"
      << "[camera]\n"
      << "fx = " << format_double(d.intrinsics.fx) << "\n"
      << "fy = " << format_double(d.intrinsics.fy) << "\n"
      << "cx = " << format_double(d.intrinsics.cx) << "\n"
      << "cy = " << format_double(d.intrinsics.cy) << "\n"
      << "width = " << d.intrinsics.width << "\n"
      << "height = " << d.intrinsics.height << "\n"
      << "pixel_sigma = " << format_double(d.pixel_sigma) << "\n";
  if (std::isfinite(d.line_delay)) cfg << "line_delay_us = " << format_double(d.line_delay * 1e6) << "\n";
  cfg << "extrinsic_rotation = "
      << join({Rbc(0, 0), Rbc(0, 1), Rbc(0, 2), Rbc(1, 0), Rbc(1, 1), Rbc(1, 2), Rbc(2, 0), Rbc(2, 1), Rbc(2, 2)}, " ")
      << "\n"
      << "extrinsic_translation = " << join({d.extrinsic.p.x(), d.extrinsic.p.y(), d.extrinsic.p.z()}, " ") << "\n"
      << "[imu]\n"
      << "rate = " << format_double(d.noise.rate) << "\n"
      << "gyro_noise_density = " << format_double(d.noise.gyro_noise_density) << "\n"
      << "accel_noise_density = " << format_double(d.noise.accel_noise_density) << "\n"
      << "gyro_bias_walk = " << format_double(d.noise.gyro_bias_walk) << "\n"
      << "accel_bias_walk = " << format_double(d.noise.accel_bias_walk) << "\n"
      << "gravity = " << join({d.gravity.x(), d.gravity.y(), d.gravity.z()}, " ") << "\n";
  finish(cfg, cfg_path);

  if (!d.ground_truth.empty()) write_trajectory((root / "groundtruth.txt").string(), d.ground_truth);
  if (!d.truth_states.empty()) write_truth_states((root / "truth_states.csv").string(), d.truth_states);
  if (!d.landmarks.empty()) write_landmarks((root / "landmarks.csv").string(), d.landmarks);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ParseError("dataset directory '" + dir + "' does not exist");
  Dataset d;
  const KeyValueFile cfg = KeyValueFile::load((root / "dataset.cfg").string());
  cfg.reject_unknown({"camera.fx", "camera.fy", "camera.cx", "camera.cy", "camera.width", "camera.height",
                      "camera.pixel_sigma", "camera.line_delay_us", "camera.extrinsic_rotation",
                      "camera.extrinsic_translation", "imu.rate", "imu.gyro_noise_density",
                      "imu.accel_noise_density", "imu.gyro_bias_walk", "imu.accel_bias_walk", "imu.gravity"});
  d.intrinsics.fx = cfg.get_double("camera.fx", d.intrinsics.fx);
  d.intrinsics.fy = cfg.get_double("camera.fy", d.intrinsics.fy);
  d.intrinsics.cx = cfg.get_double("camera.cx", d.intrinsics.cx);
  d.intrinsics.cy = cfg.get_double("camera.cy", d.intrinsics.cy);
  d.intrinsics.width = cfg.get_int("camera.width", d.intrinsics.width);
  d.intrinsics.height = cfg.get_int("camera.height", d.intrinsics.height);
  d.intrinsics.validate();
  d.pixel_sigma = cfg.get_double("camera.pixel_sigma", d.pixel_sigma);
  if (cfg.has("camera.line_delay_us")) d.line_delay = cfg.get_double("camera.line_delay_us", 0.0) * 1e-6;
  if (const auto* e = cfg.find("camera.extrinsic_rotation")) {
    const std::vector<std::string> parts = split(e->value, ' ');
    const std::vector<double> r = numbers(parts, cfg.source(), e->line);
    if (r.size() != 9) throw ParseError(location(cfg.source(), e->line) + "extrinsic_rotation needs 9 row-major entries");
    for (int i = 0; i < 9; ++i) d.extrinsic.R(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
    if (so3::orthonormality_error(d.extrinsic.R) > 1e-9 || d.extrinsic.R.determinant() < 0.0) {
      throw ParseError(location(cfg.source(), e->line) + "extrinsic_rotation is not a rotation matrix");
    }
  }
  d.extrinsic.p = cfg.get_vec3("camera.extrinsic_translation", d.extrinsic.p);
  d.noise.rate = cfg.get_double("imu.rate", d.noise.rate);
  d.noise.gyro_noise_density = cfg.get_double("imu.gyro_noise_density", d.noise.gyro_noise_density);
  d.noise.accel_noise_density = cfg.get_double("imu.accel_noise_density", d.noise.accel_noise_density);
  d.noise.gyro_bias_walk = cfg.get_double("imu.gyro_bias_walk", d.noise.gyro_bias_walk);
  d.noise.accel_bias_walk = cfg.get_double("imu.accel_bias_walk", d.noise.accel_bias_walk);
  d.noise.validate();
  d.gravity = cfg.get_vec3("imu.gravity", d.gravity);

  d.imu = read_imu_csv((root / "imu.csv").string());
  d.frames = read_tracks_csv((root / "tracks.csv").string());
  for (const Frame& f : d.frames) {
    for (const FeatureObservation& o : f.observations) {
      if (!d.intrinsics.contains(o.pixel)) {
        throw ParseError((root / "tracks.csv").string() + ": pixel of feature " + std::to_string(o.id) +
                         " at t = " + format_double(f.t) + " is outside the image");
      }
    }
  }
  if (fs::exists(root / "groundtruth.txt")) d.ground_truth = read_trajectory((root / "groundtruth.txt").string());
  if (fs::exists(root / "truth_states.csv")) d.truth_states = read_truth_states((root / "truth_states.csv").string());
  if (fs::exists(root / "landmarks.csv")) d.landmarks = read_landmarks((root / "landmarks.csv").string());
  return d;
}

// ---------------------------------------------------------------- calibration trace

std::vector<CalibrationSample> read_calibration_trace(const std::string& path) {
  std::vector<CalibrationSample> out;
  for_each_row(path, ',', 3, [&](const std::vector<std::string>& f, int line) {
    const std::vector<double> x = numbers(f, path, line);
    if (!out.empty() && !(x[0] > out.back().t)) {
      throw ParseError(location(path, line) + "trace timestamps not strictly increasing");
    }
    out.push_back({x[0], x[1]});
  });
  return out;
}

void write_calibration_trace(const std::string& path, const std::vector<CalibrationSample>& trace) {
  std::ofstream out = open_out(path);
  out << "# t,line_delay_s,line_delay_us\n";
  for (const CalibrationSample& s : trace) out << join({s.t, s.line_delay, s.line_delay * 1e6}, ",") << '\n';
  finish(out, path);
}

// ---------------------------------------------------------------- evaluation

ApeResult compute_ape(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& ground_truth,
                      double tolerance) {
  std::vector<Vec3> est, gt;
  for (const StampedPose& e : estimate) {
    const auto it = std::lower_bound(ground_truth.begin(), ground_truth.end(), e.t,
                                     [](const StampedPose& p, double t) { return p.t < t; });
    const StampedPose* best = nullptr;
    if (it != ground_truth.end()) best = &*it;
    if (it != ground_truth.begin() && (!best || std::abs(std::prev(it)->t - e.t) < std::abs(best->t - e.t))) {
      best = &*std::prev(it);
    }
    if (best && std::abs(best->t - e.t) <= tolerance) {
      est.push_back(e.pose.p);
      gt.push_back(best->pose.p);
    }
  }
  if (est.size() < 3) {
    throw std::invalid_argument("compute_ape: only " + std::to_string(est.size()) +
                                " associated poses, at least 3 are needed");
  }
  Eigen::Matrix3Xd src(3, est.size()), dst(3, gt.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = est[i];
    dst.col(static_cast<Eigen::Index>(i)) = gt[i];
  }
  const Mat4 T = Eigen::umeyama(src, dst, false);
  ApeResult r;
  r.pairs = est.size();
  r.alignment.R = T.topLeftCorner<3, 3>();
  r.alignment.p = T.topRightCorner<3, 1>();
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = (r.alignment * est[i] - gt[i]).norm();
    sq += e * e;
    r.mean += e;
    r.max = std::max(r.max, e);
  }
  r.rmse = std::sqrt(sq / static_cast<double>(est.size()));
  r.mean /= static_cast<double>(est.size());
  return r;
}

CalibrationReport calibration_report(const std::vector<CalibrationSample>& trace, double window,
                                     std::optional<double> reference_us, double band_us) {
  if (trace.empty()) throw std::invalid_argument("calibration_report: empty trace");
  CalibrationReport r;
  r.samples = trace.size();
  r.final_us = trace.back().line_delay * 1e6;
  const double t_from = trace.back().t - window;
  double sum = 0.0, sq = 0.0;
  for (const CalibrationSample& s : trace) {
    if (s.t < t_from) continue;
    const double us = s.line_delay * 1e6;
    sum += us;
    sq += us * us;
    ++r.window_samples;
  }
  const double n = static_cast<double>(r.window_samples);
  r.mean_us = sum / n;
  r.std_us = std::sqrt(std::max(0.0, sq / n - r.mean_us * r.mean_us));
  if (reference_us) {
    r.reference_us = reference_us;
    r.error_us = r.mean_us - *reference_us;
    // Last sample outside the band decides the convergence time.
    std::optional<std::size_t> last_out;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (std::abs(trace[i].line_delay * 1e6 - *reference_us) > band_us) last_out = i;
    }
    if (!last_out) {
      r.convergence_time = 0.0;
    } else if (*last_out + 1 < trace.size()) {
      r.convergence_time = trace[*last_out + 1].t - trace.front().t;
    }
  }
  return r;
}

}  // namespace ctvio
