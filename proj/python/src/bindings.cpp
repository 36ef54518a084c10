#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ctvio/io.hpp"
#include "ctvio/lie.hpp"
#include "ctvio/pipeline.hpp"

namespace py = pybind11;
using namespace ctvio;

namespace {

// Rows of t, tx, ty, tz, qx, qy, qz, qw.
Eigen::MatrixXd poses_to_array(const std::vector<StampedPose>& poses) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(poses.size()), 8);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::Quaterniond q = so3::to_quaternion(poses[i].pose.R);
    out(row, 0) = poses[i].t;
    out.block<1, 3>(row, 1) = poses[i].pose.p.transpose();
    out.block<1, 4>(row, 4) << q.x(), q.y(), q.z(), q.w();
  }
  return out;
}

std::vector<StampedPose> array_to_poses(const Eigen::MatrixXd& a) {
  if (a.cols() != 8) throw std::invalid_argument("expected an N x 8 array of t, tx, ty, tz, qx, qy, qz, qw");
  std::vector<StampedPose> out;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Eigen::Quaterniond q(a(i, 7), a(i, 4), a(i, 5), a(i, 6));
    out.push_back({a(i, 0), Pose{so3::from_quaternion(q.normalized()), a.block<1, 3>(i, 1).transpose()}, std::nullopt});
  }
  return out;
}

Eigen::MatrixXd trace_to_array(const std::vector<CalibrationSample>& trace) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trace.size()), 2);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = trace[i].t;
    out(static_cast<Eigen::Index>(i), 1) = trace[i].line_delay;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continuous-time rolling-shutter visual-inertial odometry";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InitializationError>(m, "InitializationError", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  m.def("so3_exp", &so3::exp, py::arg("phi"));
  m.def("so3_log", &so3::log, py::arg("R"));

  py::enum_<SpeedPreset>(m, "SpeedPreset")
      .value("slow", SpeedPreset::kSlow)
      .value("medium", SpeedPreset::kMedium)
      .value("fast", SpeedPreset::kFast);

  py::class_<SimConfig>(m, "SimConfig")
      .def(py::init<>())
      .def_static("noise_free", &SimConfig::noise_free)
      .def_readwrite("duration", &SimConfig::duration)
      .def_readwrite("imu_rate", &SimConfig::imu_rate)
      .def_readwrite("frame_rate", &SimConfig::frame_rate)
      .def_readwrite("line_delay", &SimConfig::line_delay)
      .def_readwrite("landmark_count", &SimConfig::landmark_count)
      .def_readwrite("pixel_sigma", &SimConfig::pixel_sigma)
      .def_readwrite("speed", &SimConfig::speed)
      .def_readwrite("static_duration", &SimConfig::static_duration)
      .def_readwrite("spline_truth", &SimConfig::spline_truth)
      .def_readwrite("seed", &SimConfig::seed)
      .def("validate", &SimConfig::validate);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("imu_count", [](const Dataset& d) { return d.imu.size(); })
      .def_property_readonly("frame_count", [](const Dataset& d) { return d.frames.size(); })
      .def_property_readonly("line_delay", [](const Dataset& d) { return d.line_delay; })
      .def_property_readonly("ground_truth", [](const Dataset& d) { return poses_to_array(d.ground_truth); })
      .def_property_readonly("imu", [](const Dataset& d) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(d.imu.size()), 7);
        for (std::size_t i = 0; i < d.imu.size(); ++i) {
          const auto r = static_cast<Eigen::Index>(i);
          out(r, 0) = d.imu[i].t;
          out.block<1, 3>(r, 1) = d.imu[i].gyro.transpose();
          out.block<1, 3>(r, 4) = d.imu[i].accel.transpose();
        }
        return out;
      });

  m.def("simulate", [](const SimConfig& c) { return Simulator(c).generate(); }, py::arg("config"),
        "Generate a synthetic dataset with ground truth.");
  m.def("write_dataset", &write_dataset, py::arg("dir"), py::arg("dataset"));
  m.def("load_dataset", &load_dataset, py::arg("dir"));

  py::enum_<InitMode>(m, "InitMode").value("oracle", InitMode::kOracle).value("coarse", InitMode::kCoarse);

  py::class_<EstimatorConfig>(m, "EstimatorConfig")
      .def(py::init<>())
      .def_readwrite("knot_interval", &EstimatorConfig::knot_interval)
      .def_readwrite("window_size", &EstimatorConfig::window_size)
      .def_readwrite("max_features", &EstimatorConfig::max_features)
      .def_readwrite("strategy", &EstimatorConfig::strategy)
      .def_readwrite("line_delay_init", &EstimatorConfig::line_delay_init)
      .def_readwrite("estimate_line_delay", &EstimatorConfig::estimate_line_delay)
      .def_readwrite("init", &EstimatorConfig::init)
      .def_readwrite("seed", &EstimatorConfig::seed)
      .def("validate", &EstimatorConfig::validate);

  m.def("load_config",
        [](const std::string& path) {
          const KeyValueFile kv = KeyValueFile::load(path);
          return py::make_tuple(sim_config_from(kv), estimator_config_from(kv));
        },
        py::arg("path"), "Parse a run configuration file into (SimConfig, EstimatorConfig).");

  py::class_<RunResult>(m, "RunResult")
      .def_property_readonly("poses", [](const RunResult& r) { return poses_to_array(r.poses); })
      .def_property_readonly("trace", [](const RunResult& r) { return trace_to_array(r.trace); })
      .def_readonly("line_delay", &RunResult::line_delay)
      .def_readonly("seconds", &RunResult::seconds)
      .def_property_readonly("windows", [](const RunResult& r) { return r.reports.size(); })
      .def("write", [](const RunResult& r, const std::string& dir) { write_run_outputs(dir, r); }, py::arg("dir"));

  m.def("run",
        [](const Dataset& d, const EstimatorConfig& c) {
          std::optional<OracleData> oracle;
          if (c.init == InitMode::kOracle) oracle = oracle_from_dataset(d);
          py::gil_scoped_release release;
          return run_dataset(d, c, std::move(oracle));
        },
        py::arg("dataset"), py::arg("config"), "Run the estimator over a whole dataset.");

  m.def("ape",
        [](const Eigen::MatrixXd& est, const Eigen::MatrixXd& gt, double tolerance) {
          return compute_ape(array_to_poses(est), array_to_poses(gt), tolerance).rmse;
        },
        py::arg("estimate"), py::arg("ground_truth"), py::arg("tolerance") = 1e-3,
        "Translational RMSE in metres after rigid alignment.");

  m.def("read_trajectory", [](const std::string& path) { return poses_to_array(read_trajectory(path)); },
        py::arg("path"));
  m.def("write_trajectory",
        [](const std::string& path, const Eigen::MatrixXd& poses) { write_trajectory(path, array_to_poses(poses)); },
        py::arg("path"), py::arg("poses"));

  m.def("calibration_report",
        [](const Eigen::MatrixXd& trace, double window, std::optional<double> ref_us) {
          if (trace.cols() != 2) throw std::invalid_argument("expected an N x 2 array of t, line_delay_s");
          std::vector<CalibrationSample> samples;
          for (Eigen::Index i = 0; i < trace.rows(); ++i) samples.push_back({trace(i, 0), trace(i, 1)});
          const CalibrationReport r = calibration_report(samples, window, ref_us);
          py::dict out;
          out["mean_us"] = r.mean_us;
          out["std_us"] = r.std_us;
          out["final_us"] = r.final_us;
          out["samples"] = r.window_samples;
          if (r.error_us) out["error_us"] = *r.error_us;
          if (r.convergence_time) out["convergence_time"] = *r.convergence_time;
          return out;
        },
        py::arg("trace"), py::arg("window") = 5.0, py::arg("ref_us") = py::none(),
        "Mean and standard deviation of the line delay over the end of a trace.");
}
