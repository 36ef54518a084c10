#pragma once

#include <string>
#include <vector>

#include "ctvio/estimator.hpp"
#include "ctvio/io.hpp"
#include "ctvio/simulator.hpp"

namespace ctvio {

/// Simulator settings from a key-value file with a [sim] section (and
/// optional [imu] / [camera] sections). Unknown keys throw ParseError.
SimConfig sim_config_from(const KeyValueFile& kv);

/// Estimator settings from [estimator], [oracle] and [imu] sections.
/// Unknown keys throw ParseError. Camera calibration and gravity are taken
/// from the dataset at run time.
EstimatorConfig estimator_config_from(const KeyValueFile& kv);

/// Oracle backed by the simulator's closed-form truth.
OracleData oracle_from_simulator(const Simulator& sim);

struct RunResult {
  std::vector<StampedPose> poses;
  std::vector<CalibrationSample> trace;
  std::vector<WindowReport> reports;
  double line_delay = 0.0;
  double seconds = 0.0;  // wall-clock time
};

/// Copies the dataset calibration into `config` and feeds the whole IMU
/// stream followed by every frame. An oracle is needed for oracle
/// initialization.
RunResult run_dataset(const Dataset& dataset, EstimatorConfig config, std::optional<OracleData> oracle = std::nullopt);

/// Writes trajectory.txt, line_delay.csv and windows.csv into `dir`.
void write_run_outputs(const std::string& dir, const RunResult& result);

}  // namespace ctvio
