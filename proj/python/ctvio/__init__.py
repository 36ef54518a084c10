"""Continuous-time rolling-shutter visual-inertial odometry."""

from ._core import (
    Dataset,
    DomainError,
    EstimatorConfig,
    InitializationError,
    InitMode,
    ParseError,
    RunResult,
    SimConfig,
    SpeedPreset,
    ape,
    calibration_report,
    load_config,
    load_dataset,
    read_trajectory,
    run,
    simulate,
    so3_exp,
    so3_log,
    write_dataset,
    write_trajectory,
)

__all__ = [
    "Dataset",
    "DomainError",
    "EstimatorConfig",
    "InitializationError",
    "InitMode",
    "ParseError",
    "RunResult",
    "SimConfig",
    "SpeedPreset",
    "ape",
    "calibration_report",
    "load_config",
    "load_dataset",
    "read_trajectory",
    "run",
    "simulate",
    "so3_exp",
    "so3_log",
    "write_dataset",
    "write_trajectory",
]
