"""Anchor-size calibration for a frozen 3D detector on an unlabeled target domain."""

from ._core import (
    AnchorSizes,
    CalibrationSettings,
    DeConfig,
    EmConfig,
    Error,
    GateConfig,
    Gmm,
    SurrogateConfig,
    SweepConfig,
    SyntheticDomain,
    SyntheticExtractor,
    build_reference_db,
    build_target_db,
    calibrate,
    fit_em,
    fitness,
    generate_domain,
    read_sfdb,
    run_cli,
    write_sfdb,
)

__all__ = [
    "AnchorSizes",
    "CalibrationSettings",
    "DeConfig",
    "EmConfig",
    "Error",
    "GateConfig",
    "Gmm",
    "SurrogateConfig",
    "SweepConfig",
    "SyntheticDomain",
    "SyntheticExtractor",
    "build_reference_db",
    "build_target_db",
    "calibrate",
    "fit_em",
    "fitness",
    "generate_domain",
    "read_sfdb",
    "run_cli",
    "write_sfdb",
]

__version__ = "0.1.0"
