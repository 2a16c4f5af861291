"""Lever-arm calibration between an IMU and GNSS antennas with optimality certificates."""

__version__ = "0.1.0"

from .errors import (
    AntennaCountMismatch,
    CalibrationError,
    DatasetError,
    FormatError,
    MalformedHeader,
    MotionError,
    NoFeasibleRecovery,
    NonUnitQuaternion,
    RecordSyntax,
    SolverFailure,
)
from .geometry import Rotation, Transform, compose, kron, relative_motion, transform_point
from .qcqp import (
    ArmLength,
    ComponentMagnitude,
    MotionReport,
    MotionStep,
    QcqpProblem,
    StepBatch,
    Verdict,
    accumulate,
    assess_motion,
    build_constraints,
)
from .sim import Flat, Hilly, MotionDataset, NoiseMode, SimConfig, add_noise, simulate
from .solver import (
    CalibrationResult,
    Certificate,
    DualSolution,
    SignPolicy,
    SolverOptions,
    calibrate,
    certify,
    disambiguate_sign,
    recover_primal,
    refine_local,
    solve_dual,
)
