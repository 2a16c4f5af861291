"""Exception types raised across the package."""


class CalibrationError(Exception):
    """Base class for data and solver failures."""


class DatasetError(CalibrationError, ValueError):
    """Empty dataset, inconsistent antenna counts or invalid prior."""


class MotionError(CalibrationError):
    """The motion data does not support the requested calibration."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverFailure(CalibrationError):
    def __init__(self, message, status=None):
        super().__init__(message if status is None else f"{message} (status: {status})")
        self.status = status


class NoFeasibleRecovery(CalibrationError):
    """No real candidate in the null space satisfies the constraints."""


class FormatError(CalibrationError, ValueError):
    """Base class for motion/result file errors; ``line`` is 1-based when set."""

    kind = "FormatError"

    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{self.kind}: {where}{message}")


class MalformedHeader(FormatError):
    kind = "MalformedHeader"


class RecordSyntax(FormatError):
    kind = "RecordSyntax"


class NonUnitQuaternion(FormatError):
    kind = "NonUnitQuaternion"


class AntennaCountMismatch(FormatError):
    kind = "AntennaCountMismatch"
