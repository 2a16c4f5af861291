"""Motion files, ground-truth sidecars, result files and key/value configs.

Motion file layout (text, one record per line)::

    LEVERARM-MOTION 1 antennas=2
    0 qw qx qy qz tx ty tz b0x b0y b0z b1x b1y b1z
    1 ...

The quaternion and translation describe the IMU motion of the step, the
trailing triples the translation of each antenna. Meters and radians
throughout; numbers are written with 17 significant digits so a double
survives the round trip exactly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import AntennaCountMismatch, MalformedHeader, NonUnitQuaternion, RecordSyntax
from .geometry import Rotation, Transform, matrices_to_quats
from .qcqp import MotionStep, StepBatch, StepsLike, as_batch

MAGIC = "LEVERARM-MOTION"
FORMAT_VERSION = 1
QUAT_NORM_TOL = 1e-6
_HEADER = re.compile(r"^LEVERARM-MOTION (\d+) antennas=(\d+)$")
_INT = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class MotionHeader:
    version: int = FORMAT_VERSION
    antennas: int = 1

    def line(self) -> str:
        return f"{MAGIC} {self.version} antennas={self.antennas}"


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def _parse_header(line: Optional[str]) -> MotionHeader:
    if line is None:
        raise MalformedHeader("missing header", 1)
    match = _HEADER.match(line)
    if not match:
        raise MalformedHeader(f"expected '{MAGIC} <version> antennas=<count>', got {line[:60]!r}", 1)
    version, antennas = int(match.group(1)), int(match.group(2))
    if version != FORMAT_VERSION:
        raise MalformedHeader(f"unsupported format version {version}", 1)
    if antennas < 1:
        raise MalformedHeader("antenna count must be at least 1", 1)
    return MotionHeader(version, antennas)


def _parse_records(text: str):
    """Validated ``(header, indices, quats, translations, antenna)`` arrays."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = _parse_header(lines[0] if lines else None)
    o = header.antennas
    width = 8 + 3 * o
    quats = np.empty((len(lines) - 1, 4))
    trans = np.empty((len(lines) - 1, 3))
    antenna = np.empty((len(lines) - 1, o, 3))
    indices = []
    previous = None
    for row, line in enumerate(lines[1:]):
        lineno = row + 2
        fields = line.split(" ")
        if len(fields) < 8 or (len(fields) - 8) % 3:
            raise RecordSyntax(f"expected {width} space-separated fields, got {len(fields)}", lineno)
        if len(fields) != width:
            raise AntennaCountMismatch(
                f"record has {(len(fields) - 8) // 3} antenna triples, header declares {o}", lineno
            )
        if not _INT.match(fields[0]):
            raise RecordSyntax(f"step index {fields[0]!r} is not an integer", lineno)
        k = int(fields[0])
        if previous is not None and k <= previous:
            raise RecordSyntax(f"step index {k} does not increase (previous {previous})", lineno)
        previous = k
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError:
            bad = next(v for v in fields[1:] if not _is_float(v))
            raise RecordSyntax(f"cannot parse number {bad!r}", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise RecordSyntax("non-finite number", lineno)
        q = values[:4]
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise NonUnitQuaternion(f"quaternion norm {norm:.9g} is not 1", lineno)
        indices.append(k)
        quats[row] = q
        trans[row] = values[4:7]
        antenna[row] = np.reshape(values[7:], (o, 3))
    return header, indices, quats, trans, antenna


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def parse_motion_text(text: str) -> tuple[list[MotionStep], MotionHeader]:
    header, _, quats, trans, antenna = _parse_records(text)
    steps = [
        MotionStep(Transform(Rotation(q), t), tuple(b)) for q, t, b in zip(quats, trans, antenna)
    ]
    return steps, header


def parse_motion_file(path) -> tuple[list[MotionStep], MotionHeader]:
    """Read a motion file strictly.

    Raises
    ------
    MalformedHeader, RecordSyntax, NonUnitQuaternion, AntennaCountMismatch
        With the 1-based line number of the offending record.
    """
    return parse_motion_text(Path(path).read_text())


def read_motion_batch(path) -> tuple[Optional[StepBatch], MotionHeader]:
    """Like :func:`parse_motion_file` but returns arrays; ``None`` for an empty file."""
    header, _, quats, trans, antenna = _parse_records(Path(path).read_text())
    if len(quats) == 0:
        return None, header
    rotations = np.stack([Rotation(q).matrix for q in quats])
    return StepBatch(rotations, trans, antenna), header


def serialize_motion(steps, antennas: Optional[int] = None) -> str:
    """Canonical text of a list of steps or a :class:`StepBatch`.

    Quaternions are written with ``w >= 0``; step indices count from 0.
    """
    if isinstance(steps, StepBatch):
        quats = matrices_to_quats(steps.rotations)
        trans = steps.translations
        antenna = steps.antenna_motions
    else:
        steps = list(steps)
        if not steps and antennas is None:
            raise ValueError("antenna count is needed to write an empty motion file")
        quats = np.array([s.imu_motion.rotation.quat for s in steps]).reshape(-1, 4)
        trans = np.array([s.imu_motion.translation for s in steps]).reshape(-1, 3)
        o = steps[0].antenna_count if steps else antennas
        antenna = np.array([list(s.antenna_motions) for s in steps]).reshape(-1, o, 3)
    o = antenna.shape[1] if antennas is None else antennas
    if antenna.shape[1] != o:
        raise ValueError(f"steps carry {antenna.shape[1]} antennas, header would declare {o}")
    out = [MotionHeader(FORMAT_VERSION, o).line()]
    for k in range(len(quats)):
        values = np.concatenate([quats[k], trans[k], antenna[k].ravel()])
        out.append(str(k) + " " + " ".join(fmt(v) for v in values))
    return "\n".join(out) + "\n"


def write_motion_file(path, steps, antennas: Optional[int] = None) -> None:
    Path(path).write_text(serialize_motion(steps, antennas))


# Flat key/value configs -------------------------------------------------------------


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def parse_vector(text: str, size: Optional[int] = None) -> list[float]:
    values = [float(v) for v in text.replace(",", " ").split()]
    if size is not None and len(values) != size:
        raise ValueError(f"expected {size} numbers, got {text!r}")
    return values


def parse_list(text: str, kind=float) -> list:
    return [kind(v) for v in text.replace(",", " ").split()]


# Ground truth sidecar -------------------------------------------------------------------


def truth_path(motion_path) -> Path:
    p = Path(motion_path)
    return p.with_name(p.name + ".truth")


def write_truth(path, lever_arms: Sequence, metadata: dict) -> None:
    values = {f"lever_arm.{i}": " ".join(fmt(v) for v in arm) for i, arm in enumerate(lever_arms)}
    for key in sorted(metadata):
        value = metadata[key]
        if isinstance(value, (list, tuple)):
            value = " ".join(fmt(v) for v in value)
        elif isinstance(value, float):
            value = fmt(value)
        values[key] = value
    Path(path).write_text(format_config(values))


def read_truth(path) -> tuple[list[np.ndarray], dict]:
    values = read_config(path)
    arms = []
    i = 0
    while f"lever_arm.{i}" in values:
        arms.append(np.array(parse_vector(values.pop(f"lever_arm.{i}"), 3)))
        i += 1
    return arms, values


# Result files ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultFile:
    """Serializable summary of a calibration."""

    lever_arms: tuple
    mu: float
    primal_cost: float
    dual_bound: float
    duality_gap: float
    certificate: str
    null_space_dim: int
    verdict: Optional[str]
    alternatives: tuple = ()
    converged: bool = True
    tool: str = "leverarm"
    version: str = __version__
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_result(cls, result, metadata: Optional[dict] = None) -> ResultFile:
        return cls(
            lever_arms=tuple(tuple(float(v) for v in arm) for arm in result.lever_arms),
            mu=float(result.mu),
            primal_cost=float(result.primal_cost),
            dual_bound=float(result.dual_bound),
            duality_gap=float(result.duality_gap),
            certificate=result.certificate.value,
            null_space_dim=int(result.null_space_dim),
            verdict=None if result.verdict is None else result.verdict.value,
            alternatives=tuple(
                (int(i), tuple(float(v) for v in arm), float(cost)) for i, arm, cost in result.alternatives
            ),
            converged=bool(result.converged),
            metadata=dict(metadata or {}),
        )

    def to_json(self) -> str:
        data = asdict(self)
        data["alternatives"] = [
            {"antenna": i, "lever_arm": list(arm), "cost": cost} for i, arm, cost in self.alternatives
        ]
        data["lever_arms"] = [list(a) for a in self.lever_arms]
        data["format"] = "leverarm-result"
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ResultFile:
        data = json.loads(text)
        if data.pop("format", None) != "leverarm-result":
            raise ValueError("not a lever-arm result file")
        data["lever_arms"] = tuple(tuple(a) for a in data["lever_arms"])
        data["alternatives"] = tuple(
            (a["antenna"], tuple(a["lever_arm"]), a["cost"]) for a in data["alternatives"]
        )
        return cls(**data)


def write_result(path, result: ResultFile) -> None:
    Path(path).write_text(result.to_json())


def read_result(path) -> ResultFile:
    return ResultFile.from_json(Path(path).read_text())
