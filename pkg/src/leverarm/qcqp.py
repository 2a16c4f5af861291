"""Construction of the lever-arm QCQP from motion data.

The decision vector is ``z = [x_0, ..., x_{o-1}, mu]`` with one 3-vector per
antenna and the homogenization scalar last. For every step ``k`` and antenna
``i`` the IMU motion ``A_k = (R, t)`` and antenna motion ``b_{i,k}`` give the
residual ``(R - I) x_i + (t - b_{i,k}) mu``; optional cross rows compare two
antennas without using the IMU translation. The cost matrix is the sum of
``M^T M`` over all rows.

Antenna indices and pair identifiers are 0-based.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DatasetError
from .geometry import Transform, basis_outer, kron, unit_vector

RANK_TOL = 1e-8
ROTATING_ANGLE = 1e-3
NONCOLINEAR_DEG = 5.0
MAX_AXES = 500

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class MotionStep:
    """IMU motion ``A_k`` and the translation of every antenna over the same step."""

    imu_motion: Transform
    antenna_motions: tuple

    def __post_init__(self):
        motions = tuple(np.array(b, dtype=float).reshape(3) for b in self.antenna_motions)
        if not motions:
            raise DatasetError("a motion step needs at least one antenna measurement")
        for b in motions:
            b.flags.writeable = False
        object.__setattr__(self, "antenna_motions", motions)

    @property
    def antenna_count(self) -> int:
        return len(self.antenna_motions)

    def __eq__(self, other):
        if not isinstance(other, MotionStep):
            return NotImplemented
        return self.imu_motion == other.imu_motion and len(self.antenna_motions) == len(
            other.antenna_motions
        ) and all(np.array_equal(a, b) for a, b in zip(self.antenna_motions, other.antenna_motions))


@dataclass(frozen=True)
class StepBatch:
    """Array form of a list of motion steps.

    ``rotations`` is ``(K, 3, 3)``, ``translations`` ``(K, 3)`` and
    ``antenna_motions`` ``(K, o, 3)``.
    """

    rotations: np.ndarray
    translations: np.ndarray
    antenna_motions: np.ndarray

    def __post_init__(self):
        k = self.rotations.shape[0]
        if self.translations.shape != (k, 3) or self.antenna_motions.shape[0] != k:
            raise DatasetError("inconsistent step array shapes")
        if self.antenna_motions.ndim != 3 or self.antenna_motions.shape[2] != 3:
            raise DatasetError("antenna motions must have shape (K, o, 3)")

    def __len__(self):
        return self.rotations.shape[0]

    @property
    def antenna_count(self) -> int:
        return self.antenna_motions.shape[1]

    @classmethod
    def from_steps(cls, steps: Sequence[MotionStep]) -> StepBatch:
        if len(steps) == 0:
            raise DatasetError("empty dataset")
        o = steps[0].antenna_count
        for k, step in enumerate(steps):
            if step.antenna_count != o:
                raise DatasetError(
                    f"step {k} has {step.antenna_count} antenna motions, expected {o}"
                )
        rotations = np.stack([s.imu_motion.rotation.matrix for s in steps])
        translations = np.stack([s.imu_motion.translation for s in steps])
        antennas = np.array([[b for b in s.antenna_motions] for s in steps], dtype=float)
        return cls(rotations, translations, antennas)

    def to_steps(self) -> list[MotionStep]:
        from .geometry import Rotation, matrices_to_quats

        quats = matrices_to_quats(self.rotations)
        return [
            MotionStep(Transform(Rotation(q), t), tuple(b))
            for q, t, b in zip(quats, self.translations, self.antenna_motions)
        ]

    def __getitem__(self, item) -> StepBatch:
        if isinstance(item, int):
            item = slice(item, item + 1 or None)
        return StepBatch(self.rotations[item], self.translations[item], self.antenna_motions[item])

    @staticmethod
    def concatenate(batches: Sequence[StepBatch]) -> StepBatch:
        return StepBatch(
            np.concatenate([b.rotations for b in batches]),
            np.concatenate([b.translations for b in batches]),
            np.concatenate([b.antenna_motions for b in batches]),
        )


StepsLike = Union[Sequence[MotionStep], StepBatch]


def as_batch(steps: StepsLike) -> StepBatch:
    if isinstance(steps, StepBatch):
        if len(steps) == 0:
            raise DatasetError("empty dataset")
        return steps
    return StepBatch.from_steps(list(steps))


# Priors -------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmLength:
    """Known distance ``length`` (m) from the IMU to antenna ``antenna``."""

    antenna: int
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise DatasetError(f"arm length must be positive, got {self.length}")


@dataclass(frozen=True)
class ComponentMagnitude:
    """Known absolute value of one lever-arm component; the sign stays open."""

    antenna: int
    axis: str
    magnitude: float

    def __post_init__(self):
        if self.axis not in AXES:
            raise DatasetError(f"axis must be one of x, y, z, got {self.axis!r}")
        if not self.magnitude >= 0:
            raise DatasetError(f"component magnitude must be non-negative, got {self.magnitude}")


PriorConstraint = Union[ArmLength, ComponentMagnitude]


# Problem ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QcqpProblem:
    """Cost and constraint matrices of one calibration problem.

    ``p_q`` holds one matrix per prior, in the order of ``priors``. The
    homogenization constraint ``1 + zᵀ p_h z = 0`` is always present.
    """

    o: int
    q_matrix: np.ndarray
    p_h: np.ndarray
    p_q: tuple = ()
    priors: tuple = ()
    use_regularization: bool = False
    step_count: int = 0

    @property
    def n(self) -> int:
        return 3 * self.o + 1

    @property
    def mu_index(self) -> int:
        return self.n - 1

    @property
    def pair_count(self) -> int:
        return self.o * (self.o - 1) // 2

    def cost(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.q_matrix @ z)

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        """``[g_h(z), g_1(z), ...]``; all zero at a feasible point."""
        z = np.asarray(z, dtype=float)
        values = [1.0 + z @ self.p_h @ z]
        values.extend(z @ p @ z for p in self.p_q)
        return np.array(values)

    def with_priors(self, priors: Sequence[PriorConstraint]) -> QcqpProblem:
        p_h, p_q = build_constraints(priors, self.n)
        return QcqpProblem(
            self.o, self.q_matrix, p_h, tuple(p_q), tuple(priors), self.use_regularization, self.step_count
        )

    def __add__(self, other: QcqpProblem) -> QcqpProblem:
        if (self.o, self.use_regularization, self.priors) != (other.o, other.use_regularization, other.priors):
            raise DatasetError("cannot merge problems with different layouts")
        return QcqpProblem(
            self.o,
            self.q_matrix + other.q_matrix,
            self.p_h,
            self.p_q,
            self.priors,
            self.use_regularization,
            self.step_count + other.step_count,
        )

    def lever_arms(self, z: np.ndarray) -> list[np.ndarray]:
        z = np.asarray(z, dtype=float)
        return [z[3 * i : 3 * i + 3].copy() for i in range(self.o)]


def pair_index(i: int, j: int, o: int) -> int:
    """Lexicographic id of antenna pair ``(i, j)``, ``i < j``."""
    if not 0 <= i < j < o:
        raise IndexError(f"invalid antenna pair ({i}, {j}) for {o} antennas")
    return sum(o - 1 - a for a in range(i)) + (j - i - 1)


def antenna_pairs(o: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(o), 2))


def build_single_row(a: Transform, b: Sequence[float]) -> np.ndarray:
    """``[R_A - I | t_A - b]`` (3x4)."""
    m = np.empty((3, 4))
    m[:, :3] = a.rotation.matrix - np.eye(3)
    m[:, 3] = a.translation - np.asarray(b, dtype=float)
    return m


def build_multi_row(a: Transform, b_i: Sequence[float], i: int, o: int) -> np.ndarray:
    """Rows of antenna ``i`` inflated to the ``o``-antenna layout, shape ``(3o, 3o+1)``."""
    if not 0 <= i < o:
        raise IndexError(f"antenna index {i} out of range for {o} antennas")
    single = build_single_row(a, b_i)
    rot = kron(basis_outer(i, i, o), single[:, :3])
    trans = kron(unit_vector(i, o), single[:, 3:])
    return np.hstack([rot, trans])


def build_cross_row(
    a: Transform, b_i: Sequence[float], b_j: Sequence[float], i: int, j: int, o: int
) -> np.ndarray:
    """Cross-antenna rows for pair ``(i, j)``, shape ``(3l, 3o+1)`` with ``l = o(o-1)/2``.

    Encodes ``(R - I)(x_j - x_i) + (b_i - b_j) mu = 0``, which holds for any
    rigidly mounted pair and does not involve the IMU translation.
    """
    p = pair_index(i, j, o)
    l = o * (o - 1) // 2
    d = a.rotation.matrix - np.eye(3)
    rot = kron(basis_outer(p, j, l, o), d) - kron(basis_outer(p, i, l, o), d)
    trans = kron(unit_vector(p, l), (np.asarray(b_i, dtype=float) - np.asarray(b_j, dtype=float)).reshape(3, 1))
    return np.hstack([rot, trans])


def accumulate(
    steps: StepsLike,
    use_regularization: bool = False,
    priors: Sequence[PriorConstraint] = (),
    regularization_weight: float = 1.0,
) -> QcqpProblem:
    """Sum ``MᵀM`` over all steps, antennas and (optionally) antenna pairs.

    Equivalent to summing ``build_multi_row(...)ᵀ build_multi_row(...)`` and
    the cross-row products, but evaluated block-wise on the step arrays.
    """
    batch = as_batch(steps)
    o = batch.antenna_count
    n = 3 * o + 1
    d = batch.rotations - np.eye(3)
    dtd = np.einsum("kji,kjl->il", d, d)
    residual = batch.translations[:, None, :] - batch.antenna_motions  # (K, o, 3)

    q = np.zeros((n, n))
    mu = n - 1
    for i in range(o):
        blk = slice(3 * i, 3 * i + 3)
        q[blk, blk] += dtd
        cross = np.einsum("kji,kj->i", d, residual[:, i])
        q[blk, mu] += cross
        q[mu, blk] += cross
        q[mu, mu] += np.einsum("kj,kj->", residual[:, i], residual[:, i])

    if use_regularization and o > 1:
        w = float(regularization_weight)
        for i, j in antenna_pairs(o):
            bi, bj = slice(3 * i, 3 * i + 3), slice(3 * j, 3 * j + 3)
            diff = batch.antenna_motions[:, i] - batch.antenna_motions[:, j]
            dtdiff = np.einsum("kji,kj->i", d, diff)
            q[bi, bi] += w * dtd
            q[bj, bj] += w * dtd
            q[bi, bj] -= w * dtd
            q[bj, bi] -= w * dtd
            q[bi, mu] -= w * dtdiff
            q[mu, bi] -= w * dtdiff
            q[bj, mu] += w * dtdiff
            q[mu, bj] += w * dtdiff
            q[mu, mu] += w * np.einsum("kj,kj->", diff, diff)

    q = 0.5 * (q + q.T)
    p_h, p_q = build_constraints(priors, n)
    return QcqpProblem(o, q, p_h, tuple(p_q), tuple(priors), bool(use_regularization), len(batch))


def homogenization_matrix(n: int) -> np.ndarray:
    p_h = np.zeros((n, n))
    p_h[n - 1, n - 1] = -1.0
    return p_h


def build_constraints(priors: Sequence[PriorConstraint], n: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Homogenization matrix and one quadratic constraint matrix per prior.

    ``ArmLength(i, s)`` gives ``diag(E_i ⊗ I_3, -s²)``; ``ComponentMagnitude``
    keeps only the selected diagonal entry of the identity block.
    """
    o = (n - 1) // 3
    p_q = []
    for prior in priors:
        if not 0 <= prior.antenna < o:
            raise DatasetError(f"prior refers to antenna {prior.antenna}, but there are {o} antennas")
        if isinstance(prior, ArmLength):
            block, value = np.eye(3), prior.length
        elif isinstance(prior, ComponentMagnitude):
            block, value = np.zeros((3, 3)), prior.magnitude
            block[AXES[prior.axis], AXES[prior.axis]] = 1.0
        else:
            raise DatasetError(f"unknown prior {prior!r}")
        p = np.zeros((n, n))
        p[: n - 1, : n - 1] = kron(basis_outer(prior.antenna, prior.antenna, o), block)
        p[n - 1, n - 1] = -(value**2)
        p_q.append(p)
    return homogenization_matrix(n), p_q


# Motion assessment ----------------------------------------------------------------


class Verdict(str, enum.Enum):
    FULLY_OBSERVABLE = "FullyObservable"
    PLANAR_ONLY = "PlanarOnly"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class MotionReport:
    rotation_rank: int
    antenna_ranks: tuple
    axis_spread: tuple  # two principal spread angles, radians
    max_axis_angle: float  # radians
    rotating_steps: int
    verdict: Verdict = field(default=Verdict.DEGENERATE)

    def summary(self) -> str:
        return (
            f"verdict: {self.verdict.value}\n"
            f"rotation rank: {self.rotation_rank}\n"
            f"antenna ranks: {' '.join(str(r) for r in self.antenna_ranks)}\n"
            f"rotating steps: {self.rotating_steps}\n"
            f"max axis angle [deg]: {np.degrees(self.max_axis_angle):.6g}\n"
            f"axis spread [deg]: {np.degrees(self.axis_spread[0]):.6g} {np.degrees(self.axis_spread[1]):.6g}"
        )


def numerical_rank(a: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _max_line_angle(axes: np.ndarray) -> float:
    if len(axes) < 2:
        return 0.0
    min_dot = 1.0
    for start in range(0, len(axes), 500):
        dots = np.abs(axes[start : start + 500] @ axes.T)
        min_dot = min(min_dot, float(dots.min()))
    return float(np.arccos(np.clip(min_dot, 0.0, 1.0)))


def assess_motion(steps: StepsLike) -> MotionReport:
    """Check whether the rotations excite all three lever-arm directions.

    Rotation axes are taken from steps turning by more than 1e-3 rad. When
    there are more than 500 of them, the pairwise axis test uses the 500
    largest rotations.
    """
    from .geometry import matrices_to_rotvecs

    batch = as_batch(steps)
    d = batch.rotations - np.eye(3)
    rotation_rank = numerical_rank(d.reshape(-1, 3))
    residual = batch.translations[:, None, :] - batch.antenna_motions
    antenna_ranks = tuple(
        numerical_rank(np.concatenate([d, residual[:, i, :, None]], axis=2).reshape(-1, 4))
        for i in range(batch.antenna_count)
    )

    rotvecs = matrices_to_rotvecs(batch.rotations)
    angles = np.linalg.norm(rotvecs, axis=1)
    rotating = angles > ROTATING_ANGLE
    axes = rotvecs[rotating] / angles[rotating, None]
    if len(axes) == 0:
        spread = (0.0, 0.0)
        max_angle = 0.0
    else:
        scatter = axes.T @ axes
        ev = np.clip(np.sort(np.linalg.eigvalsh(scatter))[::-1], 0.0, None)
        spread = (float(np.arctan(np.sqrt(ev[1] / ev[0]))), float(np.arctan(np.sqrt(ev[2] / ev[0]))))
        if len(axes) > MAX_AXES:
            order = np.argsort(-angles[rotating], kind="stable")[:MAX_AXES]
            axes = axes[np.sort(order)]
        max_angle = _max_line_angle(axes)

    if rotating.sum() == 0 or rotation_rank == 0:
        verdict = Verdict.DEGENERATE
    elif rotation_rank < 3 or max_angle < np.radians(NONCOLINEAR_DEG):
        verdict = Verdict.PLANAR_ONLY
    else:
        verdict = Verdict.FULLY_OBSERVABLE
    return MotionReport(rotation_rank, antenna_ranks, spread, max_angle, int(rotating.sum()), verdict)
