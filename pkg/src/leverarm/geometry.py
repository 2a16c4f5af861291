"""Rigid-body transform algebra.

Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``.
Transforms follow the frame-forward convention: composing ``a`` with ``b``
multiplies the homogeneous matrices as ``T_a @ T_b`` and a point is mapped by
``R p + t``.

Besides the value types, this module holds the batched array helpers that the
simulator and the problem builder use on whole trajectories, plus the small
Kronecker / canonical-basis utilities needed to lay out multi-antenna rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

QUAT_TOL = 1e-9


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError(f"cannot build a rotation from quaternion {q}")
    # Leave already-normalized input alone so that repeated parsing is idempotent.
    if abs(norm - 1.0) > 1e-15:
        q = q / norm
    if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q[1:])):
        q = -q
    return q


def _first_nonzero_negative(v: np.ndarray) -> bool:
    for value in v:
        if value != 0.0:
            return value < 0.0
    return False


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two ``(w, x, y, z)`` quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(3) backed by a canonical unit quaternion."""

    quat: np.ndarray

    def __post_init__(self):
        q = _canonical_quat(self.quat)
        q.flags.writeable = False
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> Rotation:
        matrix = np.asarray(matrix, dtype=float)
        quat = _ScipyRotation.from_matrix(matrix).as_quat(scalar_first=True)
        rot = cls(quat)
        # Keep the caller's matrix when it is already orthonormal so that
        # matrix -> Rotation -> matrix does not pick up conversion noise.
        if np.allclose(matrix.T @ matrix, np.eye(3), atol=1e-12, rtol=0.0) and np.isclose(
            np.linalg.det(matrix), 1.0, atol=1e-12, rtol=0.0
        ):
            rot.__dict__["matrix"] = _frozen(matrix.copy())
        return rot

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> Rotation:
        rotvec = np.asarray(rotvec, dtype=float)
        angle = np.linalg.norm(rotvec)
        if angle < 1e-300:
            return cls.identity()
        half = 0.5 * angle
        return cls(np.concatenate([[np.cos(half)], np.sin(half) * rotvec / angle]))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> Rotation:
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @cached_property
    def matrix(self) -> np.ndarray:
        return _frozen(quat_to_matrix(self.quat))

    @property
    def angle(self) -> float:
        """Rotation angle in ``[0, pi]``."""
        return 2.0 * float(np.arctan2(np.linalg.norm(self.quat[1:]), self.quat[0]))

    @property
    def rotvec(self) -> np.ndarray:
        vec = self.quat[1:]
        s = np.linalg.norm(vec)
        if s < 1e-300:
            return np.zeros(3)
        return vec / s * self.angle

    def inverse(self) -> Rotation:
        return Rotation(self.quat * np.array([1.0, -1.0, -1.0, -1.0]))

    def __matmul__(self, other: Rotation) -> Rotation:
        return Rotation(quat_multiply(self.quat, other.quat))

    def apply(self, v: Sequence[float]) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return bool(np.array_equal(self.quat, other.quat))

    def __hash__(self):
        return hash(self.quat.tobytes())

    def __repr__(self):
        return f"Rotation(quat={self.quat.tolist()})"


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform ``(R, t)``; translation in meters."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation):
            object.__setattr__(self, "rotation", Rotation(self.rotation))
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Transform:
        return cls()

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> Transform:
        matrix = np.asarray(matrix, dtype=float)
        return cls(Rotation.from_matrix(matrix[:3, :3]), matrix[:3, 3])

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> Transform:
        return cls(Rotation.identity(), t)

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.matrix
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> Transform:
        r_inv = self.rotation.inverse()
        return Transform(r_inv, -(r_inv.matrix @ self.translation))

    def __matmul__(self, other: Transform) -> Transform:
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return self.rotation == other.rotation and bool(
            np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation, self.translation.tobytes()))

    def __repr__(self):
        return f"Transform(quat={self.rotation.quat.tolist()}, translation={self.translation.tolist()})"

    def isclose(self, other: Transform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))


def compose(a: Transform, b: Transform) -> Transform:
    """Return ``a ∘ b`` (homogeneous product ``T_a T_b``)."""
    return Transform(a.rotation @ b.rotation, a.rotation.matrix @ b.translation + a.translation)


def transform_point(t: Transform, p: Sequence[float]) -> np.ndarray:
    return t.rotation.matrix @ np.asarray(p, dtype=float) + t.translation


def relative_motion(pose_k: Transform, pose_k1: Transform) -> Transform:
    """Motion from ``pose_k`` to ``pose_k1``, i.e. ``pose_k⁻¹ ∘ pose_k1``."""
    return compose(pose_k.inverse(), pose_k1)


def rot_x(angle: float) -> Rotation:
    return Rotation.from_axis_angle([1.0, 0.0, 0.0], angle)


def rot_y(angle: float) -> Rotation:
    return Rotation.from_axis_angle([0.0, 1.0, 0.0], angle)


def rot_z(angle: float) -> Rotation:
    return Rotation.from_axis_angle([0.0, 0.0, 1.0], angle)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# Kronecker / basis helpers ---------------------------------------------------


def kron(a, b) -> np.ndarray:
    return np.kron(np.atleast_2d(np.asarray(a, dtype=float)), np.atleast_2d(np.asarray(b, dtype=float)))


def unit_vector(i: int, size: int) -> np.ndarray:
    """Canonical basis column ``e_i`` of length ``size`` (0-based ``i``)."""
    if not 0 <= i < size:
        raise IndexError(f"basis index {i} out of range for size {size}")
    e = np.zeros((size, 1))
    e[i, 0] = 1.0
    return e


def basis_outer(p: int, i: int, rows: int, cols: int | None = None) -> np.ndarray:
    """``E_{p,i} = e_p e_iᵀ``; with ``p == i`` and square shape this is ``E_i``."""
    cols = rows if cols is None else cols
    return unit_vector(p, rows) @ unit_vector(i, cols).T


# Batched helpers ---------------------------------------------------------------


def rotvecs_to_matrices(rotvecs: np.ndarray) -> np.ndarray:
    return _ScipyRotation.from_rotvec(np.asarray(rotvecs, dtype=float).reshape(-1, 3)).as_matrix()


def matrices_to_rotvecs(matrices: np.ndarray) -> np.ndarray:
    return _ScipyRotation.from_matrix(np.asarray(matrices, dtype=float).reshape(-1, 3, 3)).as_rotvec()


def matrices_to_quats(matrices: np.ndarray) -> np.ndarray:
    """``(N, 3, 3)`` rotation matrices to canonical ``(N, 4)`` ``wxyz`` quaternions."""
    q = _ScipyRotation.from_matrix(np.asarray(matrices, dtype=float).reshape(-1, 3, 3)).as_quat(
        scalar_first=True
    )
    q[q[:, 0] < 0] *= -1.0
    # Half-turns (w == 0): same tie-break as Rotation, first nonzero vector entry positive.
    for k in np.flatnonzero(q[:, 0] == 0.0):
        if _first_nonzero_negative(q[k, 1:]):
            q[k] *= -1.0
    return q


def relative_motions(rotations: np.ndarray, translations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``relative_motion`` between consecutive poses.

    Parameters
    ----------
    rotations : (N, 3, 3) world-from-body rotations.
    translations : (N, 3) world positions.

    Returns
    -------
    (N-1, 3, 3) relative rotations and (N-1, 3) relative translations, both
    expressed in the frame of the earlier pose.
    """
    r_k = rotations[:-1]
    r_rel = np.einsum("kji,kjl->kil", r_k, rotations[1:])
    t_rel = np.einsum("kji,kj->ki", r_k, translations[1:] - translations[:-1])
    return r_rel, t_rel


def rotation_angles(matrices: np.ndarray) -> np.ndarray:
    """Rotation angle of each matrix, robust near 0 and pi."""
    return np.linalg.norm(matrices_to_rotvecs(matrices), axis=1)
