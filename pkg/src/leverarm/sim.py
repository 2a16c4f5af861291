"""Synthetic calibration data.

A 2D path is lifted onto a height field, each point gets an orientation from
the path tangent and the surface normal, and the antenna poses follow from the
IMU poses and the lever arms. Noise is added to the poses of every sensor
independently; the per-step motions are then re-derived, so neighbouring
motions share noise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .geometry import (
    Rotation,
    Transform,
    matrices_to_quats,
    relative_motions,
    rotation_angles,
    rotvecs_to_matrices,
)
from .qcqp import MotionStep, StepBatch

# Ranges for the sinusoid mixture, per harmonic. Frequencies are in cycles per step.
AMPLITUDE_RANGE = (0.5, 2.0)
FREQUENCY_RANGE = (0.04, 0.16)
HARMONICS = 3
STEP_LENGTH = 1.0


@dataclass(frozen=True)
class Hilly:
    """Height field ``amplitude * sin(wx x) * sin(wy y)``."""

    amplitude: float = 1.0
    frequencies: tuple = (2 * np.pi / 6.0, 2 * np.pi / 6.0)

    def height(self, xy: np.ndarray) -> np.ndarray:
        wx, wy = self.frequencies
        return self.amplitude * np.sin(wx * xy[:, 0]) * np.sin(wy * xy[:, 1])

    def gradient(self, xy: np.ndarray) -> np.ndarray:
        wx, wy = self.frequencies
        sx, cx = np.sin(wx * xy[:, 0]), np.cos(wx * xy[:, 0])
        sy, cy = np.sin(wy * xy[:, 1]), np.cos(wy * xy[:, 1])
        return self.amplitude * np.stack([wx * cx * sy, wy * sx * cy], axis=1)


@dataclass(frozen=True)
class Flat:
    def height(self, xy: np.ndarray) -> np.ndarray:
        return np.zeros(len(xy))

    def gradient(self, xy: np.ndarray) -> np.ndarray:
        return np.zeros((len(xy), 2))


Surface = Union[Hilly, Flat]


class PathKind(str, enum.Enum):
    SINUSOID_MIXTURE = "SinusoidMixture"
    EXTERNAL_TRAJECTORY = "ExternalTrajectory"


class NoiseMode(str, enum.Enum):
    EQUAL = "Equal"
    IMU_SKEWED = "ImuSkewed"


# The IMU is assumed to measure rotation better and translation worse than the antennas.
IMU_SKEW = 6.0


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``noise`` is either a relative level (fraction of the mean per-step motion)
    or an absolute ``(sigma_trans [m], sigma_rot [rad])`` pair. ``steps`` is the
    number of motions, i.e. one less than the number of poses.
    """

    steps: int = 1000
    lever_arms: tuple = ((0.0, 0.6, 0.8),)
    surface: Surface = field(default_factory=Hilly)
    path: PathKind = PathKind.SINUSOID_MIXTURE
    noise: Union[float, tuple] = 0.0
    noise_mode: NoiseMode = NoiseMode.EQUAL
    seed: int = 0
    external_poses: tuple = ()

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("step count must be at least 2")
        if len(self.lever_arms) == 0:
            raise ValueError("at least one lever arm is required")
        arms = tuple(tuple(float(v) for v in np.asarray(a, dtype=float).reshape(3)) for a in self.lever_arms)
        object.__setattr__(self, "lever_arms", arms)
        levels = np.atleast_1d(np.asarray(self.noise, dtype=float))
        if np.any(levels < 0):
            raise ValueError("noise level must be non-negative")
        object.__setattr__(self, "path", PathKind(self.path))
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))


@dataclass(frozen=True, eq=False)
class MotionDataset:
    """Sensor poses, derived motion steps and ground truth.

    ``rotations``/``positions`` are the IMU world poses; ``antenna_rotations``
    and ``antenna_positions`` hold one pose per antenna and time. Without noise
    the antenna orientation equals the IMU orientation.
    """

    rotations: np.ndarray
    positions: np.ndarray
    antenna_rotations: np.ndarray
    antenna_positions: np.ndarray
    lever_arms: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        batch = _derive_steps(self.rotations, self.positions, self.antenna_rotations, self.antenna_positions)
        object.__setattr__(self, "batch", batch)

    @property
    def antenna_count(self) -> int:
        return self.antenna_positions.shape[1]

    @property
    def poses(self) -> list[Transform]:
        quats = matrices_to_quats(self.rotations)
        return [Transform(Rotation(q), p) for q, p in zip(quats, self.positions)]

    @property
    def steps(self) -> list[MotionStep]:
        return self.batch.to_steps()

    def __len__(self):
        return len(self.batch)


def _derive_steps(rotations, positions, antenna_rotations, antenna_positions) -> StepBatch:
    r_rel, t_rel = relative_motions(rotations, positions)
    antenna = np.stack(
        [relative_motions(antenna_rotations[:, i], antenna_positions[:, i])[1] for i in range(antenna_positions.shape[1])],
        axis=1,
    )
    return StepBatch(r_rel, t_rel, antenna)


def generate_path_2d(kind: PathKind, count: int, seed) -> np.ndarray:
    """Sinusoid-mixture path ``(x, y) = (s L, sum_h a_h sin(2 pi f_h s + phi_h))``.

    ``s`` is the point index, ``L`` the nominal step length. Amplitude,
    frequency and phase of the three harmonics are drawn from ``seed``.
    """
    if PathKind(kind) is not PathKind.SINUSOID_MIXTURE:
        raise ValueError("only the sinusoid mixture is generated; external paths are loaded")
    if count < 2:
        raise ValueError("a path needs at least two points")
    rng = np.random.default_rng(seed)
    amplitudes = rng.uniform(*AMPLITUDE_RANGE, size=HARMONICS)
    frequencies = rng.uniform(*FREQUENCY_RANGE, size=HARMONICS)
    phases = rng.uniform(0.0, 2 * np.pi, size=HARMONICS)
    s = np.arange(count, dtype=float)
    y = (amplitudes[:, None] * np.sin(2 * np.pi * frequencies[:, None] * s + phases[:, None])).sum(axis=0)
    return np.stack([s * STEP_LENGTH, y], axis=1)


def orientations_on_surface(path: np.ndarray, surface: Surface) -> tuple[np.ndarray, np.ndarray]:
    """World positions ``(N, 3)`` and world-from-body rotations ``(N, 3, 3)``.

    Body axes: x along the path tangent, z along the surface normal, y to the left.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        raise ValueError("at least two path points are required")
    grad = surface.gradient(path)
    positions = np.column_stack([path, surface.height(path)])
    d2 = np.gradient(path, axis=0)
    tangent = np.column_stack([d2, np.einsum("ij,ij->i", grad, d2)])
    normal = np.column_stack([-grad, np.ones(len(path))])
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    tangent -= np.einsum("ij,ij->i", tangent, normal)[:, None] * normal
    norms = np.linalg.norm(tangent, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate path tangent (repeated points)")
    forward = tangent / norms[:, None]
    left = np.cross(normal, forward)
    rotations = np.stack([forward, left, normal], axis=2)
    return positions, rotations


def project_to_surface(path: np.ndarray, surface: Surface) -> list[Transform]:
    positions, rotations = orientations_on_surface(path, surface)
    quats = matrices_to_quats(rotations)
    return [Transform(Rotation(q), p) for q, p in zip(quats, positions)]


def synthesize_antenna_motion(poses, lever_arms: Sequence) -> list[MotionStep]:
    """Noise-free steps: ``b_{i,k} = R_{A_k} x_i + t_{A_k} - x_i``."""
    rotations, positions = _pose_arrays(poses)
    return dataset_from_poses(rotations, positions, lever_arms).steps


def dataset_from_poses(rotations, positions, lever_arms, metadata=None) -> MotionDataset:
    rotations = np.asarray(rotations, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if len(rotations) < 2:
        raise ValueError("at least two poses are required")
    arms = np.asarray(lever_arms, dtype=float).reshape(-1, 3)
    antenna_positions = positions[:, None, :] + np.einsum("nij,aj->nai", rotations, arms)
    antenna_rotations = np.repeat(rotations[:, None], len(arms), axis=1)
    return MotionDataset(
        rotations,
        positions,
        antenna_rotations,
        antenna_positions,
        tuple(tuple(a) for a in arms.tolist()),
        dict(metadata or {}),
    )


def _pose_arrays(poses) -> tuple[np.ndarray, np.ndarray]:
    rotations = np.stack([p.rotation.matrix for p in poses])
    positions = np.stack([p.translation for p in poses])
    return rotations, positions


def noise_sigmas(dataset: MotionDataset, level) -> tuple[float, float]:
    """``(sigma_trans, sigma_rot)`` for a relative level or an absolute pair."""
    if np.ndim(level) == 0:
        batch = dataset.batch
        mean_trans = float(np.mean(np.linalg.norm(batch.translations, axis=1)))
        mean_rot = float(np.mean(rotation_angles(batch.rotations)))
        return float(level) * mean_trans, float(level) * mean_rot
    sigma_trans, sigma_rot = level
    return float(sigma_trans), float(sigma_rot)


def _perturb(rotations, positions, sigma_trans, sigma_rot, rng):
    shape = positions.shape
    dt = rng.normal(0.0, sigma_trans / np.sqrt(3.0), size=shape)
    dr = rng.normal(0.0, sigma_rot / np.sqrt(3.0), size=shape)
    rot = np.einsum("...ij,...jk->...ik", rotations, rotvecs_to_matrices(dr).reshape(rotations.shape))
    return rot, positions + dt


def add_noise(dataset: MotionDataset, level, mode: NoiseMode = NoiseMode.EQUAL, seed=0) -> MotionDataset:
    """Perturb every sensor pose with zero-mean Gaussian noise and re-derive the steps.

    A relative ``level`` scales the mean per-step translation and rotation
    angle of the IMU motions. Each pose receives a translation offset with
    per-axis deviation ``sigma_trans/√3`` and a body-frame rotation vector
    with per-axis deviation ``sigma_rot/√3``. In ``ImuSkewed`` mode the IMU
    rotation deviation is divided by six and its translation deviation
    multiplied by six; antenna noise is unchanged.
    """
    mode = NoiseMode(mode)
    sigma_trans, sigma_rot = noise_sigmas(dataset, level)
    if sigma_trans == 0.0 and sigma_rot == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    imu_trans, imu_rot = sigma_trans, sigma_rot
    if mode is NoiseMode.IMU_SKEWED:
        imu_trans, imu_rot = sigma_trans * IMU_SKEW, sigma_rot / IMU_SKEW
    rotations, positions = _perturb(dataset.rotations, dataset.positions, imu_trans, imu_rot, rng)
    ant_rot, ant_pos = _perturb(dataset.antenna_rotations, dataset.antenna_positions, sigma_trans, sigma_rot, rng)
    metadata = dict(dataset.metadata)
    metadata.update(
        noise=level if np.ndim(level) == 0 else tuple(level),
        noise_mode=mode.value,
        noise_seed=seed,
        sigma_trans=sigma_trans,
        sigma_rot=sigma_rot,
    )
    return replace(
        dataset,
        rotations=rotations,
        positions=positions,
        antenna_rotations=ant_rot,
        antenna_positions=ant_pos,
        metadata=metadata,
    )


def poses_from_steps(steps) -> tuple[np.ndarray, np.ndarray]:
    """Chain IMU motions from the identity into world poses."""
    from .qcqp import as_batch

    batch = as_batch(steps)
    k = len(batch)
    rotations = np.empty((k + 1, 3, 3))
    positions = np.empty((k + 1, 3))
    rotations[0], positions[0] = np.eye(3), 0.0
    for i in range(k):
        positions[i + 1] = rotations[i] @ batch.translations[i] + positions[i]
        rotations[i + 1] = rotations[i] @ batch.rotations[i]
    return rotations, positions


def simulate(config: SimConfig) -> MotionDataset:
    """Generate a dataset with ``config.steps`` motions, noisy if requested."""
    seq = np.random.SeedSequence(config.seed)
    path_seed, noise_seed = seq.spawn(2)
    if config.path is PathKind.EXTERNAL_TRAJECTORY:
        if len(config.external_poses) < config.steps + 1:
            raise ValueError(
                f"external trajectory has {len(config.external_poses)} poses, need {config.steps + 1}"
            )
        rotations, positions = _pose_arrays(config.external_poses[: config.steps + 1])
        surface_name = "External"
    else:
        path = generate_path_2d(config.path, config.steps + 1, path_seed)
        positions, rotations = orientations_on_surface(path, config.surface)
        surface_name = type(config.surface).__name__
    dataset = dataset_from_poses(
        rotations,
        positions,
        config.lever_arms,
        metadata={"seed": config.seed, "surface": surface_name, "noise": 0.0},
    )
    return add_noise(dataset, config.noise, config.noise_mode, noise_seed)


def random_lever_arms(rng, count: int, length: float = 1.0, min_elevation=np.radians(30.0)) -> list[np.ndarray]:
    """Lever arms of fixed length pointing into the upper hemisphere.

    Directions are uniform on the spherical cap above ``min_elevation``.
    """
    arms = []
    zmin = np.sin(min_elevation)
    for _ in range(count):
        z = rng.uniform(zmin, 1.0)
        phi = rng.uniform(0.0, 2 * np.pi)
        r = np.sqrt(1.0 - z * z)
        arms.append(length * np.array([r * np.cos(phi), r * np.sin(phi), z]))
    return arms
