"""Error metrics, Monte-Carlo sweeps and run-time benchmarks.

Settings follow the usual taxonomy for multi-antenna calibration:

====  ==============  ==========  ===========
name  regularization  arm length  z component
====  ==============  ==========  ===========
I     no              no          no
II    yes             no          no
III   no              yes         no
IV    yes             yes         no
V     yes             yes         yes
====  ==============  ==========  ===========

Priors are filled in from the simulated ground truth. The regularization term
only exists for two or more antennas, so II/IV coincide with I/III for a
single antenna.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CalibrationError
from .qcqp import ArmLength, ComponentMagnitude
from .sim import Flat, Hilly, NoiseMode, SimConfig, random_lever_arms, simulate
from .solver import SignPolicy, SolverOptions, calibrate

SETTINGS = ("I", "II", "III", "IV", "V")
INVALID_FAILURE_RATE = 0.2
SURFACES = {"hilly": Hilly, "flat": Flat}


def translation_error(estimate, truth) -> float:
    """Euclidean distance between an estimated and a true lever arm, in meters."""
    return float(np.linalg.norm(np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)))


def setting_priors(setting: str, lever_arms: Sequence) -> list:
    """Prior constraints of a setting, built from the true lever arms."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; expected one of {', '.join(SETTINGS)}")
    priors = []
    if setting in ("III", "IV", "V"):
        priors += [ArmLength(i, float(np.linalg.norm(x))) for i, x in enumerate(lever_arms)]
    if setting == "V":
        priors += [ComponentMagnitude(i, "z", abs(float(x[2]))) for i, x in enumerate(lever_arms)]
    return priors


def setting_options(setting: str, base: SolverOptions = SolverOptions()) -> SolverOptions:
    regularize = setting in ("II", "IV", "V")
    # With a length or height prior the up-axis sign is only fixed by the mounting assumption.
    policy = SignPolicy.ABOVE_IMU if setting in ("III", "IV", "V") else base.sign_policy
    return replace(base, regularize=regularize, sign_policy=policy)


@dataclass(frozen=True)
class SweepSpec:
    """One Monte-Carlo experiment grid.

    Cells are the product ``noise_levels x sizes x settings``; each cell runs
    ``runs`` independent simulate/calibrate trials.
    """

    noise_levels: tuple = (0.1,)
    sizes: tuple = (100, 1000)
    runs: int = 100
    antennas: int = 1
    settings: tuple = ("I",)
    surface: str = "hilly"
    seed: int = 0
    noise_mode: NoiseMode = NoiseMode.EQUAL
    arm_length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "noise_levels", tuple(float(v) for v in np.atleast_1d(self.noise_levels)))
        object.__setattr__(self, "sizes", tuple(int(v) for v in np.atleast_1d(self.sizes)))
        settings = (self.settings,) if isinstance(self.settings, str) else tuple(self.settings)
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if any(s < 2 for s in self.sizes):
            raise ValueError("every dataset size must be at least 2")
        if self.antennas < 1:
            raise ValueError("antenna count must be at least 1")
        if any(v < 0 for v in self.noise_levels):
            raise ValueError("noise levels must be non-negative")
        for s in settings:
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {s!r}")
        if self.surface not in SURFACES:
            raise ValueError(f"unknown surface {self.surface!r}; expected 'hilly' or 'flat'")


@dataclass(frozen=True)
class RunRecord:
    noise: float
    size: int
    setting: str
    run: int
    error: Optional[float]
    antenna_errors: tuple
    certificate: Optional[str]
    seconds: float = field(compare=False, default=0.0)
    failure: Optional[str] = None


@dataclass(frozen=True)
class TimeStats:
    median: float
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float

    @classmethod
    def from_samples(cls, samples) -> TimeStats:
        x = np.sort(np.asarray(samples, dtype=float))
        if x.size == 0:
            nan = float("nan")
            return cls(nan, nan, nan, nan, nan)
        q25, q50, q75 = np.percentile(x, [25, 50, 75])
        iqr = q75 - q25
        # Box-plot whiskers: the most extreme samples within 1.5 IQR.
        low = x[x >= q25 - 1.5 * iqr].min()
        high = x[x <= q75 + 1.5 * iqr].max()
        return cls(float(q50), float(q25), float(q75), float(low), float(high))


@dataclass(frozen=True)
class CellResult:
    noise: float
    size: int
    setting: str
    q25: float
    q50: float
    q75: float
    mean: float
    failures: int
    runs: int
    valid: bool
    # Wall-clock statistics vary between runs and are left out of equality.
    time: TimeStats = field(compare=False, default=None)


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    cells: tuple
    records: tuple = field(repr=False, default=())

    def cell(self, noise: float, size: int, setting: str) -> CellResult:
        for c in self.cells:
            if c.noise == noise and c.size == size and c.setting == setting:
                return c
        raise KeyError((noise, size, setting))

    def write_csv(self, path, timing: bool = False) -> None:
        """Plot-ready summary, one row per cell.

        Timing columns are opt-in so that the default file depends only on
        the :class:`SweepSpec`.
        """
        columns = ["noise", "size", "setting", "q25", "q50", "q75", "mean", "failures", "runs", "valid"]
        if timing:
            columns += ["time_median", "time_q25", "time_q75", "time_whisker_low", "time_whisker_high"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for c in self.cells:
                row = [c.noise, c.size, c.setting]
                row += [repr(v) for v in (c.q25, c.q50, c.q75, c.mean)]
                row += [c.failures, c.runs, int(c.valid)]
                if timing:
                    t = c.time
                    row += [repr(v) for v in (t.median, t.q25, t.q75, t.whisker_low, t.whisker_high)]
                writer.writerow(row)

    def write_jsonl(self, path, timing: bool = False) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                data = asdict(r)
                if not timing:
                    del data["seconds"]
                fh.write(json.dumps(data, sort_keys=True) + "\n")

    def format_table(self) -> str:
        lines = [f"{'noise':>6} {'size':>7} {'set':>4} {'q50 m':>10} {'mean m':>10} {'fail':>5} {'median ms':>10}"]
        for c in self.cells:
            lines.append(
                f"{c.noise:>6.3g} {c.size:>7} {c.setting:>4} {c.q50:>10.4g} {c.mean:>10.4g} "
                f"{c.failures:>5} {c.time.median * 1e3:>10.3f}"
            )
        return "\n".join(lines)


def run_seed(spec: SweepSpec, noise_index: int, size_index: int, setting: str, run: int) -> np.random.SeedSequence:
    """Independent stream per (cell, run)."""
    return np.random.SeedSequence([spec.seed, noise_index, size_index, SETTINGS.index(setting), run])


def _single_run(args) -> RunRecord:
    spec, noise_index, size_index, setting, run = args
    noise = spec.noise_levels[noise_index]
    size = spec.sizes[size_index]
    arm_seed, sim_seed = run_seed(spec, noise_index, size_index, setting, run).spawn(2)
    arms = random_lever_arms(np.random.default_rng(arm_seed), spec.antennas, spec.arm_length)
    config = SimConfig(
        steps=size,
        lever_arms=arms,
        surface=SURFACES[spec.surface](),
        noise=noise,
        noise_mode=spec.noise_mode,
        seed=int(sim_seed.generate_state(1)[0]),
    )
    dataset = simulate(config)
    start = time.perf_counter()
    try:
        result = calibrate(dataset.batch, setting_priors(setting, arms), setting_options(setting))
    except CalibrationError as exc:
        seconds = time.perf_counter() - start
        return RunRecord(noise, size, setting, run, None, (), None, seconds, f"{type(exc).__name__}: {exc}")
    seconds = time.perf_counter() - start
    errors = tuple(translation_error(a, b) for a, b in zip(result.lever_arms, arms))
    return RunRecord(noise, size, setting, run, float(np.mean(errors)), errors, result.certificate.value, seconds)


def _aggregate(spec: SweepSpec, records: Sequence[RunRecord]) -> list[CellResult]:
    cells = []
    for noise in spec.noise_levels:
        for size in spec.sizes:
            for setting in spec.settings:
                rs = [r for r in records if r.noise == noise and r.size == size and r.setting == setting]
                ok = np.array([r.error for r in rs if r.error is not None])
                failures = len(rs) - ok.size
                valid = ok.size > 0 and failures <= INVALID_FAILURE_RATE * len(rs)
                if valid:
                    q25, q50, q75 = (float(v) for v in np.percentile(ok, [25, 50, 75]))
                    mean = float(ok.mean())
                else:
                    q25 = q50 = q75 = mean = float("nan")
                times = TimeStats.from_samples([r.seconds for r in rs if r.error is not None])
                cells.append(CellResult(noise, size, setting, q25, q50, q75, mean, failures, len(rs), valid, times))
    return cells


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Run every cell of ``spec`` and aggregate the translation errors.

    Each run draws fresh lever arms (fixed length, upper hemisphere) and a
    fresh trajectory from its own seed, so the result depends only on
    ``spec``. The per-run error is the mean over antennas of the translation
    error. Failed calibrations are counted and excluded from the statistics;
    a cell with more than 20% failures is marked invalid and reports NaN.
    """
    tasks = [
        (spec, ni, si, setting, run)
        for ni in range(len(spec.noise_levels))
        for si in range(len(spec.sizes))
        for setting in spec.settings
        for run in range(spec.runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_single_run, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        records = [_single_run(t) for t in tasks]
    return SweepResult(spec, tuple(_aggregate(spec, records)), tuple(records))


@dataclass(frozen=True)
class BenchEntry:
    antennas: int
    setting: str
    size: int
    stats: TimeStats
    repetitions: int

    @property
    def per_antenna(self) -> float:
        return self.stats.median / self.antennas


def bench_runtime(
    sizes: Iterable[int] = (5000,),
    antennas: Iterable[int] = (1, 2, 3),
    settings: Iterable[str] = ("I",),
    repetitions: int = 20,
    seed: int = 0,
    noise: float = 0.1,
    datasets: int = 5,
) -> list[BenchEntry]:
    """Wall-clock time of ``calibrate`` calls.

    For every antenna count and size, ``datasets`` noisy trajectories are
    simulated (and assessed once) up front; each is calibrated
    ``repetitions`` times per setting and the samples are pooled. A timed call
    covers problem construction, the dual solve, recovery and certification.
    Runs are sequential.
    """
    if repetitions < 10:
        raise ValueError("repetitions must be at least 10")
    if datasets < 1:
        raise ValueError("datasets must be at least 1")
    out = []
    for o in antennas:
        for size in sizes:
            cases = []
            for d in range(datasets):
                arms = random_lever_arms(np.random.default_rng([seed, o, d]), o)
                config = SimConfig(steps=size, lever_arms=arms, noise=noise, seed=int(np.random.SeedSequence([seed, o, size, d]).generate_state(1)[0]))
                cases.append((arms, simulate(config)))
            for setting in settings:
                samples = []
                for arms, dataset in cases:
                    priors = setting_priors(setting, arms)
                    options = replace(setting_options(setting), check_motion=False)
                    calibrate(dataset.batch, priors, setting_options(setting))  # warm-up, and fails on bad motion
                    for _ in range(repetitions):
                        start = time.perf_counter()
                        calibrate(dataset.batch, priors, options)
                        samples.append(time.perf_counter() - start)
                out.append(BenchEntry(o, setting, size, TimeStats.from_samples(samples), len(samples)))
    return out


def format_bench(entries: Sequence[BenchEntry]) -> str:
    lines = [f"{'o':>2} {'setting':>7} {'size':>7} {'median ms':>10} {'q25 ms':>9} {'q75 ms':>9} {'per antenna ms':>15}"]
    for e in entries:
        s = e.stats
        lines.append(
            f"{e.antennas:>2} {e.setting:>7} {e.size:>7} {s.median * 1e3:>10.3f} {s.q25 * 1e3:>9.3f} "
            f"{s.q75 * 1e3:>9.3f} {e.per_antenna * 1e3:>15.3f}"
        )
    return "\n".join(lines)
