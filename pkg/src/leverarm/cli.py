"""Command-line interface.

Exit codes: 0 success (``calibrate``: certified global optimum), 1 data or
solver error, 2 usage error, 3 ``calibrate`` result verified by refinement,
4 ``calibrate`` result only locally optimal.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CalibrationError
from .evaluation import SETTINGS, SweepSpec, bench_runtime, format_bench, run_sweep
from .formats import (
    ResultFile,
    parse_list,
    parse_vector,
    read_config,
    read_motion_batch,
    truth_path,
    write_motion_file,
    write_result,
    write_truth,
)
from .qcqp import ArmLength, ComponentMagnitude, Verdict, assess_motion
from .sim import Flat, Hilly, NoiseMode, PathKind, SimConfig, poses_from_steps, simulate
from .solver import Certificate, SignPolicy, SolverOptions, calibrate

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_CODES = {
    Certificate.CERTIFIED_GLOBAL: 0,
    Certificate.VERIFIED_GLOBAL: 3,
    Certificate.LOCAL_ONLY: 4,
}

log = logging.getLogger("leverarm")


class UsageError(Exception):
    pass


def _add_globals(parser, suppress=False):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the seed of the config/spec")
    parser.add_argument("--threads", type=int, default=default, help="worker processes for sweeps")
    parser.add_argument("--tolerance-gap", type=float, default=default, help="relative duality-gap tolerance")
    parser.add_argument("--tolerance-null", type=float, default=default, help="relative null-space threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leverarm", description="IMU to GNSS antenna lever-arm calibration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated motion file and its ground truth")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_globals(p, suppress=True)

    p = sub.add_parser("assess", help="report whether the motion excites all lever-arm directions")
    p.add_argument("--in", dest="input", required=True, type=Path)
    _add_globals(p, suppress=True)

    p = sub.add_parser("calibrate", help="estimate the lever arms of a motion file")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument(
        "--prior",
        action="append",
        default=[],
        metavar="KIND=I:VALUE",
        help="arm-length=<i>:<meters> or z-mag=<i>:<meters>; antenna index i counts from 0",
    )
    p.add_argument("--regularize", action="store_true", help="add the cross-antenna rigidity term")
    p.add_argument("--above-imu", action="store_true", help="pick the solution with antennas above the IMU")
    _add_globals(p, suppress=True)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep; writes plot-ready CSV")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--records", type=Path, help="per-run JSON lines (default: <out>.jsonl)")
    _add_globals(p, suppress=True)

    p = sub.add_parser("bench", help="run-time benchmark; prints a quartile table")
    p.add_argument("--spec", required=True, type=Path)
    _add_globals(p, suppress=True)
    return parser


def parse_prior(text: str):
    kind, sep, rest = text.partition("=")
    index, sep2, value = rest.partition(":")
    if not sep or not sep2:
        raise UsageError(f"malformed prior {text!r}; expected arm-length=<i>:<s> or z-mag=<i>:<v>")
    try:
        i, v = int(index), float(value)
    except ValueError:
        raise UsageError(f"malformed prior {text!r}: antenna index and value must be numbers") from None
    try:
        if kind == "arm-length":
            return ArmLength(i, v)
        if kind == "z-mag":
            return ComponentMagnitude(i, "z", v)
    except ValueError as exc:
        raise UsageError(f"invalid prior {text!r}: {exc}") from None
    raise UsageError(f"unknown prior kind {kind!r}; expected arm-length or z-mag")


def _solver_options(args, **kw) -> SolverOptions:
    opts = {}
    if getattr(args, "tolerance_gap", None) is not None:
        opts["gap_tol"] = args.tolerance_gap
    if getattr(args, "tolerance_null", None) is not None:
        opts["null_rel"] = args.tolerance_null
    return SolverOptions(**opts, **kw)


def _pop(config: dict, key: str, convert, default):
    if key not in config:
        return default
    raw = config.pop(key)
    try:
        return convert(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from None


def _check_unused(config: dict, source) -> None:
    if config:
        raise UsageError(f"{source}: unknown keys {', '.join(sorted(config))}")


def sim_config_from_dict(values: dict, seed=None, base_dir: Path = Path(".")) -> SimConfig:
    """Build a :class:`SimConfig` from flat config values.

    Keys: ``steps``, ``lever_arm.<i>`` (x y z), ``surface`` (hilly/flat),
    ``amplitude``, ``frequency`` (rad/m, both axes), ``path``
    (sinusoid/external), ``trajectory`` (motion file for external paths),
    ``noise`` (relative level) or ``noise_abs`` (sigma_trans sigma_rot),
    ``noise_mode`` (Equal/ImuSkewed), ``seed``.
    """
    cfg = dict(values)
    arms = []
    while f"lever_arm.{len(arms)}" in cfg:
        arms.append(_pop(cfg, f"lever_arm.{len(arms)}", lambda v: parse_vector(v, 3), None))
    if not arms:
        raise UsageError("config needs at least one lever_arm.0 = x y z entry")
    surface_name = _pop(cfg, "surface", str, "hilly").lower()
    if surface_name == "hilly":
        default = Hilly()
        amplitude = _pop(cfg, "amplitude", float, default.amplitude)
        freq = _pop(cfg, "frequency", float, None)
        surface = Hilly(amplitude, default.frequencies if freq is None else (freq, freq))
    elif surface_name == "flat":
        surface = Flat()
    else:
        raise UsageError(f"unknown surface {surface_name!r}; expected hilly or flat")
    path_name = _pop(cfg, "path", str, "sinusoid").lower()
    external = ()
    if path_name in ("sinusoid", "sinusoidmixture"):
        path = PathKind.SINUSOID_MIXTURE
    elif path_name in ("external", "externaltrajectory"):
        path = PathKind.EXTERNAL_TRAJECTORY
        traj = _pop(cfg, "trajectory", str, None)
        if traj is None:
            raise UsageError("path = external needs a trajectory = <motion file> entry")
        batch, _ = read_motion_batch(base_dir / traj)
        if batch is None:
            raise UsageError("trajectory file has no steps")
        from .geometry import Rotation, Transform

        rotations, positions = poses_from_steps(batch)
        external = tuple(Transform(Rotation.from_matrix(r), p) for r, p in zip(rotations, positions))
    else:
        raise UsageError(f"unknown path {path_name!r}; expected sinusoid or external")
    steps = _pop(cfg, "steps", int, len(external) - 1 if external else 1000)
    noise = _pop(cfg, "noise", float, 0.0)
    noise_abs = _pop(cfg, "noise_abs", lambda v: tuple(parse_vector(v, 2)), None)
    if noise_abs is not None:
        noise = noise_abs
    mode = _pop(cfg, "noise_mode", NoiseMode, NoiseMode.EQUAL)
    cfg_seed = _pop(cfg, "seed", int, 0)
    _check_unused(cfg, "simulation config")
    try:
        return SimConfig(
            steps=steps,
            lever_arms=arms,
            surface=surface,
            path=path,
            noise=noise,
            noise_mode=mode,
            seed=cfg_seed if seed is None else seed,
            external_poses=external,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def sweep_spec_from_dict(values: dict, seed=None) -> SweepSpec:
    """Keys: ``noise_levels``, ``sizes``, ``runs``, ``antennas``, ``settings``,
    ``surface``, ``seed``, ``noise_mode``, ``arm_length``."""
    cfg = dict(values)
    kw = dict(
        noise_levels=_pop(cfg, "noise_levels", lambda v: tuple(parse_list(v)), (0.1,)),
        sizes=_pop(cfg, "sizes", lambda v: tuple(parse_list(v, int)), (100, 1000)),
        runs=_pop(cfg, "runs", int, 100),
        antennas=_pop(cfg, "antennas", int, 1),
        settings=_pop(cfg, "settings", lambda v: tuple(parse_list(v, str)), ("I",)),
        surface=_pop(cfg, "surface", lambda v: v.lower(), "hilly"),
        seed=_pop(cfg, "seed", int, 0),
        noise_mode=_pop(cfg, "noise_mode", NoiseMode, NoiseMode.EQUAL),
        arm_length=_pop(cfg, "arm_length", float, 1.0),
    )
    _check_unused(cfg, "sweep spec")
    if seed is not None:
        kw["seed"] = seed
    try:
        return SweepSpec(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def bench_kwargs_from_dict(values: dict, seed=None) -> dict:
    """Keys: ``sizes``, ``antennas``, ``settings``, ``repetitions``, ``datasets``, ``noise``, ``seed``."""
    cfg = dict(values)
    kw = dict(
        sizes=_pop(cfg, "sizes", lambda v: tuple(parse_list(v, int)), (5000,)),
        antennas=_pop(cfg, "antennas", lambda v: tuple(parse_list(v, int)), (1, 2, 3)),
        settings=_pop(cfg, "settings", lambda v: tuple(parse_list(v, str)), ("I",)),
        repetitions=_pop(cfg, "repetitions", int, 20),
        datasets=_pop(cfg, "datasets", int, 5),
        noise=_pop(cfg, "noise", float, 0.1),
        seed=_pop(cfg, "seed", int, 0),
    )
    _check_unused(cfg, "bench spec")
    for s in kw["settings"]:
        if s not in SETTINGS:
            raise UsageError(f"unknown setting {s!r}")
    if kw["repetitions"] < 10:
        raise UsageError("repetitions must be at least 10")
    if seed is not None:
        kw["seed"] = seed
    return kw


# Subcommands ----------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = sim_config_from_dict(read_config(args.config), args.seed, args.config.parent)
    dataset = simulate(config)
    write_motion_file(args.out, dataset.batch)
    meta = {
        "steps": config.steps,
        "surface": dataset.metadata.get("surface"),
        "seed": config.seed,
        "noise_mode": config.noise_mode.value,
        "sigma_trans": float(dataset.metadata.get("sigma_trans", 0.0)),
        "sigma_rot": float(dataset.metadata.get("sigma_rot", 0.0)),
    }
    noise = config.noise
    meta["noise"] = tuple(noise) if isinstance(noise, tuple) else float(noise)
    write_truth(truth_path(args.out), config.lever_arms, meta)
    print(f"wrote {config.steps} steps for {len(config.lever_arms)} antenna(s) to {args.out}")
    return EXIT_OK


def cmd_assess(args) -> int:
    batch, header = read_motion_batch(args.input)
    if batch is None:
        print("verdict: Degenerate\nno motion steps in file")
        return EXIT_DATA
    report = assess_motion(batch)
    print(report.summary())
    return EXIT_DATA if report.verdict is Verdict.DEGENERATE else EXIT_OK


def cmd_calibrate(args) -> int:
    priors = [parse_prior(p) for p in args.prior]
    batch, header = read_motion_batch(args.input)
    if batch is None:
        raise CalibrationError("DatasetError: motion file has no steps")
    for p in priors:
        if p.antenna >= header.antennas:
            raise UsageError(f"prior refers to antenna {p.antenna}, file has {header.antennas}")
    options = _solver_options(
        args,
        regularize=args.regularize,
        sign_policy=SignPolicy.ABOVE_IMU if args.above_imu else SignPolicy.NONE,
    )
    result = calibrate(batch, priors, options)
    meta = {
        "input": str(args.input),
        "priors": [str(p) for p in args.prior],
        "regularize": bool(args.regularize),
        "above_imu": bool(args.above_imu),
    }
    write_result(args.out, ResultFile.from_result(result, meta))
    for i, arm in enumerate(result.lever_arms):
        print(f"lever arm {i}: {arm[0]:.9f} {arm[1]:.9f} {arm[2]:.9f}")
    print(f"certificate: {result.certificate.value}")
    print(f"duality gap: {result.duality_gap:.3e} (cost {result.primal_cost:.6e})")
    print(f"null space dimension: {result.null_space_dim}")
    if result.verdict is not None:
        print(f"motion verdict: {result.verdict.value}")
    return EXIT_CODES[result.certificate]


def cmd_sweep(args) -> int:
    spec = sweep_spec_from_dict(read_config(args.spec), args.seed)
    result = run_sweep(spec, workers=args.threads or 1)
    result.write_csv(args.out)
    result.write_jsonl(args.records or args.out.with_name(args.out.name + ".jsonl"))
    print(result.format_table())
    return EXIT_OK


def cmd_bench(args) -> int:
    kw = bench_kwargs_from_dict(read_config(args.spec), args.seed)
    print(format_bench(bench_runtime(**kw)))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "assess": cmd_assess,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
