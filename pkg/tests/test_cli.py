import json
import subprocess
import sys

import numpy as np
import pytest

from leverarm.cli import main, parse_prior
from leverarm.formats import read_result, read_truth, write_motion_file
from leverarm.geometry import Transform
from leverarm.qcqp import ArmLength, ComponentMagnitude, MotionStep


def run(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "hilly.cfg").write_text("steps = 150\nlever_arm.0 = 0.5 0.3 0.2\nseed = 4\n")
    (tmp_path / "flat.cfg").write_text("steps = 150\nlever_arm.0 = 0.5 0.3 0.2\nsurface = flat\nseed = 4\n")
    return tmp_path


def test_simulate_then_calibrate(workdir, capsys):
    motion = workdir / "hilly.txt"
    assert run(["simulate", "--config", workdir / "hilly.cfg", "--out", motion]) == 0
    arms, meta = read_truth(workdir / "hilly.txt.truth")
    np.testing.assert_array_equal(arms[0], [0.5, 0.3, 0.2])
    assert meta["surface"] == "Hilly"
    out = workdir / "r.json"
    assert run(["calibrate", "--in", motion, "--out", out]) == 0
    res = read_result(out)
    assert res.certificate == "CertifiedGlobal"
    np.testing.assert_allclose(res.lever_arms[0], [0.5, 0.3, 0.2], atol=1e-6)
    assert "CertifiedGlobal" in capsys.readouterr().out


def test_flat_without_priors_names_planar_only(workdir, capsys):
    motion = workdir / "flat.txt"
    run(["simulate", "--config", workdir / "flat.cfg", "--out", motion])
    code = run(["calibrate", "--in", motion, "--out", workdir / "r.json"])
    assert code != 0
    assert "PlanarOnly" in capsys.readouterr().err
    assert not (workdir / "r.json").exists()


def test_flat_with_length_prior(workdir):
    motion = workdir / "flat.txt"
    run(["simulate", "--config", workdir / "flat.cfg", "--out", motion])
    s = float(np.linalg.norm([0.5, 0.3, 0.2]))
    out = workdir / "r.json"
    assert run(["calibrate", "--in", motion, "--out", out, "--prior", f"arm-length=0:{s!r}", "--above-imu"]) == 0
    res = read_result(out)
    np.testing.assert_allclose(res.lever_arms[0], [0.5, 0.3, 0.2], atol=1e-6)
    assert res.metadata["above_imu"] is True


def test_assess_pure_translation_is_degenerate(tmp_path, capsys):
    steps = [MotionStep(Transform.from_translation([1.0, 0.0, 0.0]), ((1.0, 0.0, 0.0),)) for _ in range(10)]
    motion = tmp_path / "line.txt"
    write_motion_file(motion, steps)
    assert run(["assess", "--in", motion]) != 0
    assert "Degenerate" in capsys.readouterr().out


def test_assess_hilly(workdir, capsys):
    motion = workdir / "hilly.txt"
    run(["simulate", "--config", workdir / "hilly.cfg", "--out", motion])
    capsys.readouterr()
    assert run(["assess", "--in", motion]) == 0
    assert "FullyObservable" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["calibrate"],
        ["calibrate", "--in", "x.txt"],
        ["frobnicate"],
        ["--threads", "0", "sweep", "--spec", "s", "--out", "o"],
    ],
)
def test_usage_errors(argv):
    assert run(argv) == 2


def test_bad_prior_is_usage_error(workdir):
    motion = workdir / "hilly.txt"
    run(["simulate", "--config", workdir / "hilly.cfg", "--out", motion])
    assert run(["calibrate", "--in", motion, "--out", workdir / "r.json", "--prior", "length=0:1"]) == 2
    assert run(["calibrate", "--in", motion, "--out", workdir / "r.json", "--prior", "arm-length=3:1"]) == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("lever_arm.0 = 0 0 1\nsteps = 10\ncolour = blue\n")
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "m.txt"]) == 2


def test_missing_and_malformed_inputs(tmp_path, capsys):
    assert run(["calibrate", "--in", tmp_path / "nope.txt", "--out", tmp_path / "r.json"]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("LEVERARM-MOTION 1 antennas=1\n0 1.2 0 0 0 0 0 0 0 0 0\n")
    assert run(["calibrate", "--in", bad, "--out", tmp_path / "r.json"]) == 1
    assert "NonUnitQuaternion: line 2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text, prior",
    [
        ("arm-length=0:1.5", ArmLength(0, 1.5)),
        ("z-mag=2:0.25", ComponentMagnitude(2, "z", 0.25)),
    ],
)
def test_parse_prior(text, prior):
    assert parse_prior(text) == prior


def test_global_flags_either_side(workdir):
    a, b = workdir / "a.txt", workdir / "b.txt"
    assert run(["--seed", "9", "simulate", "--config", workdir / "hilly.cfg", "--out", a]) == 0
    assert run(["simulate", "--config", workdir / "hilly.cfg", "--out", b, "--seed", "9"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_truth(workdir / "a.txt.truth")[1]["seed"] == "9"


def test_repeated_runs_are_byte_identical(tmp_path):
    spec = tmp_path / "sweep.cfg"
    spec.write_text("noise_levels = 0.1\nsizes = 40\nruns = 3\nsettings = I III\nseed = 5\n")
    outputs = []
    for name in ("one", "two"):
        out = tmp_path / f"{name}.csv"
        assert run(["sweep", "--spec", spec, "--out", out]) == 0
        outputs.append((out.read_bytes(), (tmp_path / f"{name}.csv.jsonl").read_bytes()))
    assert outputs[0] == outputs[1]
    records = [json.loads(s) for s in outputs[0][1].decode().splitlines()]
    assert len(records) == 6

    cfg = tmp_path / "sim.cfg"
    cfg.write_text("steps = 50\nlever_arm.0 = 0 0.6 0.8\nlever_arm.1 = 1 0 0\nnoise = 0.1\n")
    for name in ("m1", "m2"):
        run(["simulate", "--config", cfg, "--out", tmp_path / f"{name}.txt"])
        run(["calibrate", "--in", tmp_path / f"{name}.txt", "--out", tmp_path / f"{name}.json", "--regularize"])
    assert (tmp_path / "m1.txt").read_bytes() == (tmp_path / "m2.txt").read_bytes()
    r1 = json.loads((tmp_path / "m1.json").read_text())
    r2 = json.loads((tmp_path / "m2.json").read_text())
    del r1["metadata"]["input"], r2["metadata"]["input"]
    assert r1 == r2


def test_bench_smoke(tmp_path, capsys):
    spec = tmp_path / "bench.cfg"
    spec.write_text("sizes = 100\nantennas = 1 2\nrepetitions = 10\ndatasets = 1\n")
    assert run(["bench", "--spec", spec]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and "per antenna" in lines[0]


def test_bench_rejects_few_repetitions(tmp_path):
    spec = tmp_path / "bench.cfg"
    spec.write_text("repetitions = 3\n")
    assert run(["bench", "--spec", spec]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "leverarm", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("0.1.0")
