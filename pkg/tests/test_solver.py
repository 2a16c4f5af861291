import numpy as np
import pytest
from dataclasses import replace

from leverarm.errors import MotionError, NoFeasibleRecovery
from leverarm.evaluation import setting_options, setting_priors
from leverarm.geometry import Transform, rot_x, rot_z
from leverarm.qcqp import ArmLength, ComponentMagnitude, MotionStep, QcqpProblem, StepBatch, accumulate
from leverarm.sim import Flat, SimConfig, dataset_from_poses, random_lever_arms, simulate
from leverarm.solver import (
    Certificate,
    DualSolution,
    SignPolicy,
    SolverOptions,
    calibrate,
    certify,
    disambiguate_sign,
    project_feasible,
    recover_primal,
    refine_local,
    solve_dual,
    solve_problem,
)
from oracles import ground_truth_z, nls_oracle, residual_cost

ABOVE = SolverOptions(sign_policy=SignPolicy.ABOVE_IMU)


def dual_with_null_vector(v):
    """Dual solution whose certificate matrix has exactly ``v`` as null vector."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = v / np.linalg.norm(v)
    z = np.eye(n) - np.outer(u, u)
    basis = np.linalg.qr(np.column_stack([u, np.eye(n)[:, : n - 1]]))[0]
    basis[:, 0] = v / np.linalg.norm(v)  # keep the caller's sign
    w = np.r_[0.0, np.ones(n - 1)]
    problem = QcqpProblem(1, z, np.diag([0.0] * (n - 1) + [-1.0]))
    return DualSolution(np.zeros(1), z, w, basis), problem


# dual


def test_dual_noiseless_unconstrained(hilly_one):
    prob = accumulate(hilly_one.batch)
    dual = solve_dual(prob)
    assert abs(dual.bound) <= 1e-9
    np.testing.assert_allclose(dual.z_matrix, prob.q_matrix, atol=1e-9)
    assert dual.is_feasible


def test_dual_zero_cost_matrix():
    step = MotionStep(Transform.identity(), (np.zeros(3),))
    dual = solve_dual(accumulate([step]))
    assert dual.bound == 0.0


@pytest.mark.parametrize("setting", ["I", "III", "IV", "V"])
def test_dual_noisy_weak_duality(noisy_three, setting):
    arms = noisy_three.lever_arms
    priors = setting_priors(setting, arms)
    opts = setting_options(setting)
    prob = accumulate(noisy_three.batch, opts.regularize, priors)
    dual = solve_dual(prob)
    local, local_cost = nls_oracle(noisy_three.batch, priors, opts.regularize, starts=3)
    assert dual.bound > 0
    assert dual.bound <= local_cost + 1e-6 * (1 + local_cost)
    assert dual.eigenvalues[0] >= -dual.psd_tolerance


def test_schur_and_sdp_agree(noisy_three):
    prob = accumulate(noisy_three.batch)
    schur = solve_dual(prob, "schur")
    sdp = solve_dual(prob, "sdp")
    assert sdp.bound == pytest.approx(schur.bound, rel=1e-6)


def test_dual_backend_errors(noisy_three):
    prob = accumulate(noisy_three.batch, priors=[ArmLength(0, 1.0)])
    with pytest.raises(ValueError):
        solve_dual(prob, "schur")
    with pytest.raises(ValueError):
        solve_dual(prob, "mosek")


# recovery


@pytest.mark.parametrize("v", [(2.0, 0.0, 0.0, 2.0), (-1.0, 0.0, 0.0, -1.0)])
def test_recover_dim_one_normalizes(v):
    dual, prob = dual_with_null_vector(v)
    z, dim, _ = recover_primal(dual, prob)
    assert dim == 1
    np.testing.assert_allclose(z, [1.0, 0.0, 0.0, 1.0], atol=1e-15)


def test_recover_rejects_null_vector_without_mu():
    dual, prob = dual_with_null_vector((1.0, 0.0, 0.0, 0.0))
    with pytest.raises(NoFeasibleRecovery):
        recover_primal(dual, prob)


def test_recover_dim_two_planar(flat_one):
    x = np.array(flat_one.lever_arms[0])
    prob = accumulate(flat_one.batch, priors=[ArmLength(0, float(np.linalg.norm(x)))])
    dual = solve_dual(prob)
    z, dim, candidates = recover_primal(dual, prob)
    assert dim == 2
    mirrored = x * [1, 1, -1]
    assert min(np.abs(z[:3] - x).max(), np.abs(z[:3] - mirrored).max()) <= 1e-6
    assert np.max(np.abs(prob.constraint_values(z))) <= 1e-7
    # Both up-axis branches are returned with equal cost.
    costs = [c for _, c in candidates[:2]]
    assert costs[0] == pytest.approx(costs[1], abs=1e-9)


# local refinement


def test_refine_keeps_global_optimum(hilly_three):
    prob = accumulate(hilly_three.batch, priors=[ArmLength(i, float(np.linalg.norm(x))) for i, x in enumerate(hilly_three.lever_arms)])
    z = ground_truth_z(hilly_three.lever_arms)
    out = refine_local(prob, z)
    assert out.converged
    np.testing.assert_allclose(out.z, z, atol=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_refine_basin(seed, hilly_three):
    arms = np.array(hilly_three.lever_arms)
    priors = [ArmLength(i, float(np.linalg.norm(x))) for i, x in enumerate(arms)]
    prob = accumulate(hilly_three.batch, priors=priors)
    rng = np.random.default_rng(seed)
    z0 = project_feasible(prob, ground_truth_z(arms) + np.r_[rng.uniform(-0.05, 0.05, 9), 0.0])
    out = refine_local(prob, z0)
    assert out.converged
    np.testing.assert_allclose(out.z[:9], arms.ravel(), atol=1e-6)
    assert np.max(np.abs(prob.constraint_values(out.z))) <= 1e-9


@pytest.mark.parametrize("o", [1, 3])
def test_refine_planar_from_null_vector(o):
    rng = np.random.default_rng(o)
    arms = random_lever_arms(rng, o)
    ds = simulate(SimConfig(steps=400, lever_arms=arms, surface=Flat(), noise=0.05, seed=o))
    prob = accumulate(ds.batch, priors=[ArmLength(i, 1.0) for i in range(o)])
    dual = solve_dual(prob)
    z0 = dual.eigenvectors[:, 0]
    z0 = z0 / z0[-1]
    out = refine_local(prob, z0)
    assert prob.cost(out.z) <= prob.cost(project_feasible(prob, z0)) + 1e-12
    assert np.max(np.abs(prob.constraint_values(out.z))) <= 1e-9
    assert out.z[-1] == 1.0


def test_project_feasible():
    prob = QcqpProblem(1, np.eye(4), np.diag([0, 0, 0, -1.0]), priors=(ArmLength(0, 2.0), ComponentMagnitude(0, "z", 1.0)))
    prob = prob.with_priors(prob.priors)
    z = project_feasible(prob, [3.0, 4.0, -0.2, 2.0])
    assert z[-1] == 1.0 and z[2] == -1.0
    assert np.linalg.norm(z[:3]) == pytest.approx(2.0)
    assert np.max(np.abs(prob.constraint_values(z))) <= 1e-12


# certification


@pytest.mark.parametrize(
    "cost, bound, dim, expected",
    [
        (1.0, 1.0, 1, Certificate.CERTIFIED_GLOBAL),
        (0.0, 0.0, 2, Certificate.CERTIFIED_GLOBAL),
        (2.0, 2.0, 3, Certificate.VERIFIED_GLOBAL),
        (1.0, 0.9, 1, Certificate.LOCAL_ONLY),
        (1.0, 0.9, 4, Certificate.LOCAL_ONLY),
        (1.0, 1.0 - 1e-6, 1, Certificate.CERTIFIED_GLOBAL),
        (1.0, 1.0 - 3e-6, 1, Certificate.LOCAL_ONLY),
    ],
)
def test_certify(cost, bound, dim, expected):
    assert certify(cost, bound, dim) is expected


# sign handling


def test_disambiguate_mirrors_below_imu():
    x = np.array([0.3, 0.4, 0.5])
    ds = simulate(SimConfig(steps=300, lever_arms=[x], surface=Flat(), seed=5))
    prior = [ArmLength(0, float(np.linalg.norm(x)))]
    result = calibrate(ds.batch, prior)
    below = replace(result, z=result.z * [1, 1, -1, 1] if result.z[2] > 0 else result.z, lever_arms=None)
    below = replace(below, lever_arms=tuple(below.problem.lever_arms(below.z)))
    assert below.lever_arms[0][2] < 0
    fixed = disambiguate_sign(below, SignPolicy.ABOVE_IMU)
    np.testing.assert_allclose(fixed.lever_arms[0], x, atol=1e-6)
    assert fixed.primal_cost == pytest.approx(below.problem.cost(fixed.z))
    assert fixed.primal_cost == pytest.approx(result.primal_cost, abs=1e-9)
    assert fixed.certificate in (Certificate.CERTIFIED_GLOBAL, Certificate.VERIFIED_GLOBAL)
    (antenna, alt, alt_cost), = fixed.alternatives
    assert antenna == 0 and alt[2] < 0
    assert alt_cost == pytest.approx(fixed.primal_cost, abs=1e-9)


def test_disambiguate_keeps_positive(hilly_one):
    result = calibrate(hilly_one.batch)
    assert disambiguate_sign(result, SignPolicy.ABOVE_IMU) is result
    assert disambiguate_sign(result, SignPolicy.NONE) is result


def test_sign_open_reports_both_costs(flat_one):
    x = flat_one.lever_arms[0]
    result = calibrate(flat_one.batch, [ComponentMagnitude(0, "z", abs(x[2])), ArmLength(0, float(np.linalg.norm(x)))])
    assert len(result.alternatives) == 1
    _, alt, cost = result.alternatives[0]
    assert alt[2] == -result.lever_arms[0][2]
    assert cost == pytest.approx(result.primal_cost, abs=1e-9)


# end to end


def test_calibrate_noiseless_hilly():
    ds = simulate(SimConfig(steps=100, lever_arms=[(0.5, 0.3, 0.2)], seed=21))
    r = calibrate(ds.batch)
    np.testing.assert_allclose(r.lever_arms[0], [0.5, 0.3, 0.2], atol=1e-6)
    assert r.certificate is Certificate.CERTIFIED_GLOBAL
    assert abs(r.duality_gap) <= 1e-9
    assert r.mu == 1.0


def test_calibrate_flat_without_priors_fails(flat_one):
    with pytest.raises(MotionError, match="PlanarOnly") as info:
        calibrate(flat_one.batch)
    assert info.value.report.verdict.value == "PlanarOnly"


def test_calibrate_flat_with_length_prior(flat_one):
    x = np.array(flat_one.lever_arms[0])
    r = calibrate(flat_one.batch, [ArmLength(0, float(np.linalg.norm(x)))], ABOVE)
    np.testing.assert_allclose(r.lever_arms[0], x, atol=1e-6)


def test_calibrate_flat_three_antennas_verified():
    rng = np.random.default_rng(7)
    arms = random_lever_arms(rng, 3)
    ds = simulate(SimConfig(steps=500, lever_arms=arms, surface=Flat(), seed=7))
    r = calibrate(ds.batch, [ArmLength(i, 1.0) for i in range(3)], ABOVE)
    np.testing.assert_allclose(np.ravel(r.lever_arms), np.ravel(arms), atol=1e-6)
    assert r.null_space_dim > 2
    assert r.certificate is Certificate.VERIFIED_GLOBAL


def test_calibrate_degenerate_motion():
    steps = [MotionStep(Transform.from_translation([1.0, 0, 0]), ([1.0, 0, 0],)) for _ in range(5)]
    with pytest.raises(MotionError, match="Degenerate"):
        calibrate(steps)


def test_calibrate_accepts_step_lists(hilly_one):
    a = calibrate(hilly_one.steps)
    b = calibrate(hilly_one.batch)
    np.testing.assert_allclose(a.lever_arms[0], b.lever_arms[0], atol=1e-9)


# invariants


def test_safe_bound_absorbs_psd_violation():
    q = np.diag([1.0, 0.0])
    lam = np.array([0.5])
    zm = q + lam[0] * np.diag([0.0, -1.0])
    w, v = np.linalg.eigh(zm)
    dual = DualSolution(lam, zm, w, v)
    # Z = diag(1, -0.5): the only feasible z = (x, 1) has cost x^2 >= 0
    assert dual.safe_bound(radius_sq=1.0) == pytest.approx(0.0)
    assert dual.safe_bound(radius_sq=1.0) <= 0.0


def _cases():
    out = []
    for k, setting in enumerate(["I", "II", "III", "IV", "V"]):
        for o in (1, 3):
            out.append((setting, o, 100 + 10 * k + o))
    return out


@pytest.mark.parametrize("setting, o, seed", _cases())
def test_weak_duality_and_feasibility(setting, o, seed):
    rng = np.random.default_rng(seed)
    arms = random_lever_arms(rng, o)
    ds = simulate(SimConfig(steps=300, lever_arms=arms, noise=0.2, seed=seed))
    r = calibrate(ds.batch, setting_priors(setting, arms), setting_options(setting))
    # the reported bound absorbs the PSD violation, so only rounding can push it above the cost
    assert r.dual_bound <= r.primal_cost + 1e-12 * (1 + abs(r.primal_cost))
    assert np.max(np.abs(r.problem.constraint_values(r.z))) <= 1e-7
    assert r.mu == 1.0
    if r.certificate is Certificate.CERTIFIED_GLOBAL:
        assert r.null_space_dim in (1, 2)
        assert abs(r.relative_gap) <= 1e-6


def test_oracle_equivalence_noiseless():
    rng = np.random.default_rng(2024)
    for trial in range(50):
        o = 1 + trial % 3
        arms = rng.uniform(-2, 2, size=(o, 3))
        ds = simulate(SimConfig(steps=100, lever_arms=arms, seed=trial))
        r = calibrate(ds.batch)
        oracle, cost = nls_oracle(ds.batch, starts=20, seed=trial)
        assert cost <= 1e-20
        np.testing.assert_allclose(np.ravel(r.lever_arms), oracle.ravel(), atol=1e-6)


@pytest.mark.parametrize("setting", ["I", "IV"])
@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_scale_consistency(setting, c):
    rng = np.random.default_rng(5)
    arms = random_lever_arms(rng, 3)
    ds = simulate(SimConfig(steps=400, lever_arms=arms, noise=0.1, seed=5))
    batch = ds.batch
    scaled = StepBatch(batch.rotations, c * batch.translations, c * batch.antenna_motions)
    opts = setting_options(setting)
    base = calibrate(batch, setting_priors(setting, arms), opts)
    big = calibrate(scaled, setting_priors(setting, np.array(arms) * c), opts)
    np.testing.assert_allclose(np.ravel(big.lever_arms), c * np.ravel(base.lever_arms), rtol=1e-9, atol=1e-9 * c)


@pytest.mark.parametrize("setting", ["I", "V"])
def test_world_rotation_equivariance(setting):
    rng = np.random.default_rng(8)
    arms = random_lever_arms(rng, 2)
    ds = simulate(SimConfig(steps=300, lever_arms=arms, seed=8))
    g = (rot_z(1.3) @ rot_x(0.7)).matrix
    turned = dataset_from_poses(np.einsum("ij,kjl->kil", g, ds.rotations), ds.positions @ g.T, arms)
    noisy = [simulate(SimConfig(steps=300, lever_arms=arms, noise=0.1, seed=8))]
    noisy.append(
        replace(
            noisy[0],
            rotations=np.einsum("ij,kjl->kil", g, noisy[0].rotations),
            positions=noisy[0].positions @ g.T,
            antenna_rotations=np.einsum("ij,kajl->kail", g, noisy[0].antenna_rotations),
            antenna_positions=noisy[0].antenna_positions @ g.T,
        )
    )
    opts = setting_options(setting)
    priors = setting_priors(setting, arms)
    for a, b in [(ds, turned), tuple(noisy)]:
        ra = calibrate(a.batch, priors, opts)
        rb = calibrate(b.batch, priors, opts)
        np.testing.assert_allclose(np.ravel(rb.lever_arms), np.ravel(ra.lever_arms), atol=1e-9)


def test_solve_problem_reuses_problem(noisy_three):
    prob = accumulate(noisy_three.batch, True, [ArmLength(i, 1.0) for i in range(3)])
    r = solve_problem(prob, SolverOptions(regularize=True))
    assert r.problem is prob
    assert residual_cost(noisy_three.batch, r.lever_arms, True) == pytest.approx(r.primal_cost, rel=1e-9)
