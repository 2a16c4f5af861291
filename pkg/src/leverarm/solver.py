"""Certifiably optimal lever-arm calibration.

The QCQP ``min zᵀQz  s.t.  1 + zᵀP_h z = 0,  zᵀP_j z = 0`` is attacked through
its Lagrangian dual ``max λ_1  s.t.  Z(λ) = Q + λ_1 P_h + Σ λ_j P_j ⪰ 0``. A
primal point is read off the null space of ``Z(λ*)``, polished with a local
SQP solve, and certified by comparing its cost with the dual bound.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import null_space

from .errors import MotionError, NoFeasibleRecovery, SolverFailure
from .qcqp import (
    AXES,
    ArmLength,
    ComponentMagnitude,
    MotionReport,
    PriorConstraint,
    QcqpProblem,
    StepsLike,
    Verdict,
    accumulate,
    as_batch,
    assess_motion,
)

log = logging.getLogger(__name__)

GAP_TOL = 1e-6
NULL_REL = 1e-6
NULL_ABS = 1e-8
PSD_TOL = 1e-7
SDP_TOLERANCES = (1e-10, 1e-9, 1e-8)


class Certificate(str, enum.Enum):
    CERTIFIED_GLOBAL = "CertifiedGlobal"
    VERIFIED_GLOBAL = "VerifiedGlobal"
    LOCAL_ONLY = "LocalOnly"


class SignPolicy(str, enum.Enum):
    ABOVE_IMU = "AboveImu"
    NONE = "None"


@dataclass(frozen=True)
class SolverOptions:
    regularize: bool = False
    regularization_weight: float = 1.0
    sign_policy: SignPolicy = SignPolicy.NONE
    gap_tol: float = GAP_TOL
    null_rel: float = NULL_REL
    null_abs: float = NULL_ABS
    dual_backend: str = "auto"  # "auto", "sdp" or "schur"
    check_motion: bool = True
    max_iter: int = 200
    step_tol: float = 1e-12


@dataclass(frozen=True, eq=False)
class DualSolution:
    lam: np.ndarray
    z_matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    status: str = "optimal"

    @property
    def bound(self) -> float:
        return float(self.lam[0])

    @property
    def psd_tolerance(self) -> float:
        return PSD_TOL * max(1.0, float(np.linalg.norm(self.z_matrix)))

    @property
    def is_feasible(self) -> bool:
        return bool(self.eigenvalues[0] >= -self.psd_tolerance)

    def safe_bound(self, radius_sq: float) -> float:
        """``λ_1`` lowered by the PSD violation of ``Z(λ)``.

        For feasible ``z`` with ``zᵀz <= radius_sq`` the cost is
        ``λ_1 + zᵀ Z(λ) z >= λ_1 + min(0, e_min) radius_sq``, so this stays a
        lower bound when the solver returns slightly infeasible multipliers.
        """
        return self.bound + min(0.0, float(self.eigenvalues[0])) * radius_sq


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    lever_arms: tuple
    mu: float
    primal_cost: float
    dual_bound: float
    duality_gap: float
    certificate: Certificate
    null_space_dim: int
    z: np.ndarray = field(repr=False)
    verdict: Optional[Verdict] = None
    converged: bool = True
    alternatives: tuple = ()  # (antenna, mirrored arm, cost) when the z sign is not fixed
    problem: Optional[QcqpProblem] = field(default=None, repr=False, compare=False)
    dual: Optional[DualSolution] = field(default=None, repr=False, compare=False)
    report: Optional[MotionReport] = field(default=None, repr=False, compare=False)

    @property
    def relative_gap(self) -> float:
        return self.duality_gap / (1.0 + abs(self.primal_cost))


@dataclass(frozen=True)
class RefineResult:
    z: np.ndarray
    converged: bool
    iterations: int


# Dual ---------------------------------------------------------------------------


def z_of_lambda(problem: QcqpProblem, lam: np.ndarray) -> np.ndarray:
    z = problem.q_matrix + lam[0] * problem.p_h
    for lj, p in zip(lam[1:], problem.p_q):
        z = z + lj * p
    return 0.5 * (z + z.T)


def _dual_from_lambda(problem, lam, status="optimal") -> DualSolution:
    lam = np.asarray(lam, dtype=float)
    zm = z_of_lambda(problem, lam)
    w, v = np.linalg.eigh(zm)
    return DualSolution(lam, zm, w, v, status)


def _solve_dual_schur(problem: QcqpProblem) -> DualSolution:
    # Only the homogenization constraint: λ_1* is the generalized Schur complement of Q_xx.
    q = problem.q_matrix
    m = problem.mu_index
    qxx, qx, qmm = q[:m, :m], q[:m, m], q[m, m]
    w, v = np.linalg.eigh(qxx)
    keep = w > max(w[-1], 0.0) * 1e-13 if w.size else np.zeros(0, bool)
    proj = v[:, keep].T @ qx
    lam1 = qmm - float(np.sum(proj**2 / w[keep]))
    return _dual_from_lambda(problem, np.array([lam1]), "optimal")


def _solve_dual_sdp(problem: QcqpProblem) -> DualSolution:
    import cvxopt
    from cvxopt import solvers

    n = problem.n
    mats = [problem.p_h, *problem.p_q]
    scale = float(np.linalg.norm(problem.q_matrix))
    if scale == 0.0:
        scale = 1.0
    c = cvxopt.matrix(np.r_[-1.0, np.zeros(len(mats) - 1)])
    g = cvxopt.matrix(np.column_stack([-p.reshape(-1, order="F") for p in mats]))
    h = cvxopt.matrix(problem.q_matrix / scale)
    failure = None
    # The interior-point iteration can break down numerically at the tightest
    # tolerance; retry looser ones down to 1e-8.
    for tol in SDP_TOLERANCES:
        opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 100}
        try:
            sol = solvers.sdp(c, Gs=[g], hs=[h], options=opts)
        except (ValueError, ArithmeticError) as exc:
            failure = SolverFailure("SDP solver breakdown", str(exc))
            continue
        if sol["x"] is None:
            failure = SolverFailure("SDP solver returned no point", sol["status"])
            continue
        dual = _dual_from_lambda(problem, np.array(sol["x"]).ravel() * scale, sol["status"])
        if sol["status"] == "optimal" or dual.is_feasible:
            # "unknown" means the requested accuracy was not reached; a dual
            # feasible point is still a valid bound.
            return dual
        failure = SolverFailure("SDP solver did not converge to a feasible point", sol["status"])
    raise failure


def solve_dual(problem: QcqpProblem, backend: str = "auto") -> DualSolution:
    """Maximize ``λ_1`` subject to ``Z(λ) ⪰ 0``.

    ``backend="auto"`` uses the closed form when there is no quadratic
    constraint and the cvxopt interior-point SDP solver otherwise.
    """
    if backend == "schur" or (backend == "auto" and not problem.p_q):
        if problem.p_q:
            raise ValueError("the Schur backend only handles the homogenization constraint")
        return _solve_dual_schur(problem)
    if backend not in ("auto", "sdp"):
        raise ValueError(f"unknown dual backend {backend!r}")
    return _solve_dual_sdp(problem)


def kkt_multipliers(problem: QcqpProblem, z: np.ndarray) -> DualSolution:
    """Multipliers making ``z`` stationary, ``Z(λ) z ≈ 0``, in the least-squares sense."""
    z = np.asarray(z, dtype=float)
    basis = np.column_stack([p @ z for p in (problem.p_h, *problem.p_q)])
    lam, *_ = np.linalg.lstsq(basis, -(problem.q_matrix @ z), rcond=None)
    return _dual_from_lambda(problem, lam, "kkt")


# Primal recovery -------------------------------------------------------------------


def null_space_dim(dual: DualSolution, null_rel: float = NULL_REL, null_abs: float = NULL_ABS) -> int:
    w = dual.eigenvalues
    threshold = max(null_abs, null_rel * max(float(w[-1]), 0.0))
    return max(1, int(np.sum(w < threshold)))


def _normalize(z: np.ndarray) -> Optional[np.ndarray]:
    mu = z[-1]
    if abs(mu) < 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        return None
    return z / mu


def _directions_2d(gram: np.ndarray) -> list[np.ndarray]:
    """Real solutions ``c`` (up to scale) of ``cᵀ G c = 0`` for a symmetric 2x2 ``G``."""
    w, u = np.linalg.eigh(gram)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    if abs(w[0]) <= tol and abs(w[1]) <= tol:
        return []
    if abs(w[0]) <= tol:
        return [u[:, 0]]
    if abs(w[1]) <= tol:
        return [u[:, 1]]
    if w[0] * w[1] > 0:
        return []
    a, b = np.sqrt(abs(w[1])), np.sqrt(abs(w[0]))
    return [a * u[:, 0] + b * u[:, 1], a * u[:, 0] - b * u[:, 1]]


def _feasibility_scale(problem: QcqpProblem) -> float:
    return 1.0 + max((abs(p[-1, -1]) for p in problem.p_q), default=0.0)


def recover_primal(
    dual: DualSolution,
    problem: QcqpProblem,
    null_rel: float = NULL_REL,
    null_abs: float = NULL_ABS,
    options: SolverOptions | None = None,
):
    """Primal candidate from the null space of ``Z(λ*)``.

    Returns ``(z, null_space_dim, candidates)`` where ``candidates`` lists the
    ``(z, cost)`` pairs considered, lowest cost first. For a null space of
    dimension three or more, the point is produced by :func:`refine_local`.
    """
    dim = null_space_dim(dual, null_rel, null_abs)
    basis = dual.eigenvectors[:, :dim]

    if dim == 1:
        z = _normalize(basis[:, 0])
        if z is None:
            raise NoFeasibleRecovery("null vector has no homogeneous component")
        return z, dim, [(z, problem.cost(z))]

    if dim == 2:
        candidates = _dim2_candidates(basis, problem)
        if not candidates:
            raise NoFeasibleRecovery("no real root of the constraint system in the 2-dimensional null space")
        return candidates[0][0], dim, candidates

    z0 = _normalize(basis[:, dim - 1])
    if z0 is None:
        # Fall back to the null-space vector with the largest homogeneous component.
        z0 = _normalize(basis @ basis[-1])
    if z0 is None:
        raise NoFeasibleRecovery("null space is orthogonal to the homogenization axis")
    options = options or SolverOptions()
    refined = refine_local(problem, z0, options.max_iter, options.step_tol)
    return refined.z, dim, [(refined.z, problem.cost(refined.z))]


def _dim2_candidates(basis: np.ndarray, problem: QcqpProblem) -> list:
    if problem.p_q:
        directions = []
        for p in problem.p_q:
            directions.extend(_directions_2d(basis.T @ p @ basis))
    else:
        # Homogenization alone leaves a one-parameter family; sample it.
        phi = np.linspace(0.0, np.pi, 721)[:-1]
        directions = list(np.stack([np.cos(phi), np.sin(phi)], axis=1))
    tol = 1e-6 * _feasibility_scale(problem)
    scored = []
    for c in directions:
        z = _normalize(basis @ c)
        if z is None:
            continue
        violation = float(np.max(np.abs(problem.constraint_values(z))))
        scored.append((violation > tol, problem.cost(z), violation, z))
    scored.sort(key=lambda item: (item[0], item[1], item[2]))
    return [(z, cost) for _, cost, _, z in scored]


# Local refinement ---------------------------------------------------------------------


def project_feasible(problem: QcqpProblem, z: np.ndarray) -> np.ndarray:
    """Closest-in-spirit feasible point: ``mu = 1``, fixed component magnitudes, arm lengths."""
    z = np.array(z, dtype=float)
    if z[-1] == 0.0:
        raise ValueError("cannot project a point with mu = 0")
    z = z / z[-1]
    for i in range(problem.o):
        x = z[3 * i : 3 * i + 3]
        fixed = {}
        length = None
        for prior in problem.priors:
            if prior.antenna != i:
                continue
            if isinstance(prior, ComponentMagnitude):
                fixed[AXES[prior.axis]] = prior.magnitude
            elif isinstance(prior, ArmLength):
                length = prior.length
        for axis, value in fixed.items():
            x[axis] = value if x[axis] >= 0 else -value
        if length is not None:
            free = [a for a in range(3) if a not in fixed]
            rest = length**2 - sum(v**2 for v in fixed.values())
            if free and rest > 0:
                r = np.linalg.norm(x[free])
                if r < 1e-12:
                    x[free[-1]] = 1.0
                    r = 1.0
                x[free] *= np.sqrt(rest) / r
            elif free:
                x[free] = 0.0
        z[3 * i : 3 * i + 3] = x
    return z


def refine_local(problem: QcqpProblem, z0: np.ndarray, max_iter: int = 200, step_tol: float = 1e-12) -> RefineResult:
    """Feasible projected Newton iteration on the primal problem with ``mu = 1``.

    Each iteration takes a Newton step in the tangent space of the active
    constraints (Hessian of the Lagrangian, shifted when indefinite), projects
    back onto the constraint set and backtracks on the cost. At saddle points
    the most negative curvature direction is tried in both orientations.
    """
    m = problem.mu_index
    q = problem.q_matrix
    qxx, qx = q[:m, :m], q[:m, m]
    pxx = [p[:m, :m] for p in problem.p_q]
    px = [p[:m, m] for p in problem.p_q]
    scale = max(1.0, float(np.linalg.norm(qxx)))
    neg_tol = 1e-9 * scale

    def f(x):
        return float(x @ qxx @ x + 2 * qx @ x + q[m, m])

    def project(x):
        return project_feasible(problem, np.r_[x, 1.0])[:m]

    x = project(np.asarray(z0, dtype=float)[:m] / z0[-1])
    fx = f(x)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2 * (qxx @ x + qx)
        hess = 2 * qxx
        if pxx:
            jac = np.array([2 * (a @ x + b) for a, b in zip(pxx, px)])
            nu, *_ = np.linalg.lstsq(jac.T, -grad, rcond=None)
            hess = hess + 2 * sum(v * a for v, a in zip(nu, pxx))
            basis = null_space(jac)
        else:
            basis = np.eye(m)
        if basis.shape[1] == 0:
            converged = True
            break
        red = basis.T @ hess @ basis
        w, u = np.linalg.eigh(0.5 * (red + red.T))
        shift = max(0.0, 1e-10 * scale - w[0])
        g_red = basis.T @ grad
        step = -basis @ np.linalg.solve(red + shift * np.eye(len(w)), g_red)
        x_norm = 1.0 + float(np.linalg.norm(x))
        small = float(np.linalg.norm(step)) <= step_tol * x_norm
        if small and w[0] >= -neg_tol:
            converged = True
            break

        best = None
        if not small:
            t = 1.0
            slope = float(grad @ step)
            while t > 1e-10:
                trial = project(x + t * step)
                ft = f(trial)
                if ft <= fx + 1e-4 * t * min(slope, 0.0) and ft <= fx:
                    best = (trial, ft)
                    break
                t *= 0.5
        if w[0] < -neg_tol:
            # Saddle: follow the most negative curvature direction either way.
            direction = basis @ u[:, 0]
            for length in x_norm * 0.5 ** np.arange(0, 30):
                found = False
                for sign in (1.0, -1.0):
                    trial = project(x + sign * length * direction)
                    ft = f(trial)
                    if ft < fx and (best is None or ft < best[1]):
                        best = (trial, ft)
                        found = True
                if found:
                    break
        if best is None or best[1] >= fx - 1e-15 * (1.0 + abs(fx)):
            # No decrease at working precision: stationary up to rounding.
            if best is not None:
                x, fx = best
            converged = bool(w[0] >= -neg_tol)
            break
        trial, ft = best
        x, fx = trial, ft
    return RefineResult(np.r_[x, 1.0], converged, it)


# Certification ---------------------------------------------------------------------------


def certify(primal_cost: float, dual_bound: float, null_dim: int, gap_tol: float = GAP_TOL) -> Certificate:
    tol = gap_tol * (1.0 + abs(primal_cost))
    gap = primal_cost - dual_bound
    if abs(gap) <= tol:
        return Certificate.CERTIFIED_GLOBAL if null_dim in (1, 2) else Certificate.VERIFIED_GLOBAL
    return Certificate.LOCAL_ONLY


def _radius_sq(problem: QcqpProblem, z: np.ndarray) -> float:
    # Exact over the feasible set when every antenna has a length prior;
    # otherwise the recovered point stands in for it.
    lengths = {p.antenna: p.length for p in problem.priors if isinstance(p, ArmLength)}
    if len(lengths) == problem.o:
        return 1.0 + sum(s * s for s in lengths.values())
    return float(z @ z)


def _best_dual(problem: QcqpProblem, z: np.ndarray, sdp_dual: DualSolution) -> tuple[DualSolution, float]:
    """The SDP or KKT multipliers with the larger safe bound, and that bound."""
    kkt = kkt_multipliers(problem, z)
    radius_sq = _radius_sq(problem, z)
    feasible = [d for d in (sdp_dual, kkt) if d.is_feasible] or [sdp_dual]
    best = max(feasible, key=lambda d: d.safe_bound(radius_sq))
    return best, best.safe_bound(radius_sq)


def _finish(problem, z, dim, dual, options, verdict=None, converged=True, report=None) -> CalibrationResult:
    cost = problem.cost(z)
    best, bound = _best_dual(problem, z, dual)
    gap = cost - bound
    result = CalibrationResult(
        lever_arms=tuple(problem.lever_arms(z)),
        mu=float(z[-1]),
        primal_cost=cost,
        dual_bound=bound,
        duality_gap=gap,
        certificate=certify(cost, bound, dim, options.gap_tol),
        null_space_dim=dim,
        z=z,
        verdict=verdict,
        converged=converged,
        problem=problem,
        dual=best,
        report=report,
    )
    if _sign_open(problem, verdict):
        result = replace(result, alternatives=_mirrored_alternatives(result))
    return result


def _sign_open(problem: QcqpProblem, verdict) -> bool:
    has_z_prior = any(isinstance(p, ComponentMagnitude) and p.axis == "z" for p in problem.priors)
    return has_z_prior or verdict is Verdict.PLANAR_ONLY


def _mirror(z: np.ndarray, antenna: int) -> np.ndarray:
    out = z.copy()
    out[3 * antenna + 2] *= -1.0
    return out


def _mirrored_alternatives(result: CalibrationResult) -> tuple:
    problem = result.problem
    alts = []
    for i in range(problem.o):
        mirrored = _mirror(result.z, i)
        alts.append((i, mirrored[3 * i : 3 * i + 3], problem.cost(mirrored)))
    return tuple(alts)


def disambiguate_sign(
    result: CalibrationResult, policy: SignPolicy = SignPolicy.NONE, gap_tol: float = GAP_TOL
) -> CalibrationResult:
    """Pick the mirrored solution along the up axis where policy requires it.

    Under ``AboveImu`` every antenna with a negative z component is mirrored;
    cost, gap and certificate are re-evaluated for the mirrored point.
    """
    policy = SignPolicy(policy)
    if policy is SignPolicy.NONE:
        return result
    z = result.z.copy()
    flipped = False
    for i, arm in enumerate(result.lever_arms):
        if arm[2] < 0:
            z = _mirror(z, i)
            flipped = True
    if not flipped:
        return result
    problem = result.problem
    if problem is None:
        raise ValueError("re-evaluating the mirrored cost needs the problem attached to the result")
    cost = problem.cost(z)
    best, bound = _best_dual(problem, z, result.dual) if result.dual is not None else (None, result.dual_bound)
    mirrored = replace(
        result,
        lever_arms=tuple(problem.lever_arms(z)),
        z=z,
        primal_cost=cost,
        dual_bound=bound,
        duality_gap=cost - bound,
        certificate=certify(cost, bound, result.null_space_dim, gap_tol),
        dual=best if best is not None else result.dual,
    )
    return replace(mirrored, alternatives=_mirrored_alternatives(mirrored))


# Pipeline ---------------------------------------------------------------------------------


def _planar_priors_ok(priors: Sequence[PriorConstraint], o: int) -> bool:
    covered = set()
    for p in priors:
        if isinstance(p, ArmLength) or (isinstance(p, ComponentMagnitude) and p.axis == "z"):
            covered.add(p.antenna)
    return covered >= set(range(o))


def solve_problem(
    problem: QcqpProblem, options: SolverOptions = SolverOptions(), verdict=None, report=None
) -> CalibrationResult:
    dual = solve_dual(problem, options.dual_backend)
    z, dim, _ = recover_primal(dual, problem, options.null_rel, options.null_abs, options)
    refined = refine_local(problem, z, options.max_iter, options.step_tol)
    # Keep the polished point only if it does not increase the cost.
    if problem.cost(refined.z) <= problem.cost(z) + 1e-12 * (1.0 + abs(problem.cost(z))) or np.max(
        np.abs(problem.constraint_values(z))
    ) > 1e-7 * _feasibility_scale(problem):
        z = refined.z
    result = _finish(problem, z, dim, dual, options, verdict, refined.converged, report)
    return disambiguate_sign(result, options.sign_policy, options.gap_tol)


def calibrate(
    steps: StepsLike, priors: Sequence[PriorConstraint] = (), options: SolverOptions = SolverOptions()
) -> CalibrationResult:
    """Estimate all lever arms from IMU motions and antenna translations.

    Raises
    ------
    MotionError
        Degenerate motion, or planar motion without a length or height prior
        for every antenna.
    SolverFailure, NoFeasibleRecovery
        Propagated from the dual solve and primal recovery.
    """
    batch = as_batch(steps)
    report = None
    verdict = None
    if options.check_motion:
        report = assess_motion(batch)
        verdict = report.verdict
        if verdict is Verdict.DEGENERATE:
            raise MotionError("Degenerate motion: no rotation in the dataset", report)
        if verdict is Verdict.PLANAR_ONLY and not _planar_priors_ok(priors, batch.antenna_count):
            raise MotionError(
                "PlanarOnly motion without prior knowledge: every antenna needs an arm-length or z-magnitude prior",
                report,
            )
    problem = accumulate(batch, options.regularize, priors, options.regularization_weight)
    return solve_problem(problem, options, verdict, report)
