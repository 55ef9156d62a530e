"""Certified constants, growth bounds, and the local-optimality radius.

All constants are measured on a dense grid of exact polynomial derivatives
and inflated by a documented safety margin; the growth functions are closed
forms of those constants, so every certificate claim is auditable from the
numbers stored in it.  Verification replays the whole chain on random
energy-nonincreasing perturbations and records per-trial slacks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ControlSignal, Domain, SRFrame, SRXError, Trajectory, control_inner
from .extremals import NSREReport, nsre_check
from .flows import tangent_flow
from .homotopy import (drift_matrix, endpoint_separation, energy_comparison_check,
                       natural_homotopy, spread_matrix, variation_fields)

MARGIN_FACTOR = 0.999
EPSILON_REL_TOL = 1e-6


class NotCertifiableError(SRXError):
    """No positive optimality radius can be certified for this run."""

    def __init__(self, message: str, report: NSREReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class FrameConstants:
    """Margined sup/Lipschitz bounds of the frame fields over the domain.

    C0 bounds field norms, C1 bounds Jacobian columns, C2 is a Lipschitz
    constant of the fields (largest Jacobian spectral norm on the convex
    box), and C3 a Lipschitz constant of the Jacobian columns (largest
    second-derivative slice spectral norm).  All four include the margin.
    """

    C0: float
    C1: float
    C2: float
    C3: float
    grid_resolution: int
    margin: float

    def to_json_dict(self) -> dict:
        return {"C0": self.C0, "C1": self.C1, "C2": self.C2, "C3": self.C3,
                "grid_resolution": self.grid_resolution, "margin": self.margin}


def estimate_constants(frame: SRFrame, domain: Domain, grid_resolution: int = 21,
                       margin: float = 1.1) -> FrameConstants:
    """Measure C0..C3 on an inclusive grid of the domain closure."""
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    pts = domain.grid(grid_resolution)
    if pts.shape[0] == 0:
        raise ValueError("empty constant-estimation grid")

    fvals = frame.field_matrix_many(pts)                      # (P, n, k)
    c0 = float(np.linalg.norm(fvals, axis=1).max())

    jacs = frame.jacobians_many(pts)                          # (P, k, n, n)
    c1 = float(np.linalg.norm(jacs, axis=2).max())            # column norms
    c2 = float(np.linalg.svd(
        jacs.reshape(-1, frame.n, frame.n), compute_uv=False)[:, 0].max())

    hess = frame.hessians_many(pts)                           # (P, k, a, b, c)
    # Lipschitz of the column map q -> dX_i/dq^b: slice over (a, c) per (i, b).
    slices = np.swapaxes(hess, 2, 3).reshape(-1, frame.n, frame.n)
    if slices.shape[0]:
        c3 = float(np.linalg.svd(slices, compute_uv=False)[:, 0].max())
    else:
        c3 = 0.0

    return FrameConstants(margin * c0, margin * c1, margin * c2, margin * c3,
                          grid_resolution, margin)


def _check_horizon(t: float) -> float:
    t = float(t)
    if t < 0.0:
        raise ValueError("horizon must be nonnegative")
    return t


def zeta(t: float, constants: FrameConstants, k: int) -> float:
    """Growth bound for the spread |gamma_s(t) - gamma_0(t)| per unit L2 norm."""
    t = _check_horizon(t)
    rk = math.sqrt(k)
    return math.exp(rk * constants.C2 * t) * rk * constants.C0


def psi(t: float, constants: FrameConstants, k: int, n: int) -> float:
    """Growth bound for the variation norm |b_s(t)| per unit L2 norm."""
    t = _check_horizon(t)
    rk = math.sqrt(k)
    return math.exp(3.0 * constants.C1 * rk * n * t) * constants.C0 * rk


def xi(t: float, constants: FrameConstants, k: int, n: int) -> float:
    """Growth bound for the variation drift |b_s(t) - b_0(t)| per squared L2 norm."""
    t = _check_horizon(t)
    rk = math.sqrt(k)
    z = zeta(t, constants, k)
    p = psi(t, constants, k, n)
    return math.exp(rk * n * constants.C1 * t) * (
        rk * n * constants.C3 * t * z * p
        + rk * (n * constants.C1 * p + constants.C2 * z))


def compute_eta(traj: Trajectory, domain: Domain,
                constants: FrameConstants) -> float:
    """Tube radius: worst node distance to the boundary minus a step allowance.

    The allowance dt * C0 * sqrt(k) absorbs how far the true curve can stray
    from its grid nodes within one cell.
    """
    if traj.left_domain:
        raise NotCertifiableError("trajectory leaves the domain")
    dists = np.minimum(traj.states - domain.lower,
                       domain.upper - traj.states).min(axis=1)
    worst = float(dists.min())
    if worst <= 0.0:
        raise NotCertifiableError("trajectory touches the domain boundary")
    allowance = traj.control.dt * constants.C0 * math.sqrt(traj.control.k)
    eta = worst - allowance
    if eta <= 0.0:
        raise NotCertifiableError(
            f"tube radius nonpositive ({eta:.3e}); domain too tight for the grid")
    return eta


@dataclass(frozen=True)
class EpsilonResult:
    """Radius together with the condition values it was checked against."""

    epsilon: float
    domain_lhs: float    # 4 * eps * zeta(eps)
    domain_limit: float  # eta
    angle_lhs: float     # eps * xi(eps)
    angle_limit: float   # c / 2
    monotone_ok: bool
    capped: bool
    t_max: float
    margin_factor: float

    @property
    def domain_ok(self) -> bool:
        return self.domain_lhs < self.domain_limit

    @property
    def angle_ok(self) -> bool:
        return self.angle_lhs < self.angle_limit


def compute_epsilon(constants: FrameConstants, c: float, eta: float, k: int,
                    n: int, t_max: float, *,
                    margin_factor: float = MARGIN_FACTOR,
                    rel_tol: float = EPSILON_REL_TOL) -> EpsilonResult:
    """Largest radius satisfying 4*eps*zeta(eps) < eta and eps*xi(eps) < c/2.

    Both left-hand sides are products of nonnegative nondecreasing factors;
    that monotonicity is asserted on a sampled grid, not assumed, and then a
    bisection on (0, t_max] locates the boundary to rel_tol.  The strict
    inequalities are enforced through the margin factor.
    """
    if c <= 0.0:
        raise NotCertifiableError("angle constant c <= 0: not a certified NSRE")
    if eta <= 0.0:
        raise NotCertifiableError("tube radius eta <= 0")
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")

    def domain_lhs(e: float) -> float:
        return 4.0 * e * zeta(e, constants, k)

    def angle_lhs(e: float) -> float:
        return e * xi(e, constants, k, n)

    samples = np.linspace(0.0, t_max, 101)
    mono = all(
        domain_lhs(b) >= domain_lhs(a) - 1e-12 and
        angle_lhs(b) >= angle_lhs(a) - 1e-12
        for a, b in zip(samples[:-1], samples[1:]))
    if not mono:
        raise SRXError("condition left-hand sides are not monotone; "
                       "constants are inconsistent")

    def feasible(e: float) -> bool:
        return (domain_lhs(e) <= margin_factor * eta
                and angle_lhs(e) <= margin_factor * 0.5 * c)

    if feasible(t_max):
        eps, capped = t_max, True
    else:
        lo, hi = 0.0, t_max
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        eps, capped = lo, False
    if eps <= 0.0:
        raise NotCertifiableError("no positive radius satisfies the conditions")
    return EpsilonResult(eps, domain_lhs(eps), eta, angle_lhs(eps), 0.5 * c,
                         mono, capped, t_max, margin_factor)


@dataclass(frozen=True)
class Certificate:
    """Local-optimality certificate for one trajectory inside one domain."""

    constants: FrameConstants
    c: float
    eta: float
    epsilon: float
    zeta_eps: float
    psi_eps: float
    xi_eps: float
    conditions: EpsilonResult
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "C0": self.constants.C0,
            "C1": self.constants.C1,
            "C2": self.constants.C2,
            "C3": self.constants.C3,
            "margin": self.constants.margin,
            "c": self.c,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "zeta_eps": self.zeta_eps,
            "psi_eps": self.psi_eps,
            "xi_eps": self.xi_eps,
            "conditions": {
                "domain": self.conditions.domain_ok,
                "angle": self.conditions.angle_ok,
                "domain_lhs": self.conditions.domain_lhs,
                "angle_lhs": self.conditions.angle_lhs,
                "monotone_ok": self.conditions.monotone_ok,
                "capped": self.conditions.capped,
                "t_max": self.conditions.t_max,
                "margin_factor": self.conditions.margin_factor,
            },
            "provenance": {
                "grid": self.constants.grid_resolution,
                "seed": self.seed,
            },
        }


def build_certificate(frame: SRFrame, domain: Domain, u: ControlSignal,
                      traj: Trajectory, *, grid_resolution: int = 21,
                      margin: float = 1.1,
                      margin_factor: float = MARGIN_FACTOR,
                      t_max: float | None = None, seed: int = 0,
                      substeps: int = 1,
                      nsre_kwargs: dict | None = None
                      ) -> tuple[Certificate, NSREReport]:
    """Run the full chain: constants, NSRE test, tube radius, radius search."""
    constants = estimate_constants(frame, domain, grid_resolution, margin)
    tf = tangent_flow(frame, u, traj, 0.0, substeps=substeps)
    report = nsre_check(frame, u, traj, tf, **(nsre_kwargs or {}))
    if report.status == "failed":
        raise NotCertifiableError("trajectory fails the NSRE regularity test",
                                  report)
    if report.status == "inconclusive":
        raise NotCertifiableError("NSRE angle condition is inconclusive at this "
                                  "resolution", report)
    eta = compute_eta(traj, domain, constants)
    horizon = t_max if t_max is not None else traj.horizon
    result = compute_epsilon(constants, report.c, eta, frame.k, frame.n,
                             horizon, margin_factor=margin_factor)
    eps = result.epsilon
    cert = Certificate(constants, report.c, eta, eps,
                       zeta(eps, constants, frame.k),
                       psi(eps, constants, frame.k, frame.n),
                       xi(eps, constants, frame.k, frame.n),
                       result, seed)
    return cert, report


def sample_admissible_perturbation(rng: np.random.Generator, u: ControlSignal,
                                   amp_range: tuple[float, float] = (0.05, 0.7),
                                   max_attempts: int = 200
                                   ) -> tuple[ControlSignal, int]:
    """Draw a random energy-nonincreasing perturbation of u.

    A Gaussian draw is split into its u-parallel and u-orthogonal parts (in
    the exact cell-sum L2 sense); the parallel coefficient is then placed
    strictly inside the interval where the perturbed energy does not exceed
    the original.  Draws whose orthogonal part is too large for any feasible
    parallel coefficient are rejected and counted.
    """
    u2 = u.l2_norm_sq()
    rejected = 0
    for _ in range(max_attempts):
        amp = rng.uniform(*amp_range)
        raw = rng.standard_normal(u.samples.shape) * (amp / math.sqrt(u.k))
        a_raw = float(np.sum(u.samples * raw) * u.dt / u2)
        w = raw - a_raw * u.samples
        rho2 = float(np.sum(w * w) * u.dt / u2)
        if rho2 >= 0.999:
            rejected += 1
            continue
        beta = rng.uniform(-0.95, 0.95)
        a = -1.0 + beta * math.sqrt(1.0 - rho2)
        return ControlSignal(u.horizon, a * u.samples + w), rejected
    raise SRXError("perturbation sampler rejected every attempt")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    norm_du: float
    separation: float
    bound: float
    slack: float
    violations: tuple[str, ...]
    rejected: int


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Per-trial slacks of the separation bound and every growth bound."""

    trials: tuple[TrialRecord, ...]
    t_prime: float
    bound_coefficient: float
    base_seed: int
    n_s: int

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def total_rejected(self) -> int:
        return sum(t.rejected for t in self.trials)

    @property
    def violation_count(self) -> int:
        return sum(1 for t in self.trials if t.violations)

    @property
    def failing_seeds(self) -> tuple[int, ...]:
        return tuple(t.seed for t in self.trials if t.violations)

    @property
    def ok(self) -> bool:
        return self.violation_count == 0

    def worst_slack(self) -> float:
        return min(t.slack for t in self.trials)

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["trial", "norm_du", "separation", "bound", "slack"]
        rows = [[t.trial, t.norm_du, t.separation, t.bound, t.slack]
                for t in self.trials]
        return header, rows

    def to_json_dict(self) -> dict:
        return {
            "t_prime": self.t_prime,
            "bound_coefficient": self.bound_coefficient,
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "violations": self.violation_count,
            "rejected": self.total_rejected,
            "failing_seeds": list(self.failing_seeds),
        }


def verify_certificate(frame: SRFrame, domain: Domain, u: ControlSignal,
                       traj: Trajectory, cert: Certificate, *,
                       n_trials: int = 200, base_seed: int = 0,
                       t_prime: float | None = None, n_s: int = 16,
                       threads: int = 1, substeps: int = 1,
                       slack_tol: float = 1e-9) -> VerificationReport:
    """Monte-Carlo check of the certificate on the restricted horizon.

    For every trial the perturbed homotopy must stay in the domain, the
    endpoint separation must meet (c/2 - T' xi(T')) * |du|^2, and all growth
    bounds (spread, variation, drift, the angle lower bound on b_0, and the
    energy-comparison identity) must hold.  Trials are seeded base_seed +
    trial, so the report is identical for any thread count.
    """
    dt = u.dt
    target = t_prime if t_prime is not None else min(cert.epsilon, 0.05)
    m = int(math.floor(target / dt + 1e-9))
    while m >= 1 and m * dt > cert.epsilon + 1e-12:
        m -= 1
    if m < 1:
        raise NotCertifiableError(
            "certified radius is below one control cell; refine the grid")
    tp = m * dt
    u_r = u.restrict(m)
    q0 = traj.q0

    z = zeta(tp, cert.constants, frame.k)
    p = psi(tp, cert.constants, frame.k, frame.n)
    x = xi(tp, cert.constants, frame.k, frame.n)
    bound_coef = 0.5 * cert.c - tp * x

    def run_trial(i: int) -> TrialRecord:
        rng = np.random.default_rng(cert.seed + base_seed + i)
        du, rejected = sample_admissible_perturbation(rng, u_r)
        hom = natural_homotopy(frame, u_r, du, q0, n_s, domain, substeps)
        fields = variation_fields(frame, u_r, hom, substeps)
        sep = endpoint_separation(hom)
        du_l2 = du.l2_norm()
        du_sq = du.l2_norm_sq()
        bound = bound_coef * du_sq
        slack = sep.separation - bound

        violations: list[str] = []
        if not hom.in_domain:
            violations.append("homotopy_left_domain")
        if slack < -slack_tol:
            violations.append("separation_bound")
        if sep.separation <= 0.0:
            violations.append("separation_zero")
        if spread_matrix(hom).max() > math.sqrt(tp) * z * du_l2 + slack_tol:
            violations.append("spread_bound")
        if max(f.max_norm() for f in fields) > math.sqrt(tp) * p * du_l2 + slack_tol:
            violations.append("variation_bound")
        if drift_matrix(fields).max() > tp * x * du_sq + slack_tol:
            violations.append("drift_bound")
        b0_norms = np.linalg.norm(fields[0].vectors, axis=1)
        phi_cum = np.abs(control_inner(u_r, du).cumulative)
        if np.any(b0_norms < cert.c * phi_cum - slack_tol):
            violations.append("b0_lower_bound")
        comparison = energy_comparison_check(u_r, du)
        if not (comparison.applicable and comparison.holds and comparison.bound2):
            violations.append("energy_comparison")

        return TrialRecord(i, cert.seed + base_seed + i, du_l2, sep.separation,
                           bound, slack, tuple(violations), rejected)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = tuple(pool.map(run_trial, range(n_trials)))
    else:
        records = tuple(run_trial(i) for i in range(n_trials))
    return VerificationReport(records, tp, bound_coef, base_seed, n_s)
