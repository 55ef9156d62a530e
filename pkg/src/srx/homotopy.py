"""Natural homotopies between trajectories and their variation fields.

The homotopy member at parameter s follows the control u + s*du from the
shared initial point.  Its s-derivative (the variation field) is computed by
two independent routes: the inhomogeneous linear ODE along the member, and a
flow-pushforward quadrature along the base member; agreement of both is a
core consistency check of the whole pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (ControlSignal, Domain, InnerProduct, SRFrame, Trajectory,
                   control_inner, require_same_grid)
from .extremals import (ACB_BOUND, SIGMA_TOL, NotNormalizedError,
                        OrthoDistribution, build_f_perp)
from .flows import TangentFlow, integrate_trajectory


@dataclass(frozen=True, eq=False)
class Homotopy:
    """Family of trajectories gamma_s driven by u + s*du, s on a uniform grid."""

    s_grid: np.ndarray
    trajectories: tuple[Trajectory, ...]
    delta_u: ControlSignal

    @property
    def base(self) -> Trajectory:
        return self.trajectories[0]

    @property
    def tip(self) -> Trajectory:
        return self.trajectories[-1]

    @property
    def in_domain(self) -> bool:
        return not any(t.left_domain for t in self.trajectories)

    def s_index(self, s: float) -> int:
        idx = int(np.argmin(np.abs(self.s_grid - s)))
        if abs(self.s_grid[idx] - s) > 1e-12:
            raise ValueError(f"s={s} is not on the homotopy grid")
        return idx


@dataclass(frozen=True, eq=False)
class VariationField:
    """s-derivative of the homotopy along one member, b_s(t) on the time grid."""

    s: float
    grid: np.ndarray
    vectors: np.ndarray  # (N_t + 1, n)

    def at(self, t: float) -> np.ndarray:
        from .core import node_index
        return self.vectors[node_index(self.grid, t)]

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.vectors, axis=1).max())


def natural_homotopy(frame: SRFrame, u: ControlSignal, du: ControlSignal, q0,
                     n_s: int = 16, domain: Domain | None = None,
                     substeps: int = 1) -> Homotopy:
    """Integrate the n_s + 1 member trajectories of the natural homotopy."""
    require_same_grid(u, du)
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    s_grid = np.linspace(0.0, 1.0, n_s + 1)
    members = tuple(
        integrate_trajectory(frame, u.perturbed(du, s), q0, domain, substeps)
        for s in s_grid)
    return Homotopy(s_grid, members, du)


def variation_direct(frame: SRFrame, u: ControlSignal, du: ControlSignal,
                     homotopy: Homotopy, s: float,
                     substeps: int = 1) -> VariationField:
    """Variation field at parameter s from its inhomogeneous linear ODE.

    Integrates db/dt = f_du(gamma_s) + Df_{u+s du}(gamma_s) b with b(0) = 0,
    re-running the member state alongside so the RK4 stages match the member
    integration exactly.
    """
    require_same_grid(u, du)
    idx = homotopy.s_index(s)
    member = homotopy.trajectories[idx]
    s_val = float(homotopy.s_grid[idx])
    us = u.perturbed(du, s_val)

    n_cells = u.n_cells
    h = u.dt / substeps
    vectors = np.zeros((n_cells + 1, frame.n))
    q = member.q0.copy()
    b = np.zeros(frame.n)
    for j in range(n_cells):
        us_cell = us.samples[j]
        du_cell = du.samples[j]

        def fq(p):
            return frame._field_matrix_fast(p) @ us_cell

        def fb(p, w):
            mat = frame._field_matrix_fast(p)
            return mat @ du_cell + frame._control_jacobian_fast(p, us_cell) @ w

        for _ in range(substeps):
            k1q = fq(q)
            k1b = fb(q, b)
            q2 = q + 0.5 * h * k1q
            k2q = fq(q2)
            k2b = fb(q2, b + 0.5 * h * k1b)
            q3 = q + 0.5 * h * k2q
            k3q = fq(q3)
            k3b = fb(q3, b + 0.5 * h * k2b)
            q4 = q + h * k3q
            k4q = fq(q4)
            k4b = fb(q4, b + h * k3b)
            q = q + (h / 6.0) * (k1q + 2.0 * (k2q + k3q) + k4q)
            b = b + (h / 6.0) * (k1b + 2.0 * (k2b + k3b) + k4b)
        vectors[j + 1] = b

    return VariationField(s_val, member.grid, vectors)


def variation_integral(frame: SRFrame, u: ControlSignal, du: ControlSignal,
                       traj0: Trajectory, tf: TangentFlow) -> VariationField:
    """Variation field at s = 0 by flow pushforward of the control increment.

    b(t) = integral over [0, t] of the two-point tangent map applied to
    f_du(gamma(tau)), evaluated with the trapezoid rule per control cell
    (du is frozen within a cell, so the integrand is smooth cellwise).
    Shares no integration code with variation_direct.
    """
    require_same_grid(u, du)
    mats = frame.field_matrix_many(traj0.states)            # (N+1, n, k)
    inv = tf.inverses()
    n_cells = u.n_cells

    f_left = np.einsum("jnk,jk->jn", mats[:-1], du.samples)
    f_right = np.einsum("jnk,jk->jn", mats[1:], du.samples)
    y_left = np.einsum("jab,jb->ja", inv[:-1], f_left)
    y_right = np.einsum("jab,jb->ja", inv[1:], f_right)

    increments = 0.5 * u.dt * (y_left + y_right)
    pulled = np.zeros((n_cells + 1, frame.n))
    np.cumsum(increments, axis=0, out=pulled[1:])
    vectors = np.einsum("jab,jb->ja", tf.matrices, pulled)
    return VariationField(0.0, traj0.grid, vectors)


def variation_fields(frame: SRFrame, u: ControlSignal, homotopy: Homotopy,
                     substeps: int = 1) -> tuple[VariationField, ...]:
    """Variation fields at every node of the homotopy's s-grid."""
    return tuple(
        variation_direct(frame, u, homotopy.delta_u, homotopy, s, substeps)
        for s in homotopy.s_grid)


def node_velocity(frame: SRFrame, u: ControlSignal, traj: Trajectory,
                  m: int) -> np.ndarray:
    """Velocity of the trajectory at grid node m.

    Interior nodes average the adjacent cell controls, which is exact for
    constant controls and second-order accurate for smooth sampled ones.
    """
    if m == 0:
        u_node = u.samples[0]
    elif m == u.n_cells:
        u_node = u.samples[-1]
    else:
        u_node = 0.5 * (u.samples[m - 1] + u.samples[m])
    return frame.field_matrix(traj.states[m]) @ u_node


def max_velocity_derivative(frame: SRFrame, u: ControlSignal,
                            traj: Trajectory) -> float:
    """Largest difference quotient of cellwise velocities (ACB proxy)."""
    mats = frame.field_matrix_many(traj.states[:-1])
    vel = np.einsum("jnk,jk->jn", mats, u.samples)
    if u.n_cells < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(vel, axis=0) / u.dt, axis=1).max())


@dataclass(frozen=True, eq=False)
class VariationSplit:
    """Split of the s=0 variation into a velocity multiple plus a span part."""

    t: float
    coefficient: float
    residual: np.ndarray
    residual_in_span: bool
    relative_residual: float
    b0_t: np.ndarray
    velocity: np.ndarray
    hypothesis_verified: bool


def decompose_variation(frame: SRFrame, u: ControlSignal, du: ControlSignal,
                        traj0: Trajectory, tf: TangentFlow, t: float, *,
                        b_field: VariationField | None = None,
                        f_perp: OrthoDistribution | None = None,
                        in_span_rtol: float = 1e-6,
                        acb_bound: float = ACB_BOUND,
                        sigma_tol: float = SIGMA_TOL,
                        tau_range: str = "0..t",
                        sample_stride: int = 1) -> VariationSplit:
    """Write b_0(t) as (running integral of phi) * velocity + span residual.

    The coefficient is the exact running integral of the control inner
    product; the residual is tested for membership in the flow-pushed
    orthogonal span at relative tolerance in_span_rtol (a zero b_0 counts as
    in-span).  When the ACB regularity proxy fails the split is still
    returned but flagged hypothesis_verified=False.
    """
    if not u.is_normalized():
        raise NotNormalizedError("decomposition requires a normalized control")
    m = traj0.node_index(t)
    if b_field is None:
        b_field = variation_integral(frame, u, du, traj0, tf)
    b0_t = b_field.vectors[m]
    coefficient = float(control_inner(u, du).cumulative[m])
    velocity = node_velocity(frame, u, traj0, m)
    residual = b0_t - coefficient * velocity

    if f_perp is None:
        f_perp = build_f_perp(frame, traj0, tf, t, sample_stride, tau_range,
                              sigma_tol)
    b0_norm = float(np.linalg.norm(b0_t))
    if b0_norm == 0.0:
        in_span, rel = True, 0.0
    else:
        rel = f_perp.residual(residual) / b0_norm
        in_span = rel <= in_span_rtol

    hypothesis = max_velocity_derivative(frame, u, traj0) <= acb_bound
    return VariationSplit(float(traj0.grid[m]), coefficient, residual, in_span,
                          float(rel), b0_t, velocity, hypothesis)


def decomposition_residual_profile(frame: SRFrame, u: ControlSignal,
                                   du: ControlSignal, traj0: Trajectory,
                                   tf: TangentFlow, *,
                                   sigma_tol: float = SIGMA_TOL,
                                   tau_range: str = "0..t",
                                   sample_stride: int = 1) -> np.ndarray:
    """Relative span residual of the decomposition at every grid node.

    Same computation as decompose_variation, batched: the orthogonal
    directions are pulled back once and re-spanned per node.  Nodes with a
    zero variation report 0 (degenerate case counts as in-span).
    """
    from .extremals import _pulled_complements, _span_at

    b_field = variation_integral(frame, u, du, traj0, tf)
    phi_cum = control_inner(u, du).cumulative
    pulled = _pulled_complements(frame, u, traj0, tf)
    n_nodes = traj0.grid.shape[0]
    out = np.zeros(n_nodes)
    for m in range(n_nodes):
        b0 = b_field.vectors[m]
        norm = float(np.linalg.norm(b0))
        if norm == 0.0:
            continue
        residual = b0 - float(phi_cum[m]) * node_velocity(frame, u, traj0, m)
        last = n_nodes - 1 if tau_range == "0..T" else m
        span = _span_at(pulled, tf, m, np.arange(0, last + 1, sample_stride),
                        sigma_tol)
        out[m] = span.residual(residual) / norm
    return out


@dataclass(frozen=True, eq=False)
class EnergyComparison:
    """Quantities of the energy-comparison inequality for one perturbation.

    For energy-nonincreasing perturbations of a normalized control,
    -integral(phi) must dominate half the squared L2 norm of du, and the L2
    norm of du cannot exceed 2*sqrt(T).  Slacks are reported so callers can
    assert quantitative margins.
    """

    applicable: bool
    lhs: float
    rhs: float
    slack: float
    holds: bool
    du_l2: float
    du_l2_limit: float
    bound2: bool
    bound2_slack: float
    phi: InnerProduct


def energy_comparison_check(u: ControlSignal, du: ControlSignal,
                            slack_tol: float = 1e-12) -> EnergyComparison:
    require_same_grid(u, du)
    phi = control_inner(u, du)
    lhs = -phi.total
    rhs = 0.5 * du.l2_norm_sq()
    slack = lhs - rhs
    e_old = u.energy()
    e_new = u.perturbed(du).energy()
    applicable = e_new <= e_old + slack_tol * max(1.0, e_old)
    du_l2 = du.l2_norm()
    limit = 2.0 * math.sqrt(u.horizon)
    return EnergyComparison(applicable, lhs, rhs, slack,
                            slack >= -slack_tol, du_l2, limit,
                            du_l2 <= limit + slack_tol, limit - du_l2, phi)


@dataclass(frozen=True, eq=False)
class Separation:
    """Endpoint gap of a homotopy and the endpoint curve behind it."""

    separation: float
    endpoints: np.ndarray  # (n_s + 1, n)


def endpoint_separation(homotopy: Homotopy) -> Separation:
    endpoints = np.vstack([t.endpoint for t in homotopy.trajectories])
    sep = float(np.linalg.norm(endpoints[-1] - endpoints[0]))
    return Separation(sep, endpoints)


def spread_matrix(homotopy: Homotopy) -> np.ndarray:
    """Norms |gamma_s(t) - gamma_0(t)| over the full (s, t) grid."""
    base = homotopy.base.states
    return np.stack([
        np.linalg.norm(member.states - base, axis=1)
        for member in homotopy.trajectories])


def drift_matrix(fields: tuple[VariationField, ...]) -> np.ndarray:
    """Norms |b_s(t) - b_0(t)| over the full (s, t) grid."""
    base = fields[0].vectors
    return np.stack([
        np.linalg.norm(f.vectors - base, axis=1) for f in fields])
