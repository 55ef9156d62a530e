"""Flow-invariant orthogonal spans, the NSRE test, and a Hamiltonian oracle.

The geometric test asks whether the smallest flow-invariant distribution
containing the part of D orthogonal to the velocity ever swallows the
velocity itself.  Spans are built numerically by pushing orthogonal
directions through the tangent flow and rank-truncating an SVD.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ControlSignal, Domain, SRFrame, SRXError, Trajectory
from .flows import DomainExitError, IntegrationError, TangentFlow, tangent_flow

SIGMA_TOL = 1e-8
THETA_MIN = 1e-3
ACB_BOUND = 50.0


class DegenerateSpanError(SRXError):
    """Span construction has no columns to work with."""


class NotNormalizedError(SRXError):
    """An operation requires a unit-speed (normalized) control."""


def orthogonal_control_complement(u_cell) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of u_cell in R^k.

    Returns a (k, k-1) matrix built from the Householder reflector that maps
    u/|u| onto +-e1; the remaining reflector columns span the complement.
    """
    u = np.asarray(u_cell, dtype=float)
    if u.ndim != 1:
        raise ValueError("u_cell must be a vector")
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        raise ValueError("zero control vector has no orthogonal complement")
    k = u.shape[0]
    v = u / nrm
    w = v.copy()
    w[0] += 1.0 if v[0] >= 0.0 else -1.0
    h = np.eye(k) - 2.0 * np.outer(w, w) / np.dot(w, w)
    return h[:, 1:]


@dataclass(frozen=True, eq=False)
class OrthoDistribution:
    """Numerical span of flow-pushed orthogonal directions at one time."""

    t: float
    basis: np.ndarray            # (n, r), orthonormal columns
    singular_values: np.ndarray  # full spectrum before truncation
    tau_grid: np.ndarray         # sample times that produced the columns

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        if self.rank == 0:
            return np.zeros_like(v)
        return self.basis @ (self.basis.T @ v)

    def residual(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(v - self.project(v)))


def angle_to_subspace(v, dist: OrthoDistribution) -> float:
    """Angle in [0, pi/2] between a nonzero vector and the span."""
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ValueError("angle of the zero vector is undefined")
    ratio = dist.residual(v) / nrm
    return float(np.arcsin(min(max(ratio, 0.0), 1.0)))


def _node_controls(u: ControlSignal) -> np.ndarray:
    """Control value attached to each grid node (last node uses the last cell)."""
    return np.vstack([u.samples, u.samples[-1:]])


def _pulled_complements(frame: SRFrame, u: ControlSignal, traj: Trajectory,
                        tf: TangentFlow) -> np.ndarray:
    """Orthogonal directions at every node, pulled back to the flow anchor.

    Shape (N_t + 1, n, k - 1).  Pulling back once lets every later query
    push the whole stack to any time with a single matrix product.
    """
    if frame.k < 2:
        raise DegenerateSpanError("rank-1 distributions have an empty orthogonal part")
    node_u = _node_controls(u)
    mats = frame.field_matrix_many(traj.states)          # (N+1, n, k)
    cols = np.empty((traj.grid.shape[0], frame.n, frame.k - 1))
    for j in range(traj.grid.shape[0]):
        w = orthogonal_control_complement(node_u[j])
        cols[j] = mats[j] @ w
    return np.einsum("jab,jbc->jac", tf.inverses(), cols)


def _span_at(pulled: np.ndarray, tf: TangentFlow, node: int,
             tau_nodes: np.ndarray, sigma_tol: float) -> OrthoDistribution:
    stack = pulled[tau_nodes]                             # (m, n, k-1)
    cols = np.concatenate(stack, axis=1) if stack.shape[0] else stack.reshape(
        pulled.shape[1], 0)
    pushed = tf.matrices[node] @ cols
    u_svd, svals, _ = np.linalg.svd(pushed, full_matrices=False)
    if svals.size and svals[0] > 0.0:
        r = int(np.count_nonzero(svals > sigma_tol * svals[0]))
    else:
        r = 0
    return OrthoDistribution(float(tf.grid[node]), u_svd[:, :r].copy(), svals,
                             tf.grid[tau_nodes].copy())


def build_f_perp(frame: SRFrame, traj: Trajectory, tf: TangentFlow, t: float,
                 sample_stride: int = 1, tau_range: str = "0..t",
                 sigma_tol: float = SIGMA_TOL) -> OrthoDistribution:
    """Numerical flow-invariant orthogonal span at time t.

    Orthogonal directions are sampled at grid nodes tau (strided), pushed to
    time t through the tangent flow, stacked and rank-truncated at
    sigma_tol * sigma_max.  tau_range "0..t" samples tau in [0, t] (the range
    the variation decomposition consumes); "0..T" samples the whole horizon.
    """
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if tau_range not in ("0..t", "0..T"):
        raise ValueError("tau_range must be '0..t' or '0..T'")
    u = traj.control
    if np.any(u.cell_norms() == 0.0):
        raise ValueError("control must be nonvanishing")
    node = traj.node_index(t)
    pulled = _pulled_complements(frame, u, traj, tf)
    last = traj.grid.shape[0] - 1 if tau_range == "0..T" else node
    tau_nodes = np.arange(0, last + 1, sample_stride)
    return _span_at(pulled, tf, node, tau_nodes, sigma_tol)


@dataclass(frozen=True, eq=False)
class NSREReport:
    """Outcome of the geometric normal-extremal test on one trajectory."""

    angles: np.ndarray
    c: float
    regularity_ok: bool
    b2_ok: bool
    min_speed: float
    max_velocity_derivative: float
    acb_bound: float
    theta_min: float
    tau_range: str

    @property
    def status(self) -> str:
        if not self.regularity_ok:
            return "failed"
        if not self.b2_ok:
            return "inconclusive"
        return "certified"

    def to_json_dict(self) -> dict:
        return {
            "angles": self.angles.tolist(),
            "c": self.c,
            "regularity_ok": self.regularity_ok,
            "b2_ok": self.b2_ok,
            "min_speed": self.min_speed,
            "max_velocity_derivative": self.max_velocity_derivative,
            "acb_bound": self.acb_bound,
            "theta_min": self.theta_min,
            "tau_range": self.tau_range,
            "status": self.status,
        }


def nsre_check(frame: SRFrame, u: ControlSignal, traj: Trajectory,
               tf: TangentFlow | None = None, *,
               acb_bound: float = ACB_BOUND, theta_min: float = THETA_MIN,
               sigma_tol: float = SIGMA_TOL, tau_range: str = "0..t",
               sample_stride: int = 1, substeps: int = 1) -> NSREReport:
    """Run the two-condition normal-extremal test.

    Regularity is a bounded-discrete-derivative proxy for an ACB velocity:
    the difference quotient of cellwise velocities must stay under acb_bound.
    The angle condition asks the velocity to keep an angle above theta_min to
    the flow-pushed orthogonal span at every grid node; angles at or below
    theta_min cannot be distinguished from integrator noise, so the report is
    inconclusive rather than false there.  The constant c is
    min |sin theta| * min speed when both conditions hold, else 0.
    """
    if not u.is_normalized():
        raise NotNormalizedError("nsre_check requires a normalized control")
    if tf is None:
        tf = tangent_flow(frame, u, traj, 0.0, substeps=substeps)

    mats = frame.field_matrix_many(traj.states)           # (N+1, n, k)
    cell_velocities = np.einsum("jnk,jk->jn", mats[:-1], u.samples)
    node_velocities = np.einsum("jnk,jk->jn", mats, _node_controls(u))
    speeds = np.linalg.norm(node_velocities, axis=1)
    min_speed = float(speeds.min())

    if u.n_cells > 1:
        diffs = np.diff(cell_velocities, axis=0) / u.dt
        max_dv = float(np.linalg.norm(diffs, axis=1).max())
    else:
        max_dv = 0.0
    regularity_ok = max_dv <= acb_bound

    pulled = _pulled_complements(frame, u, traj, tf)
    n_nodes = traj.grid.shape[0]
    angles = np.empty(n_nodes)
    for m in range(n_nodes):
        last = n_nodes - 1 if tau_range == "0..T" else m
        tau_nodes = np.arange(0, last + 1, sample_stride)
        span = _span_at(pulled, tf, m, tau_nodes, sigma_tol)
        angles[m] = angle_to_subspace(node_velocities[m], span)

    b2_ok = bool(angles.min() > theta_min)
    c = float(np.abs(np.sin(angles)).min() * min_speed) \
        if (regularity_ok and b2_ok) else 0.0
    return NSREReport(angles, c, regularity_ok, b2_ok, min_speed, max_dv,
                      acb_bound, theta_min, tau_range)


@dataclass(frozen=True, eq=False)
class HamiltonianExtremal:
    """Normal extremal generated by the standard Hamiltonian construction."""

    trajectory: Trajectory
    control: ControlSignal
    costates: np.ndarray       # (N_t + 1, n)
    norm_drift: float          # worst |raw control norm - 1| before renormalizing


def hamiltonian_extremal(frame: SRFrame, q0, p0, horizon: float, n_cells: int,
                         substeps: int = 1, domain: Domain | None = None,
                         level_tol: float = 1e-9,
                         conservation_tol: float = 1e-6) -> HamiltonianExtremal:
    """Integrate the normal Hamiltonian system and sample its control.

    Solves dq/dt = sum u^i X_i(q), dp/dt = -sum u^i (dX_i/dq)^T p with
    u^i = <p, X_i(q)>, starting on the unit level sum_i <p0, X_i(q0)>^2 = 1.
    The control is sampled at cell midpoints; level conservation keeps raw
    cell norms within conservation_tol of 1 and the rows are then scaled to
    exactly unit norm, so downstream normalized-control checks hold.
    """
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.shape != (frame.n,) or p0.shape != (frame.n,):
        raise ValueError(f"q0 and p0 must have shape ({frame.n},)")
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")

    u0 = frame.field_matrix(q0).T @ p0
    level = float(np.dot(u0, u0))
    if abs(level - 1.0) > level_tol:
        raise ValueError(f"initial covector is off the unit level: 2H = {level!r}")

    def rhs(q, p):
        f = frame._field_matrix_fast(q)
        u = f.T @ p
        a = frame._control_jacobian_fast(q, u)
        return f @ u, -(a.T @ p)

    dt = horizon / n_cells
    nsub = 2 * max(1, substeps)
    h = dt / nsub
    states = np.empty((n_cells + 1, frame.n))
    costates = np.empty((n_cells + 1, frame.n))
    raw = np.empty((n_cells, frame.k))
    states[0], costates[0] = q0, p0

    q, p = q0.copy(), p0.copy()
    for j in range(n_cells):
        for step in range(nsub):
            if step == nsub // 2:
                raw[j] = frame._field_matrix_fast(q).T @ p
            k1q, k1p = rhs(q, p)
            k2q, k2p = rhs(q + 0.5 * h * k1q, p + 0.5 * h * k1p)
            k3q, k3p = rhs(q + 0.5 * h * k2q, p + 0.5 * h * k2p)
            k4q, k4p = rhs(q + h * k3q, p + h * k3p)
            q = q + (h / 6.0) * (k1q + 2.0 * (k2q + k3q) + k4q)
            p = p + (h / 6.0) * (k1p + 2.0 * (k2p + k3p) + k4p)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise IntegrationError(f"extremal blew up at t={(j + 1) * dt:.6g}")
        states[j + 1], costates[j + 1] = q, p

    norms = np.linalg.norm(raw, axis=1)
    drift = float(np.abs(norms - 1.0).max())
    if drift > conservation_tol:
        raise IntegrationError(
            f"Hamiltonian level drifted by {drift:.3e} (> {conservation_tol:.1e}); "
            "refine the grid or substeps")
    control = ControlSignal(horizon, raw / norms[:, None])

    left = False
    first_exit = None
    if domain is not None:
        inside = np.array([domain.contains(s) for s in states])
        if not inside.all():
            j_exit = int(np.argmin(inside))
            raise DomainExitError(
                f"extremal left the domain at t={control.grid[j_exit]:.6g}")

    traj = Trajectory(control.grid, states, control, q0,
                      left_domain=left, first_exit_time=first_exit)
    return HamiltonianExtremal(traj, control, costates, drift)
