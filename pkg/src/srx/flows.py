"""Fixed-step RK4 integration of controlled trajectories and tangent flows.

One RK4 step per control cell (optionally substepped): within a cell the
control is constant, so the vector field is autonomous and smooth there and
the classical order-4 error bound applies cell by cell.  Adaptive steppers
are deliberately avoided to keep every run bit-deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ControlSignal, Domain, SRFrame, SRXError, Trajectory, node_index


class IntegrationError(SRXError):
    """State blew up (non-finite) during integration."""


class DomainExitError(SRXError):
    """A required domain-containment condition failed."""


class SingularFlowError(SRXError):
    """A tangent-flow matrix is numerically singular."""


COND_LIMIT = 1e12


def _check_finite(q: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(q)):
        raise IntegrationError(f"state became non-finite at t={t:.6g}")


def integrate_trajectory(frame: SRFrame, u: ControlSignal, q0,
                         domain: Domain | None = None,
                         substeps: int = 1) -> Trajectory:
    """Integrate dq/dt = sum_i u^i(t) X_i(q) from q0 over the control grid.

    Domain exits do not stop the run: the trajectory is marked `left_domain`
    with the first exit time, and downstream certification treats it as
    invalid.  A non-finite state raises IntegrationError.
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (frame.n,) or not np.all(np.isfinite(q0)):
        raise ValueError(f"q0 must be a finite vector of length {frame.n}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if domain is not None and not domain.contains(q0):
        raise DomainExitError("initial point lies outside the domain interior")

    n_cells = u.n_cells
    h = u.dt / substeps
    states = np.empty((n_cells + 1, frame.n))
    states[0] = q0
    grid = u.grid
    left = False
    first_exit = None

    q = q0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_cells):
            u_cell = u.samples[j]

            def f(p):
                return frame._field_matrix_fast(p) @ u_cell

            for _ in range(substeps):
                k1 = f(q)
                k2 = f(q + 0.5 * h * k1)
                k3 = f(q + 0.5 * h * k2)
                k4 = f(q + h * k3)
                q = q + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            _check_finite(q, grid[j + 1])
            states[j + 1] = q
            if domain is not None and not left and not domain.contains(q):
                left = True
                first_exit = float(grid[j + 1])

    return Trajectory(grid, states, u, q0, left_domain=left,
                      first_exit_time=first_exit)


@dataclass(eq=False)
class TangentFlow:
    """Tangent maps of the time-dependent flow along a base trajectory.

    matrices[j] is the tangent map from the anchor time `base_tau` to grid
    node j.  Two-point maps are obtained by composition, which is exact for
    the discrete flow because each RK4 step of the linear variational
    equation is itself a linear map.
    """

    grid: np.ndarray          # (N_t + 1,)
    matrices: np.ndarray      # (N_t + 1, n, n)
    base_tau: float
    max_condition: float
    ill_conditioned: bool
    _inverses: np.ndarray | None = field(default=None, repr=False)

    def node_index(self, t: float) -> int:
        return node_index(self.grid, t)

    def inverses(self) -> np.ndarray:
        if self._inverses is None:
            self._inverses = np.linalg.inv(self.matrices)
        return self._inverses

    def matrix(self, tau: float, t: float) -> np.ndarray:
        """Two-point tangent map from time tau to time t."""
        jt = self.node_index(t)
        jtau = self.node_index(tau)
        if jt == jtau:
            return np.eye(self.matrices.shape[1])
        return self.matrices[jt] @ self.inverses()[jtau]


def tangent_flow(frame: SRFrame, u: ControlSignal, base: Trajectory,
                 base_tau: float = 0.0, substeps: int = 1,
                 cond_limit: float = COND_LIMIT) -> TangentFlow:
    """Integrate the matrix variational equation dM/dt = Df_u(gamma(t)) M.

    Uses the same RK4 scheme, step and stage states as the base trajectory,
    anchored first at t=0 and then re-based to `base_tau` by composition.
    Condition numbers above cond_limit only set `ill_conditioned`; they do
    not abort, since the flag is advisory for downstream rank decisions.
    """
    if u.n_cells != base.control.n_cells:
        raise ValueError("control and base trajectory grids differ")
    n = frame.n
    n_cells = u.n_cells
    h = u.dt / substeps
    mats = np.empty((n_cells + 1, n, n))
    mats[0] = np.eye(n)

    m = np.eye(n)
    for j in range(n_cells):
        u_cell = u.samples[j]
        q = base.states[j].copy()

        def f(p):
            return frame._field_matrix_fast(p) @ u_cell

        def a(p):
            return frame._control_jacobian_fast(p, u_cell)

        for _ in range(substeps):
            k1q = f(q)
            k1m = a(q) @ m
            q2 = q + 0.5 * h * k1q
            k2q = f(q2)
            k2m = a(q2) @ (m + 0.5 * h * k1m)
            q3 = q + 0.5 * h * k2q
            k3q = f(q3)
            k3m = a(q3) @ (m + 0.5 * h * k2m)
            q4 = q + h * k3q
            k4q = f(q4)
            k4m = a(q4) @ (m + h * k3m)
            q = q + (h / 6.0) * (k1q + 2.0 * (k2q + k3q) + k4q)
            m = m + (h / 6.0) * (k1m + 2.0 * (k2m + k3m) + k4m)
        if not np.all(np.isfinite(m)):
            raise IntegrationError(f"tangent map non-finite at t={base.grid[j + 1]:.6g}")
        mats[j + 1] = m

    conds = np.linalg.cond(mats)
    max_cond = float(np.max(conds))
    flow = TangentFlow(base.grid, mats, 0.0, max_cond, max_cond > cond_limit)

    j0 = node_index(base.grid, base_tau)
    if j0 != 0:
        inv0 = np.linalg.inv(mats[j0])
        rebased = mats @ inv0
        rebased[j0] = np.eye(n)
        flow = TangentFlow(base.grid, rebased, float(base.grid[j0]),
                           max_cond, max_cond > cond_limit)
    return flow


def push_forward(tf: TangentFlow, tau: float, t: float, v) -> np.ndarray:
    """Apply the two-point tangent map from time tau to time t to a vector."""
    v = np.asarray(v, dtype=float)
    jt = tf.node_index(t)
    jtau = tf.node_index(tau)
    if jt == jtau:
        return v.copy()
    m_tau = tf.matrices[jtau]
    if 1.0 / np.linalg.cond(m_tau) < 1e-15:
        raise SingularFlowError(f"tangent map at tau={tau:.6g} is singular")
    return tf.matrices[jt] @ np.linalg.solve(m_tau, v)


def write_trajectory_rows(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    """Header and row data for the trajectory CSV layout t,q1,...,qn."""
    header = ["t"] + [f"q{a + 1}" for a in range(traj.n)]
    data = np.column_stack([traj.grid, traj.states])
    return header, data


def write_tangent_flow_rows(tf: TangentFlow) -> tuple[list[str], np.ndarray]:
    """Header and row data for the tangent-flow CSV layout t,m11,...,mnn (row-major)."""
    n = tf.matrices.shape[1]
    header = ["t"] + [f"m{a + 1}{b + 1}" for a in range(n) for b in range(n)]
    data = np.column_stack([tf.grid, tf.matrices.reshape(tf.matrices.shape[0], n * n)])
    return header, data
