import numpy as np
import pytest

from srx import ControlSignal, Domain, PolyVectorField, SRFrame


def make_euclidean_frame(n=2):
    fields = []
    for i in range(n):
        tables = [dict() for _ in range(n)]
        tables[i][(0,) * n] = 1.0
        fields.append(PolyVectorField(tuple(tables), n))
    return SRFrame(tuple(fields), n, n)


def make_heisenberg_frame():
    # X_1 = d/dx - (y/2) d/dz,  X_2 = d/dy + (x/2) d/dz
    x1 = PolyVectorField((
        {(0, 0, 0): 1.0},
        {},
        {(0, 1, 0): -0.5},
    ), 3)
    x2 = PolyVectorField((
        {},
        {(0, 0, 0): 1.0},
        {(1, 0, 0): 0.5},
    ), 3)
    return SRFrame((x1, x2), 3, 2)


def make_quartic_frame():
    # single field (1, x^4): genuinely non-exact for RK4, closed-form flow
    f = PolyVectorField(({(0, 0): 1.0}, {(4, 0): 1.0}), 2)
    return SRFrame((f,), 2, 1)


def constant_control(value, horizon=1.0, n_cells=1000):
    value = np.asarray(value, dtype=float)
    return ControlSignal(horizon, np.tile(value, (n_cells, 1)))


def sampled_control(func, horizon=1.0, n_cells=1000):
    """Piecewise-constant control sampling func at cell midpoints."""
    mids = (np.arange(n_cells) + 0.5) * (horizon / n_cells)
    return ControlSignal(horizon, np.array([func(t) for t in mids]))


def smooth_perturbation(rng, horizon=1.0, n_cells=1000, k=2, amplitude=1.0,
                        n_modes=3):
    """Random band-limited perturbation sampled at cell midpoints."""
    coef_cos = rng.normal(size=(n_modes, k))
    coef_sin = rng.normal(size=(n_modes, k))
    freqs = 2.0 * np.pi * np.arange(1, n_modes + 1) / horizon
    mids = (np.arange(n_cells) + 0.5) * (horizon / n_cells)
    vals = np.zeros((n_cells, k))
    for m, w in enumerate(freqs):
        vals += np.outer(np.cos(w * mids), coef_cos[m])
        vals += np.outer(np.sin(w * mids), coef_sin[m])
    peak = np.abs(vals).max()
    if peak > 0:
        vals *= amplitude / peak
    return ControlSignal(horizon, vals)


@pytest.fixture(scope="session")
def euclidean2():
    return make_euclidean_frame(2)


@pytest.fixture(scope="session")
def heisenberg():
    return make_heisenberg_frame()


@pytest.fixture(scope="session")
def box2():
    return Domain(np.array([-1.0, -2.0]), np.array([2.0, 2.0]))


@pytest.fixture(scope="session")
def box3():
    return Domain(np.array([-2.0, -2.0, -2.0]), np.array([2.0, 2.0, 2.0]))
