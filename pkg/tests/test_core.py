import math

import numpy as np
import pytest

from srx import (ControlSignal, Domain, GridMismatchError, PolyVectorField,
                 SRFrame, control_inner)
from srx.core import node_index

from conftest import constant_control, smooth_perturbation


# -- polynomial fields ------------------------------------------------------

def test_euclidean_field_values(euclidean2):
    assert np.array_equal(euclidean2.value(0, [3.7, -1.2]), [1.0, 0.0])
    assert np.array_equal(euclidean2.value(1, [3.7, -1.2]), [0.0, 1.0])


def test_heisenberg_field_values(heisenberg):
    # X_2 at (2,0,0): x/2 = 1 in the z slot
    assert np.array_equal(heisenberg.value(1, [2.0, 0.0, 0.0]), [0.0, 1.0, 1.0])
    assert np.array_equal(heisenberg.value(0, [0.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_euclidean_jacobian_zero(euclidean2):
    assert np.array_equal(euclidean2.jacobian(0, [0.3, 0.4]), np.zeros((2, 2)))


def test_heisenberg_jacobians(heisenberg):
    j1 = heisenberg.jacobian(0, [1.0, 2.0, 3.0])
    expected = np.zeros((3, 3))
    expected[2, 1] = -0.5
    assert np.array_equal(j1, expected)
    j2 = heisenberg.jacobian(1, [-4.0, 1.0, 0.0])
    expected = np.zeros((3, 3))
    expected[2, 0] = 0.5
    assert np.array_equal(j2, expected)


def test_field_index_out_of_range(heisenberg):
    with pytest.raises(IndexError):
        heisenberg.value(2, [0.0, 0.0, 0.0])


def test_nonfinite_point_rejected(heisenberg):
    with pytest.raises(ValueError):
        heisenberg.value(0, [np.inf, 0.0, 0.0])


def test_bad_exponent_tuple_rejected():
    with pytest.raises(ValueError):
        PolyVectorField(({(0, -1): 1.0}, {}), 2)


def _random_poly_frame(rng, n=3, k=2, degree=3):
    fields = []
    for _ in range(k):
        tables = []
        for _ in range(n):
            table = {}
            for _ in range(4):
                exp = tuple(int(e) for e in rng.integers(0, degree + 1, size=n))
                table[exp] = float(rng.normal())
            tables.append(table)
        fields.append(PolyVectorField(tuple(tables), n))
    return SRFrame(tuple(fields), n, k)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(7)
    frame = _random_poly_frame(rng)
    h = 1e-5
    for _ in range(5):
        q = rng.uniform(-1.0, 1.0, size=3)
        for i in range(frame.k):
            jac = frame.jacobian(i, q)
            hess = frame.hessian(i, q)
            for b in range(3):
                e = np.zeros(3)
                e[b] = h
                fd_col = (frame.value(i, q + e) - frame.value(i, q - e)) / (2 * h)
                assert np.allclose(jac[:, b], fd_col, rtol=1e-6, atol=1e-8)
                fd_jcol = (frame.jacobian(i, q + e) - frame.jacobian(i, q - e)) / (2 * h)
                assert np.allclose(hess[:, :, b], fd_jcol, rtol=1e-6, atol=1e-8)


def test_frame_independence_check(heisenberg, box3):
    smin = heisenberg.check_independence(box3, resolution=4)
    assert smin > 0.9  # orthogonal-ish columns everywhere


def test_frame_json_roundtrip(heisenberg):
    data = heisenberg.to_json_dict()
    again = SRFrame.from_json_dict(data)
    q = np.array([0.3, -0.7, 1.1])
    for i in range(2):
        assert np.array_equal(again.value(i, q), heisenberg.value(i, q))


# -- domain -----------------------------------------------------------------

def test_domain_distances():
    box = Domain([-1.0, -1.0], [1.0, 1.0])
    assert box.boundary_distance([0.0, 0.0]) == 1.0
    assert box.boundary_distance([0.5, 0.0]) == 0.5
    assert box.boundary_distance([2.0, 0.0]) == -1.0
    assert box.contains([0.9, -0.9])
    assert not box.contains([1.0, 0.0])


def test_domain_grid_includes_corners():
    box = Domain([0.0, 0.0], [1.0, 2.0])
    pts = box.grid(3)
    assert pts.shape == (9, 2)
    assert [0.0, 0.0] in pts.tolist()
    assert [1.0, 2.0] in pts.tolist()


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain([0.0, 0.0], [1.0, 0.0])


# -- controls ---------------------------------------------------------------

def test_energy_normalized_control():
    u = constant_control([1.0, 0.0], horizon=1.0, n_cells=250)
    assert u.energy() == pytest.approx(0.5, abs=1e-15)
    assert u.is_normalized()


def test_energy_constant_control():
    u = constant_control([3.0, 4.0], horizon=2.0, n_cells=16)
    assert u.energy() == pytest.approx(25.0, abs=1e-12)


def test_energy_zero_control():
    u = constant_control([0.0, 0.0], horizon=1.0, n_cells=4)
    assert u.energy() == 0.0
    assert not u.is_normalized()


def test_control_inner_examples():
    u = constant_control([1.0, 0.0], n_cells=100)
    du = constant_control([-2.0, 0.0], n_cells=100)
    phi = control_inner(u, du)
    assert np.allclose(phi.values, -2.0)
    assert phi.total == pytest.approx(-2.0, abs=1e-13)

    du_perp = constant_control([0.0, 5.0], n_cells=100)
    assert np.all(control_inner(u, du_perp).values == 0.0)

    du_mix = constant_control([1.0, 1.0], n_cells=100)
    phi = control_inner(u, du_mix)
    assert np.allclose(phi.values, 1.0)
    assert phi.total == pytest.approx(1.0, abs=1e-13)


def test_control_inner_grid_mismatch():
    u = constant_control([1.0, 0.0], n_cells=10)
    du = constant_control([1.0, 0.0], n_cells=20)
    with pytest.raises(GridMismatchError):
        control_inner(u, du)


def test_l2_expansion_identity():
    # |u+du|^2 = |u|^2 + |du|^2 + 2 int(phi), exactly at cell-sum level
    rng = np.random.default_rng(11)
    for _ in range(20):
        n_cells = int(rng.integers(1, 50))
        k = int(rng.integers(1, 4))
        u = ControlSignal(1.5, rng.normal(size=(n_cells, k)))
        du = ControlSignal(1.5, rng.normal(size=(n_cells, k)))
        lhs = u.perturbed(du).l2_norm_sq()
        rhs = u.l2_norm_sq() + du.l2_norm_sq() + 2.0 * control_inner(u, du).total
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_cell_norm_inequality():
    rng = np.random.default_rng(13)
    for _ in range(200):
        k = int(rng.integers(1, 6))
        cell = rng.normal(size=k)
        assert np.abs(cell).sum() <= math.sqrt(k) * np.linalg.norm(cell) + 1e-12


def test_control_validation():
    with pytest.raises(ValueError):
        ControlSignal(0.0, np.ones((4, 2)))
    with pytest.raises(ValueError):
        ControlSignal(1.0, np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        ControlSignal(1.0, np.ones(4))


def test_control_window_and_json():
    u = smooth_perturbation(np.random.default_rng(3), n_cells=40)
    w = u.window(10, 30)
    assert w.n_cells == 20
    assert w.horizon == pytest.approx(0.5)
    assert np.array_equal(w.samples, u.samples[10:30])
    again = ControlSignal.from_json_dict(u.to_json_dict())
    assert np.array_equal(again.samples, u.samples)
    assert again.horizon == u.horizon


def test_node_index_lookup():
    u = constant_control([1.0, 0.0], horizon=1.0, n_cells=1000)
    grid = u.grid
    assert node_index(grid, 0.0) == 0
    assert node_index(grid, 0.25) == 250
    assert node_index(grid, 1.0) == 1000
    with pytest.raises(GridMismatchError):
        node_index(grid, 0.2501)
