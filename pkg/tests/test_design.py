import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from sardkit.design import (
    back_solve,
    build_corrections,
    build_regressors,
    correction_map,
    make_design,
    rho_phi_from_aggregates,
    to_tilde,
)
from sardkit.errors import DegenerateAggregate, DimensionMismatch, ZeroPhiTilde
from sardkit.geometry import build_stars, grid_domain
from sardkit.gfdm import build_operators
from sardkit.kernels import KernelSpec, build_interaction
from sardkit.simulate import THREE_PEAKS


def setup(n, h_A=0.15, h_R=0.4):
    d = grid_domain(n)
    ops = build_operators(d, build_stars(d))
    return d, ops, build_interaction(d, KernelSpec(h_A)), build_interaction(d, KernelSpec(h_R))


@pytest.fixture(scope="module")
def small():
    return setup(10, 0.25, 0.4)


@pytest.fixture(scope="module")
def n144():
    return setup(12)


def test_diffusion_regressor_is_laplacian(n144):
    d, ops, WA, WR = n144
    y = THREE_PEAKS(d)
    x_D = build_regressors(y, None, ops, WA, WR)[3]
    assert_allclose(x_D, (ops.M_z1z1 + ops.M_z2z2) @ y, rtol=0, atol=0)
    assert_allclose(x_D, ops.M_z1z1 @ y + ops.M_z2z2 @ y, rtol=1e-12, atol=1e-9)


def test_constant_field_zero_regressors(n144):
    d, ops, WA, WR = n144
    for x in build_regressors(np.full(d.n, 3.0), np.zeros(d.n), ops, WA, WR):
        assert_allclose(x, 0.0, atol=1e-10)


def test_affine_s_gives_zero_topography_regressor():
    d = grid_domain(8, torus=False)
    ops = build_operators(d, build_stars(d))
    W = build_interaction(d, KernelSpec(0.3))
    s = 2 * d.locations[:, 0] - d.locations[:, 1]
    x_S = build_regressors(np.full(d.n, 4.0), s, ops, W, W)[0]
    assert_allclose(x_S, 0.0, atol=1e-9)


def test_kernel_swap_swaps_regressors(n144):
    d, ops, WA, WR = n144
    y = THREE_PEAKS(d)
    _, xa, xr, _ = build_regressors(y, None, ops, WA, WR)
    _, xa2, xr2, _ = build_regressors(y, None, ops, WR, WA)
    assert_allclose(xa2, xr, rtol=0, atol=0)
    assert_allclose(xr2, xa, rtol=0, atol=0)


def test_peak_sign_pattern(n144):
    # at the two narrow peaks aggregation adds income and repulsion removes it
    d, ops, WA, WR = n144
    _, xa, xr, _ = build_regressors(THREE_PEAKS(d), None, ops, WA, WR)
    for peak in [(0.7, 0.4), (0.7, 0.6)]:
        i = np.argmin(((d.locations - peak) ** 2).sum(axis=1))
        assert -0.00175 * xa[i] > 0
        assert 0.0025 * xr[i] < 0


@pytest.mark.parametrize("n", [12, 20, 30, 40, 50])
def test_regressors_zero_sum_on_torus(n):
    d, ops, WA, WR = setup(n)
    s = np.sin(2 * np.pi * d.locations[:, 0]) + np.cos(2 * np.pi * d.locations[:, 1])
    for x in build_regressors(THREE_PEAKS(d), s, ops, WA, WR):
        assert abs(x @ d.areas) <= 1e-12 * (np.abs(x) @ d.areas)


def test_dimension_mismatch(n144):
    d, ops, WA, WR = n144
    with pytest.raises(DimensionMismatch):
        build_regressors(np.ones(d.n + 1), None, ops, WA, WR)


def column_by_column(kind, y, s, ops, W):
    n = ops.n
    return np.column_stack([correction_map(kind, e, y, s, ops, W) for e in np.eye(n)])


def test_corrections_match_basis_images(small):
    d, ops, WA, WR = small
    rng = np.random.default_rng(0)
    y = 1 + rng.uniform(size=d.n)
    s = rng.uniform(size=d.n)
    M = build_corrections(y, s, ops, WA, WR)
    for kind, W in (("S", None), ("A", WA), ("R", WR), ("D", None)):
        dense = M[kind].toarray() if hasattr(M[kind], "toarray") else M[kind]
        assert_allclose(dense, column_by_column(kind, y, s, ops, W), rtol=1e-12, atol=1e-9)


def test_correction_linearity(small):
    d, ops, WA, WR = small
    rng = np.random.default_rng(1)
    y = 1 + rng.uniform(size=d.n)
    M = build_corrections(y, None, ops, WA, WR)
    u, v = rng.normal(size=(2, d.n))
    assert_allclose(M["A"] @ (u + v), M["A"] @ u + M["A"] @ v, rtol=1e-12, atol=1e-9)
    assert_allclose(M["A"] @ u, correction_map("A", u, y, None, ops, WA), rtol=1e-10, atol=1e-9)


def test_correction_special_cases(small):
    d, ops, WA, WR = small
    M = build_corrections(np.zeros(d.n), None, ops, WA, WR)
    v = np.random.default_rng(2).normal(size=d.n)
    assert_allclose(M["A"] @ v, 0.0, atol=0)
    assert M["S"] is None
    assert_allclose(M["D"] @ np.ones(d.n), 0.0, atol=1e-10)


def test_diffusion_only_system_matrix(n144):
    d, ops, WA, WR = n144
    y = THREE_PEAKS(d)
    des = make_design(y, 1.1 * y, 1.0, ops, WA, WR, d.areas)
    r = 0.3
    full = des.system_matrix([0.0, 0.0, r])
    simple = np.eye(d.n) - r * ops.laplacian.toarray()
    assert_allclose(full.toarray() if hasattr(full, "toarray") else full, simple, atol=1e-12)


def test_make_design_fields(n144, tmp_path):
    d, ops, WA, WR = n144
    y0 = THREE_PEAKS(d)
    y1 = y0 * 1.02 + 0.01
    des = make_design(y0, y1, 0.5, ops, WA, WR, d.areas)
    assert des.components == ("A", "R", "D")
    assert_allclose(des.dy, (y1 - y0) / 0.5)
    assert des.exog().shape == (144, 5)
    assert des.exog_names() == ["alpha", "phi", "gamma_A", "gamma_R", "gamma_D"]
    assert_allclose(des.correction_columns()[:, 2], ops.laplacian @ des.dy)
    Y0, Yt = des.aggregates()
    assert_allclose([Y0, Yt], [y0.mean(), y1.mean()])
    des.to_csv(tmp_path / "design.csv")
    data = np.loadtxt(tmp_path / "design.csv", delimiter=",", skiprows=1)
    assert_allclose(data[:, 1], y0)
    with pytest.raises(ValueError):
        make_design(y0, y1, 0.0, ops, WA, WR, d.areas)
    with pytest.raises(ValueError):
        make_design(y0, y1, 1.0, ops, WA, WR, d.areas, components=("S", "D"))


def test_back_solve_empirical_anchor():
    # aggregates chosen so the scale factor comes out at 0.8282
    phi_t = 0.02
    Yt = math.exp(phi_t * 0.8282)
    sp = back_solve({"alpha": 0.0, "phi": phi_t, "gamma_S": 1.08e-05}, 1.0, Yt, 1.0)
    assert_allclose(sp.scale, 0.8282, rtol=1e-12)
    assert float(f"{sp.gamma['S']:.3g}") == 8.94e-06
    assert float(f"{1.08e-05 * 0.8282:.3g}") == 8.94e-06


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.001, 0.05),
    st.floats(0.002, 0.2),
    st.floats(0.5, 1.3),
    st.floats(0.1, 2.0),
    st.floats(0.5, 5.0),
)
def test_back_solve_round_trip(alpha, phi, scale, tau, Y0):
    Yt = (Y0 + alpha / phi) * math.exp(phi * tau) - alpha / phi
    tilde = {"alpha": alpha / scale, "phi": phi / scale, "gamma_A": -0.002 / scale, "rho_A": 0.3}
    sp = back_solve(tilde, Y0, Yt, tau)
    assert_allclose([sp.alpha, sp.phi, sp.scale, sp.gamma["A"]], [alpha, phi, scale, -0.002], rtol=1e-8)
    assert_allclose(sp.scale, 1 - tau * sp.rho_phi / 2, rtol=1e-12)
    assert_allclose(sp.rho["A"], 2 * 0.3 * scale / tau, rtol=1e-8)
    back = to_tilde(sp)
    assert_allclose([back["alpha"], back["phi"]], [tilde["alpha"], tilde["phi"]], rtol=1e-10)


def test_back_solve_errors():
    with pytest.raises(ZeroPhiTilde):
        rho_phi_from_aggregates(0.01, 0.0, 1.0, 1.1, 1.0)
    with pytest.raises(DegenerateAggregate):
        rho_phi_from_aggregates(0.0, 0.01, 1.0, -1.0, 1.0)
