import numpy as np
import pytest

from isophase.spectral import (DegenerateSpectrumError, Field, Grid, SpectralError, gap_constant,
                               make_operator, semigroup_apply, trace_constant, trace_tail_bound)


def test_grid_validation():
    with pytest.raises(SpectralError):
        Grid(12, 1.0)
    with pytest.raises(SpectralError):
        Grid(16, -1.0)
    with pytest.raises(SpectralError):
        Grid(16, 1.0, "neumann")


def test_reject_unresolvable_modes():
    with pytest.raises(SpectralError):
        make_operator(Grid(16, 1.0), 0.0, 9)
    with pytest.raises(SpectralError):
        make_operator(Grid(16, 1.0, "dirichlet"), 0.0, 17)


def test_dirichlet_eigenvalue_pi():
    op = make_operator(Grid(64, np.pi, "dirichlet"), 0.0, 16)
    assert op.eigenvalues[1] == pytest.approx(4.0, abs=1e-12)


def test_dirichlet_eigenvalue_against_finite_differences():
    op = make_operator(Grid(64, 1.0, "dirichlet"), 0.5, 8)
    n = 512
    dx = 1.0 / (n + 1)
    lap = (np.diag(-2 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / dx**2
    lam_fd = np.sort(np.linalg.eigvalsh(-lap + 0.5 * np.eye(n)))[0]
    assert op.eigenvalues[0] == pytest.approx(np.pi**2 + 0.5, abs=1e-12)
    assert abs(op.eigenvalues[0] - lam_fd) < 1e-3


def test_periodic_eigenvalues_paired():
    ell = 8.0
    op = make_operator(Grid(32, ell), 0.25, 8)
    k = np.array([0, 1, 1, 2, 2])
    np.testing.assert_allclose(op.eigenvalues[:5], (2 * np.pi * k / ell) ** 2 + 0.25, rtol=1e-13)
    assert op.omega == pytest.approx(0.25)


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
def test_round_trip(boundary, rng):
    op = make_operator(Grid(64, 3.0, boundary), 0.1, 20, 2)
    b = op.basis
    c = rng.standard_normal(b.dim)
    x = Field.from_coeffs(b, c)
    y = Field.from_values(b, x.values)
    np.testing.assert_allclose(y.coeffs, c, rtol=0, atol=1e-12 * np.abs(c).max())


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
def test_coefficients_are_orthonormal(boundary, rng):
    op = make_operator(Grid(64, 3.0, boundary), 0.1, 20)
    b = op.basis
    c1, c2 = rng.standard_normal((2, b.dim))
    assert b.inner(b.from_coeffs(c1), b.from_coeffs(c2)) == pytest.approx(c1 @ c2, rel=1e-12)
    # H inner product equals the quadrature of the collocation values
    v1 = b.to_values(b.from_coeffs(c1))
    v2 = b.to_values(b.from_coeffs(c2))
    dx = b.grid.length / (b.grid.n_points if boundary == "periodic" else b.grid.n_points + 1)
    assert np.sum(v1 * v2) * dx == pytest.approx(c1 @ c2, rel=1e-10)


def test_norms_vanish_only_at_zero(rng):
    b = make_operator(Grid(32, 2.0), 0.0 + 1.0, 10).basis
    z = Field.from_coeffs(b, np.zeros(b.dim))
    x = Field.from_coeffs(b, rng.standard_normal(b.dim))
    assert z.h_norm() == 0 and z.e_norm() == 0
    assert x.h_norm() > 0 and x.e_norm() > 0


def test_semigroup_identity_and_modes(rng):
    op = make_operator(Grid(64, 5.0, "dirichlet"), 0.3, 16)
    b = op.basis
    x = Field.from_coeffs(b, rng.standard_normal(b.dim))
    np.testing.assert_array_equal(semigroup_apply(op, 0.0, x).coeffs, x.coeffs)
    lam = op.coord_eigenvalues()
    for k in (0, 5):
        e = np.zeros(b.dim)
        e[k] = 1
        y = semigroup_apply(op, 0.7, Field.from_coeffs(b, e)).coeffs
        np.testing.assert_allclose(y, np.exp(-lam[k] * 0.7) * e, atol=1e-15)
    with pytest.raises(SpectralError):
        semigroup_apply(op, -1.0, x)


def test_semigroup_property_and_decay(rng):
    op = make_operator(Grid(64, 10.0), 0.2, 32, 2, [1.0, 3.0])
    b = op.basis
    for _ in range(100):
        x = Field.from_coeffs(b, rng.standard_normal(b.dim))
        for t in (0.01, 0.1, 1.0):
            assert semigroup_apply(op, t, x).h_norm() <= np.exp(-op.omega * t) * x.h_norm() * (1 + 1e-12)
    a = semigroup_apply(op, 0.5, semigroup_apply(op, 0.25, x))
    c = semigroup_apply(op, 0.75, x)
    np.testing.assert_allclose(a.coeffs, c.coeffs, atol=1e-12 * np.abs(x.coeffs).max())


def test_trace_constant_scalar_oracle():
    op = make_operator(Grid(256, np.pi, "dirichlet"), 0.0, 128)
    k = np.arange(1, 129)
    oracle = np.sum(np.exp(-0.5 * k**2) * np.sqrt(2 / np.pi))
    assert trace_constant(op, 0.5, 1.0) == pytest.approx(oracle, rel=1e-10)
    op64 = make_operator(Grid(256, np.pi, "dirichlet"), 0.0, 64)
    assert abs(trace_constant(op64, 0.5, 1.0) - trace_constant(op, 0.5, 1.0)) < 1e-12
    assert trace_tail_bound(op64, 0.5) < 1e-12


def test_trace_constant_single_mode_and_monotone():
    op = make_operator(Grid(16, np.pi, "dirichlet"), 0.0, 1)
    assert trace_constant(op, 0.9, 0.9 + 1e-9) == pytest.approx(np.exp(-0.9) * np.sqrt(2 / np.pi), rel=1e-8)
    op = make_operator(Grid(64, np.pi, "dirichlet"), 0.0, 32)
    vals = [trace_constant(op, s, 2.0) for s in (0.1, 0.3, 0.5, 1.0)]
    assert np.all(np.diff(vals) <= 0)
    with pytest.raises(SpectralError):
        trace_constant(op, 0.0, 1.0)
    with pytest.raises(SpectralError):
        trace_constant(op, 1.0, 0.5)


def test_gap_constant():
    k = np.arange(1, 65, dtype=float)
    assert gap_constant(eigenvalues=k**2) == pytest.approx(np.log(4) / 3, rel=1e-14)
    g = np.log(k[1:] ** 2 / k[:-1] ** 2) / (k[1:] ** 2 - k[:-1] ** 2)
    assert np.all(np.diff(g) < 0)
    op = make_operator(Grid(64, np.pi, "dirichlet"), 0.0, 32)
    assert gap_constant(op) == pytest.approx(np.log(4) / 3, rel=1e-12)
    with pytest.raises(DegenerateSpectrumError):
        gap_constant(eigenvalues=[1.0, 1.0, 2.0])
