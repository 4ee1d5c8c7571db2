import json

import numpy as np
import pytest

from isophase.spectral import Field, Grid
from isophase.stochastic import (NoiseError, NoiseModel, _ou_coefficients, coarsen_increments,
                                 draw_increments, exit_statistics, make_noise, regularity_probe,
                                 simulate_ensemble, spde_simulate, write_path_csv)

from test_flow import Linear


def test_ou_coefficients_exact_moments():
    lam = np.array([0.0, 1e-9, 0.3, 5.0, 400.0])
    h = 0.01
    a, s = _ou_coefficients(lam, h)
    # xi = a dW + s Z has Var = int e^{-2 lam u} du and Cov(xi, dW) = int e^{-lam u} du
    var = np.where(lam > 0, -np.expm1(-2 * lam * h) / (2 * np.where(lam > 0, lam, 1)), h)
    cov = np.where(lam > 0, -np.expm1(-lam * h) / np.where(lam > 0, lam, 1), h)
    np.testing.assert_allclose(a**2 * h + s**2, var, rtol=1e-7)
    np.testing.assert_allclose(a * h, cov, rtol=1e-7)


def test_refined_draw_equals_coarsened_fine_draw():
    nz = NoiseModel(1.0, [1.0, 0.5, 0.25], [0, 1, 2], True)
    lam = np.array([0.1, 3.0, 50.0])
    h, r = 0.02, 4
    dW, xi = draw_increments(nz, lam, h, 10, seed=7, path=3, refine=r)
    fW, fxi = draw_increments(nz, lam, h / r, 10 * r, seed=7, path=3)
    cW, cxi = coarsen_increments(fW, fxi, lam, h / r, r)
    np.testing.assert_allclose(dW, cW, atol=1e-15)
    np.testing.assert_allclose(xi, cxi, atol=1e-15)


def test_paths_are_independent_of_ensemble_layout(nagumo):
    model, family = nagumo
    nz = make_noise(model, 0.01, n_noise_modes=4)
    x0 = family.profile
    batch = simulate_ensemble(model, family, nz, x0, 0.2, 0.02, seed=5, n_paths=3)
    single = spde_simulate(model, family, nz, x0, 0.2, 0.02, seed=5, path=2)
    np.testing.assert_array_equal(batch[2].states, single.states)
    assert not np.array_equal(batch[0].states, batch[1].states)
    again = simulate_ensemble(model, family, nz, x0, 0.2, 0.02, seed=5, n_paths=3)
    np.testing.assert_array_equal(batch[1].states, again[1].states)


def test_ou_stationary_variance():
    m = Linear(Grid(16, np.pi, "dirichlet"), 4, b=0.0, a_u=1.0)
    nz = make_noise(m, 1.0, law="list", values=[1.0, 1.0, 1.0, 1.0])
    x0 = Field.from_coeffs(m.basis, np.zeros(m.basis.dim))
    paths = simulate_ensemble(m, None, nz, x0, 4.0, 0.5, seed=1, n_paths=2000)
    end = np.array([m.basis.to_coeffs(p.states[-1]) for p in paths])
    lam = m.operator.coord_eigenvalues()
    target = -np.expm1(-2 * lam * 4.0) / (2 * lam)
    se = target * np.sqrt(2 / 2000)
    assert np.all(np.abs(end.var(axis=0) - target) < 4 * se)


def test_noise_validation(nagumo, amari):
    model, _ = nagumo
    with pytest.raises(NoiseError):
        make_noise(model, 0.1, law="list", values=[1.0])
    with pytest.raises(NoiseError):
        make_noise(model, 0.1, law="cauchy")
    with pytest.raises(NoiseError):
        make_noise(model, 0.1, components=(5,))
    with pytest.raises(NoiseError):
        make_noise(model, 0.1, n_noise_modes=10**4)
    with pytest.raises(NoiseError):
        NoiseModel(-1.0, [1.0], [0], True)
    nf, _ = amari
    with pytest.raises(NoiseError, match="trace class"):
        make_noise(nf, 0.1, law="white")
    assert make_noise(nf, 0.1, law="power", power=1.0).trace_class
    assert not make_noise(model, 0.1, law="power", power=0.5).trace_class


def test_time_grid_validation(nagumo):
    model, family = nagumo
    nz = make_noise(model, 0.01, n_noise_modes=2)
    with pytest.raises(NoiseError):
        spde_simulate(model, family, nz, family.profile, 0.25, 0.1, seed=0)
    with pytest.raises(NoiseError):
        spde_simulate(model, family, nz, family.profile, 1.0, 0.0, seed=0)


def test_tube_exit_and_statistics(nagumo, tmp_path):
    model, family = nagumo
    nz = make_noise(model, 0.5, n_noise_modes=8)
    paths = simulate_ensemble(model, family, nz, family.profile, 1.0, 0.05, seed=3, n_paths=4,
                              delta=0.5 * family.tube_radius())
    assert all(p.exit_flag == "tube_exit" for p in paths)
    for p in paths:
        assert p.times[-1] == pytest.approx(p.exit_time)
        assert len(p.wiener_increments) == len(p.times) - 1
    st = exit_statistics(paths, 1.0)
    assert st["fraction_exited"] == 1.0
    assert np.all(np.diff(st["survival"]) <= 0)
    text = write_path_csv(paths[0], family, tmp_path / "p.csv", {"config_hash": "x"})
    rows = text.strip().split("\n")
    assert rows[0] == "time,phase,tube_distance,exit_flag"
    assert rows[-1].endswith("tube_exit")
    side = json.loads((tmp_path / "p.csv.json").read_text())
    assert side["config_hash"] == "x" and side["exit_flag"] == "tube_exit"
    with pytest.raises(NoiseError):
        exit_statistics(paths[:1], 1.0)


def test_zero_noise_is_deterministic_relaxation(nagumo):
    model, family = nagumo
    nz = make_noise(model, 0.0, n_noise_modes=4)
    p = spde_simulate(model, family, nz, family.profile, 1.0, 0.05, seed=0)
    assert np.max(model.basis.e_norm(p.states - family.profile.spec)) < 1e-6


def test_regularity_probe(nagumo):
    model, family = nagumo
    nz = make_noise(model, 0.01)
    p = spde_simulate(model, family, nz, family.profile, 0.5, 0.01, seed=2)
    r = regularity_probe(p, model.operator, [0.1, 0.01, 1e-3, 1e-4])
    assert r["decreasing"] and r["verified"]
    assert r["slope"] > 0


def test_regularity_probe_controls(nagumo):
    from isophase.stochastic import PathSample
    model, family = nagumo
    b = model.basis
    h = [1e-2, 1e-3, 1e-4, 1e-5]
    smooth = PathSample(np.array([0.0]), family.profile.spec[None], np.zeros((0, 1)), 0, b)
    r = regularity_probe(smooth, model.operator, h)
    assert r["verified"] and r["slope"] == pytest.approx(0.5, abs=0.05)
    white = PathSample(np.array([0.0]), b.from_coeffs(np.ones(b.dim))[None], np.zeros((0, 1)), 0, b)
    assert not regularity_probe(white, model.operator, h)["verified"]


def test_exit_time_decreases_with_sigma(nagumo):
    model, family = nagumo
    delta = 0.5 * family.tube_radius()
    tau = {}
    for s in (0.0, 0.15, 0.3):
        nz = make_noise(model, s, n_noise_modes=8)
        paths = simulate_ensemble(model, family, nz, family.profile, 2.0, 0.05, seed=9, n_paths=32, delta=delta)
        tau[s] = exit_statistics(paths, 2.0)["tau"]
    assert np.all(tau[0.0] == 2.0)
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 32, (2000, 32))
    diff = tau[0.3][idx].mean(axis=1) - tau[0.15][idx].mean(axis=1)
    assert np.quantile(diff, 0.025) <= 0.0
