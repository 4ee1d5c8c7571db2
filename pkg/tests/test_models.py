import numpy as np
import pytest

from isophase.models import (ModelError, NeuralField, OracleOscillator, ReactionDiffusion, d_nonlinearity,
                             lipschitz_audit, make_model, nonlinearity, oracle_gradient, oracle_hessian,
                             oracle_phase)
from isophase.spectral import Field, Grid

from conftest import smooth_direction


def _const(model, *vals):
    b = model.basis
    return Field.from_values(b, np.array([np.full(len(b.x), v) for v in vals]))


def test_cubic_zero():
    m = ReactionDiffusion(Grid(32, 8.0), 16, b=0.3, a_u=0.1)
    assert np.all(nonlinearity(m, _const(m, 0.0)).values == 0)


def test_cubic_derivative_scalar():
    m = ReactionDiffusion(Grid(32, 8.0), 16, b=0.25, a_u=0.1)
    dn = d_nonlinearity(m, _const(m, 0.5), _const(m, 1.0))
    np.testing.assert_allclose(dn.values, 0.25, atol=1e-12)


def test_neural_field_constant_state():
    m = NeuralField(Grid(512, 20.0), 32, gain=4.0, theta=0.2)
    c = 0.7
    x = _const(m, c, 0.0)
    out = nonlinearity(m, x).values
    # independent quadrature of the kernel integral
    d = np.linspace(-10, 10, 200001)
    w = 2.0 * np.exp(-d**2 / 2) - 1.0 * np.exp(-d**2 / 8)
    mass = np.trapezoid(w, d)
    f = 1 / (1 + np.exp(-4.0 * (c - 0.2)))
    np.testing.assert_allclose(out[0], f * mass, atol=1e-8)
    np.testing.assert_allclose(out[1], c, atol=1e-12)
    # the damping of both populations lives in the operator
    np.testing.assert_allclose(m.operator.damping, [1.0, 2.0])


def test_oracle_unit_circle_invariant():
    m = OracleOscillator(0.5)
    th = np.linspace(0, 2 * np.pi, 17)
    Y = np.exp(1j * th)[:, None, None]
    V = m.V(Y)[:, 0, 0]
    radial = (V * np.conj(Y[:, 0, 0])).real
    assert np.max(np.abs(radial)) < 1e-12


def test_non_finite_rejected():
    m = ReactionDiffusion(Grid(32, 8.0), 16, b=0.3, a_u=0.1)
    x = _const(m, np.nan)
    with pytest.raises(ModelError):
        nonlinearity(m, x)


def test_unknown_kind():
    with pytest.raises(ModelError):
        make_model("kuramoto")


def _models():
    return [ReactionDiffusion(Grid(64, 16.0), 32, b=0.05, a_u=0.02, D_u=2.0, D_v=800.0, beta=0.4, rate=2.0),
            NeuralField(Grid(128, 20.0), 32, gain=10.0, theta=0.4, coupling=0.3),
            OracleOscillator(0.5)]


@pytest.mark.parametrize("model", _models(), ids=lambda m: m.kind)
def test_derivatives_fd_order_two(model, rng):
    b = model.basis
    x = smooth_direction(b, rng) * 0.8
    v, w = smooth_direction(b, rng), smooth_direction(b, rng)
    eps = np.array([1e-2, 5e-3, 2.5e-3])
    e1 = [b.e_norm((model.N(x + e * v) - model.N(x - e * v)) / (2 * e) - model.dN(x, v)) for e in eps]
    e2 = [b.e_norm((model.dN(x + e * w, v) - model.dN(x - e * w, v)) / (2 * e) - model.d2N(x, v, w))
          for e in eps]
    for err in (e1, e2):
        if max(err) > 1e-10:
            assert np.polyfit(np.log(eps), np.log(err), 1)[0] == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("model", _models(), ids=lambda m: m.kind)
def test_adjoint_consistency(model, rng):
    b = model.basis
    x, v, p = (smooth_direction(b, rng) for _ in range(3))
    lhs = b.inner(model.dN(x, v), p)
    rhs = b.inner(v, model.dN_adj(x, p))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_lipschitz_audit_finite(nagumo):
    model, family = nagumo
    k = lipschitz_audit(model, family.profile, family.tube_radius(), n_pairs=1000)
    assert np.isfinite(k) and k > 0


def test_oracle_formulas_against_finite_differences():
    x, y, kap, e = 1.3, -0.4, 0.5, 1e-5
    g = oracle_gradient(x, y, kap)
    assert g[0] == pytest.approx((oracle_phase(x + e, y, kap) - oracle_phase(x - e, y, kap)) / (2 * e), rel=1e-8)
    assert g[1] == pytest.approx((oracle_phase(x, y + e, kap) - oracle_phase(x, y - e, kap)) / (2 * e), rel=1e-8)
    H = oracle_hessian(x, y, kap)
    gx = (oracle_gradient(x + e, y, kap) - oracle_gradient(x - e, y, kap)) / (2 * e)
    np.testing.assert_allclose(H[0], gx, rtol=1e-6)
