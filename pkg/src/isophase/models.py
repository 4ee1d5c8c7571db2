"""Concrete nonlinearities N with exact first and second derivatives.

Every model works on batched spectral arrays ``Y`` of shape ``(..., ncomp, M)``
and exposes

    A        diagonal linear symbol (so that V(Y) = A*Y + N(Y))
    N, dN, d2N, dN_adj

``dN_adj`` is the adjoint of ``dN`` in the H inner product of the basis.
"""

from dataclasses import dataclass

import numpy as np

from .spectral import Field, Grid, PlaneBasis, SpectralError, make_operator


class ModelError(ValueError):
    pass


def _check_finite(x):
    if not np.all(np.isfinite(x.spec)):
        raise ModelError("non-finite input field")


class Model:
    kind = None

    def __init__(self, basis, operator, parameters):
        self.basis = basis
        self.operator = operator
        self.parameters = dict(parameters)
        self.kernel = None

    @property
    def A(self):
        return -self.operator.lam

    def V(self, Y):
        return self.A * Y + self.N(Y)

    def dV(self, Y, V):
        return self.A * V + self.dN(Y, V)

    def dV_adj(self, Y, P):
        return np.conj(self.A) * P + self.dN_adj(Y, P)

    def _vals(self, Y):
        return self.basis.to_values(Y)

    def _spec(self, U):
        return self.basis.to_spec(U)

    def jacobian_matrix(self, Y):
        """Dense DV(Y) in orthonormal real coordinates."""
        b = self.basis
        E = b.from_coeffs(np.eye(b.dim))
        Yb = np.broadcast_to(Y, E.shape)
        return b.to_coeffs(self.dV(Yb, E)).T


class ReactionDiffusion(Model):
    """u_t = D_u u_xx - a_u u + r u(1-u)(u-b) - v,  v_t = D_v v_xx - a_v v + beta u.

    Without ``D_v`` the inhibitor is dropped and this is the scalar Nagumo
    equation. ``rate`` (r) sets the kinetic time scale.
    """

    kind = "reaction_diffusion"

    def __init__(self, grid, n_modes, b, a_u=0.0, D_u=1.0, D_v=None, a_v=1.0, beta=0.0, rate=1.0):
        two = D_v is not None
        nc = 2 if two else 1
        damping = [a_u, a_v] if two else [a_u]
        diffusion = [D_u, D_v] if two else [D_u]
        op = make_operator(grid, damping, n_modes, nc, diffusion)
        params = dict(b=b, a_u=a_u, D_u=D_u, rate=rate)
        if two:
            params.update(D_v=D_v, a_v=a_v, beta=beta)
        super().__init__(op.basis, op, params)
        self.b = float(b)
        self.rate = float(rate)
        self.beta = float(beta)
        self.two = two

    @property
    def coupling_matrix(self):
        """Constant linear coupling between components, or None."""
        return np.array([[0.0, -1.0], [self.beta, 0.0]]) if self.two else None

    def f(self, u):
        return self.rate * u * (1 - u) * (u - self.b)

    def fp(self, u):
        return self.rate * (-3 * u**2 + 2 * (1 + self.b) * u - self.b)

    def fpp(self, u):
        return self.rate * (-6 * u + 2 * (1 + self.b))

    def N(self, Y):
        U = self._vals(Y)
        out = np.empty_like(U)
        if self.two:
            out[..., 0, :] = self.f(U[..., 0, :]) - U[..., 1, :]
            out[..., 1, :] = self.beta * U[..., 0, :]
        else:
            out[..., 0, :] = self.f(U[..., 0, :])
        return self._spec(out)

    def dN(self, Y, V):
        U = self._vals(Y)
        W = self._vals(V)
        out = np.empty(np.broadcast_shapes(U.shape, W.shape))
        out[..., 0, :] = self.fp(U[..., 0, :]) * W[..., 0, :]
        if self.two:
            out[..., 0, :] -= W[..., 1, :]
            out[..., 1, :] = self.beta * W[..., 0, :]
        return self._spec(out)

    def dN_adj(self, Y, P):
        U = self._vals(Y)
        Q = self._vals(P)
        out = np.empty(np.broadcast_shapes(U.shape, Q.shape))
        out[..., 0, :] = self.fp(U[..., 0, :]) * Q[..., 0, :]
        if self.two:
            out[..., 0, :] += self.beta * Q[..., 1, :]
            out[..., 1, :] = -Q[..., 0, :]
        return self._spec(out)

    def d2N(self, Y, V, W):
        U = self._vals(Y)
        a = self._vals(V)
        c = self._vals(W)
        out = np.zeros(np.broadcast_shapes(U.shape, a.shape, c.shape))
        out[..., 0, :] = self.fpp(U[..., 0, :]) * a[..., 0, :] * c[..., 0, :]
        return self._spec(out)


def mexican_hat(d, A1, s1, A2, s2):
    return A1 * np.exp(-(d**2) / (2 * s1**2)) - A2 * np.exp(-(d**2) / (2 * s2**2))


class NeuralField(Model):
    """Two-population field x_t = -x + w*f(x) - g y,  y_t = -y/eps + x on a ring.

    ``w`` is a Mexican-hat kernel in the periodic distance and the integral is
    the periodic trapezoid rule, applied as a circular convolution.
    """

    kind = "neural_field"

    def __init__(self, grid, n_modes, eps=0.5, A1=2.0, s1=1.0, A2=1.0, s2=2.0,
                 gain=5.0, theta=0.3, coupling=0.0):
        if grid.boundary != "periodic":
            raise ModelError("neural field requires a periodic grid")
        op = make_operator(grid, [1.0, 1.0 / eps], n_modes, 2, [0.0, 0.0])
        params = dict(eps=eps, A1=A1, s1=s1, A2=A2, s2=s2, gain=gain, theta=theta, coupling=coupling)
        super().__init__(op.basis, op, params)
        x = op.basis.x
        ell = grid.length
        d = np.minimum(x, ell - x)
        self.kernel = mexican_hat(d, A1, s1, A2, s2) * (ell / grid.n_points)
        self._khat = np.fft.rfft(self.kernel)[: op.basis.M].real
        self.gain = float(gain)
        self.theta = float(theta)
        self.coupling = float(coupling)

    @property
    def coupling_matrix(self):
        return np.array([[0.0, -self.coupling], [1.0, 0.0]])

    def kernel_mass(self):
        return float(self.kernel.sum())

    def f(self, u):
        return 0.5 * (1 + np.tanh(0.5 * self.gain * (u - self.theta)))

    def fp(self, u):
        s = self.f(u)
        return self.gain * s * (1 - s)

    def fpp(self, u):
        s = self.f(u)
        return self.gain**2 * s * (1 - s) * (1 - 2 * s)

    def _conv(self, g):
        return self._khat * self._spec(g)

    def N(self, Y):
        U = self._vals(Y)
        out = np.empty(Y.shape, complex)
        out[..., 0, :] = self._conv(self.f(U[..., 0, :])) - self.coupling * Y[..., 1, :]
        out[..., 1, :] = Y[..., 0, :]
        return out

    def dN(self, Y, V):
        U = self._vals(Y)
        W = self._vals(V[..., :1, :])[..., 0, :]
        shape = np.broadcast_shapes(Y.shape, V.shape)
        out = np.empty(shape, complex)
        out[..., 0, :] = self._conv(self.fp(U[..., 0, :]) * W) - self.coupling * V[..., 1, :]
        out[..., 1, :] = V[..., 0, :]
        return out

    def dN_adj(self, Y, P):
        U = self._vals(Y)
        shape = np.broadcast_shapes(Y.shape, P.shape)
        out = np.empty(shape, complex)
        cp = self._vals(self._khat * P[..., :1, :])[..., 0, :]
        out[..., 0, :] = self._spec(self.fp(U[..., 0, :]) * cp) + P[..., 1, :]
        out[..., 1, :] = -self.coupling * P[..., 0, :]
        return out

    def d2N(self, Y, V, W):
        U = self._vals(Y)
        a = self._vals(V[..., :1, :])[..., 0, :]
        c = self._vals(W[..., :1, :])[..., 0, :]
        shape = np.broadcast_shapes(Y.shape, V.shape, W.shape)
        out = np.zeros(shape, complex)
        out[..., 0, :] = self._conv(self.fpp(U[..., 0, :]) * a * c)
        return out


@dataclass(frozen=True)
class OracleSpec:
    kappa: float = 0.5
    sigma: float = 0.0


class OracleOscillator(Model):
    """Planar oscillator r' = r(1 - r^2), theta' = 1 + kappa (1 - r^2).

    In complex form z' = i z + (1 + i kappa) z (1 - |z|^2); the rotation is the
    linear part so that flows on the unit circle are exact rotations.
    """

    kind = "oracle_oscillator"

    def __init__(self, kappa=0.5):
        super().__init__(PlaneBasis(), None, dict(kappa=kappa))
        self.kappa = float(kappa)
        self._c = 1 + 1j * self.kappa

    @property
    def A(self):
        return np.array([[1j]])

    def N(self, Y):
        return self._c * Y * (1 - np.abs(Y) ** 2)

    def dN(self, Y, V):
        return self._c * (V * (1 - np.abs(Y) ** 2) - 2 * Y * (np.conj(Y) * V).real)

    def dN_adj(self, Y, P):
        return np.conj(self._c) * (1 - np.abs(Y) ** 2) * P - 2 * Y * (self._c * Y * np.conj(P)).real

    def d2N(self, Y, V, W):
        return -2 * self._c * (V * (np.conj(Y) * W).real + W * (np.conj(Y) * V).real
                               + Y * (np.conj(W) * V).real)


def oracle_phase(x, y, kappa):
    return np.arctan2(y, x) - kappa * 0.5 * np.log(x**2 + y**2)


def oracle_gradient(x, y, kappa):
    r2 = x**2 + y**2
    return np.stack([(-y - kappa * x) / r2, (x - kappa * y) / r2], axis=-1)


def oracle_hessian(x, y, kappa):
    r4 = (x**2 + y**2) ** 2
    hxx = (2 * x * y - kappa * (y**2 - x**2)) / r4
    hxy = (y**2 - x**2 + 2 * kappa * x * y) / r4
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, -hxx], -1)], -2)


def oracle_radius(t, r0):
    return (1 + (r0**-2 - 1) * np.exp(-2 * t)) ** -0.5


def nonlinearity(model, x):
    _check_finite(x)
    return Field(model.basis, model.N(x.spec))


def d_nonlinearity(model, x, v):
    _check_finite(x)
    _check_finite(v)
    return Field(model.basis, model.dN(x.spec, v.spec))


def d2_nonlinearity(model, x, v, w):
    _check_finite(x)
    return Field(model.basis, model.d2N(x.spec, v.spec, w.spec))


def vector_field(model, x):
    """V(x) = Lx + N(x)."""
    _check_finite(x)
    return Field(model.basis, model.V(x.spec))


def lipschitz_audit(model, ref, delta, n_pairs=1000, seed=0):
    """Sampled local Lipschitz constant of N in the E-norm on a delta-ball around ``ref``."""
    rng = np.random.default_rng(seed)
    b = model.basis
    def draw():
        # smooth random perturbations: random coefficients scaled by mode index
        c = rng.standard_normal((n_pairs, b.dim))
        c /= 1.0 + np.tile(b.freq_of_coord, b.ncomp)
        Y = b.from_coeffs(c)
        nrm = b.e_norm(Y)
        r = delta * rng.uniform(0, 1, n_pairs)
        return ref.spec + Y * (r / nrm)[:, None, None]

    X1, X2 = draw(), draw()
    num = b.e_norm(model.N(X1) - model.N(X2))
    den = b.e_norm(X1 - X2)
    return float(np.max(num / den))


def make_model(kind, grid=None, n_modes=None, **params):
    if kind == "reaction_diffusion":
        return ReactionDiffusion(grid, n_modes, **params)
    if kind == "neural_field":
        return NeuralField(grid, n_modes, **params)
    if kind == "oracle_oscillator":
        return OracleOscillator(**params)
    raise ModelError(f"unknown model kind {kind!r}")


__all__ = [
    "Model", "ModelError", "ReactionDiffusion", "NeuralField", "OracleOscillator", "OracleSpec",
    "nonlinearity", "d_nonlinearity", "d2_nonlinearity", "vector_field", "lipschitz_audit",
    "oracle_phase", "oracle_gradient", "oracle_hessian", "oracle_radius", "make_model",
    "Grid", "SpectralError",
]
