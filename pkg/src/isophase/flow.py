"""Deterministic flow phi_t and its variational flows.

All integrators are exponential time-differencing schemes for Y' = A Y + N(Y)
with diagonal A. Tangent and second-order variational equations are integrated
jointly with the base trajectory by the same scheme, so they are the exact
derivatives of the discrete flow map. The discrete adjoint is provided for
gradient transport.
"""

from dataclasses import dataclass
import numpy as np

from .spectral import Field


SCHEMES = ("exponential_euler", "etd_rk2", "etd_rk4")


class FlowError(RuntimeError):
    pass


class BlowUpError(FlowError):
    def __init__(self, time, norm):
        super().__init__(f"blow-up at t={time:.6g} (E-norm {norm:.3g})")
        self.time = time
        self.norm = norm


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 0.01
    scheme: str = "etd_rk4"
    t_max: float = 100.0
    tol_invariant: float = 1e-6
    blowup: float = 1e3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise FlowError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.tol_invariant > 0 and self.blowup > 0):
            raise FlowError("dt and tolerances must be positive")
        if self.dt > self.t_max:
            raise FlowError("dt must not exceed t_max")


_CONTOUR = np.exp(2j * np.pi * (np.arange(1, 65) - 0.5) / 64)

_PHI = dict(
    E1=lambda L: np.exp(L),
    E2=lambda L: np.exp(L / 2),
    phi1=lambda L: (np.exp(L) - 1) / L,
    phi2=lambda L: (np.exp(L) - 1 - L) / L**2,
    q=lambda L: (np.exp(L / 2) - 1) / L,
    f1=lambda L: (-4 - L + np.exp(L) * (4 - 3 * L + L**2)) / L**3,
    f2=lambda L: (2 + L + np.exp(L) * (-2 + L)) / L**3,
    f3=lambda L: (-4 - 3 * L - L**2 + np.exp(L) * (4 - L)) / L**3,
)


def _phi_functions(z):
    """phi-type coefficients by averaging over a unit circle around each z."""
    L = np.asarray(z)[..., None] + _CONTOUR
    out = {k: np.mean(f(L), -1) for k, f in _PHI.items()}
    out["E1"], out["E2"] = np.exp(z), np.exp(np.asarray(z) / 2)
    if np.isrealobj(z):
        out = {k: v.real for k, v in out.items()}
    return out


def _divided_difference(f, d1, d2):
    """f[d1, d2] for the phi-type function f, stable for close arguments."""
    far = np.abs(d1 - d2) >= 0.5
    safe = np.where(far, d2, d1 - 1.0)
    fd1 = np.mean(f(d1[..., None] + _CONTOUR), -1)
    fd2 = np.mean(f(safe[..., None] + _CONTOUR), -1)
    direct = (fd1 - fd2) / (d1 - safe)
    # Cauchy integral on a unit circle around the midpoint, whose
    # integrand is itself evaluated by a shifted contour mean
    m = 0.5 * (d1 + d2)
    zc = m[..., None] + _CONTOUR
    fz = np.mean(f(zc[..., None] + _CONTOUR), -1)
    near = np.mean(fz * _CONTOUR / ((zc - d1[..., None]) * (zc - d2[..., None])), -1)
    return np.where(far, direct, near)


def _block_phi(Ah):
    """phi-type coefficients of 2x2 blocks Ah with shape (2, 2, M).

    Uses the Newton form f(X) = f(d1) I + f[d1, d2] (X - d1 I) in terms of
    the eigenvalues d1, d2, which is also valid for defective blocks.
    """
    a, b, c, d = Ah[0, 0], Ah[0, 1], Ah[1, 0], Ah[1, 1]
    tr = a + d
    disc = np.sqrt((0.5 * (a - d)) ** 2 + b * c + 0j)
    d1, d2 = 0.5 * tr + disc, 0.5 * tr - disc
    eye = np.eye(2)[..., None]
    out = {}
    for k, f in _PHI.items():
        f1 = np.mean(f(d1[..., None] + _CONTOUR), -1)
        dd = _divided_difference(f, d1, d2)
        out[k] = f1 * eye + dd * (Ah - d1 * eye)
    if np.isrealobj(Ah):
        out = {k: v.real for k, v in out.items()}
    return out


def _block_mul(X, s):
    """Per-mode 2x2 product: X has shape (2, 2, M) (or (2, 2, 1)), s (..., 2, M)."""
    return np.einsum("ijm,...jm->...im", X, s)


class Stepper:
    """One step of size h of an ETD scheme for a model (optionally with a custom A).

    When the model declares a constant linear coupling between components,
    it is moved into the exponential part and the coefficients become
    per-mode matrices. This keeps stiff cross-component terms out of the
    explicit stages.
    """

    def __init__(self, model, h, scheme="etd_rk4", A=None):
        if scheme not in SCHEMES:
            raise FlowError(f"unknown scheme {scheme!r}")
        self.model = model
        self.h = float(h)
        self.scheme = scheme
        A = model.A if A is None else A
        A = np.asarray(A)
        if np.iscomplexobj(A) and np.all(A.imag == 0):
            A = A.real
        self.A = A
        C = getattr(model, "coupling_matrix", None)
        self.C = None if C is None else np.asarray(C, float)
        if self.C is None:
            ph = _phi_functions(A * h)
        else:
            if self.C.shape != (2, 2) or A.shape[-2] != 2:
                raise FlowError("linear coupling is supported for two components only")
            blocks = np.eye(2)[..., None] * A[None] + self.C[..., None]
            ph = _block_phi(blocks * h)
        self.E1, self.E2 = ph["E1"], ph["E2"]
        self.F1 = h * ph["phi1"]
        self.F2 = h * ph["phi2"]
        self.Q = h * ph["q"]
        self.f1, self.f2, self.f3 = h * ph["f1"], h * ph["f2"], h * ph["f3"]
        self._nl = self._nl_from_A(A)
        dA = model.A - A
        self._dA = dA if np.any(dA != 0) else None

    def _m(self, X, s):
        if self.C is None:
            return X * s
        return _block_mul(X, s)

    def _mh(self, X, s):
        if self.C is None:
            return np.conj(X) * s
        return _block_mul(np.conj(X.swapaxes(0, 1)), s)

    def _cY(self, Y):
        return _block_mul(self.C[..., None], Y)

    def _cY_adj(self, P):
        return _block_mul(self.C.T[..., None], P)

    def _nl_from_A(self, A):
        # keep V = A_model Y + N(Y) when the splitting differs from the model's
        m = self.model
        dA = m.A - A
        lin = np.any(dA != 0)
        if not lin and self.C is None:
            return m.N
        def nl(Y):
            out = m.N(Y)
            if lin:
                out = out + dA * Y
            if self.C is not None:
                out = out - self._cY(Y)
            return out
        return nl

    # nonlinear parts of augmented systems ---------------------------------
    def _dN(self, Y, V):
        out = self.model.dN(Y, V)
        if self._dA is not None:
            out = out + self._dA * V
        if self.C is not None:
            out = out - self._cY(V)
        return out

    def _dN_adj(self, Y, P):
        out = self.model.dN_adj(Y, P)
        if self._dA is not None:
            out = out + np.conj(self._dA) * P
        if self.C is not None:
            out = out - self._cY_adj(P)
        return out

    def _F0(self, S):
        return [self._nl(S[0])]

    def _F1(self, S):
        Y, V = S
        return [self._nl(Y), self._dN(Y, V)]

    def _F2(self, S):
        Y, V, W, Z = S
        return [self._nl(Y), self._dN(Y, V), self._dN(Y, W),
                self._dN(Y, Z) + self.model.d2N(Y, V, W)]

    def _F2diag(self, S):
        Y, V, Z = S
        return [self._nl(Y), self._dN(Y, V), self._dN(Y, Z) + self.model.d2N(Y, V, V)]

    def _advance(self, S, F):
        m = self._m
        NS = F(S)
        if self.scheme == "exponential_euler":
            return [m(self.E1, s) + m(self.F1, n) for s, n in zip(S, NS)]
        if self.scheme == "etd_rk2":
            a = [m(self.E1, s) + m(self.F1, n) for s, n in zip(S, NS)]
            Na = F(a)
            return [x + m(self.F2, na - n) for x, na, n in zip(a, Na, NS)]
        E2, Q = self.E2, self.Q
        a = [m(E2, s) + m(Q, n) for s, n in zip(S, NS)]
        Na = F(a)
        b = [m(E2, s) + m(Q, n) for s, n in zip(S, Na)]
        Nb = F(b)
        c = [m(E2, x) + m(Q, 2 * nb - n) for x, nb, n in zip(a, Nb, NS)]
        Nc = F(c)
        return [m(self.E1, s) + m(self.f1, n) + 2 * m(self.f2, na + nb) + m(self.f3, nc)
                for s, n, na, nb, nc in zip(S, NS, Na, Nb, Nc)]

    def step(self, Y):
        return self._advance([Y], self._F0)[0]

    def step_tangent(self, Y, V):
        return tuple(self._advance([Y, V], self._F1))

    def step_second(self, Y, V, W, Z):
        return tuple(self._advance([Y, V, W, Z], self._F2))

    def step_second_diag(self, Y, V, Z):
        return tuple(self._advance([Y, V, Z], self._F2diag))

    def step_adjoint(self, Y, P):
        """Pull a covector P at the step output back to the step input Y."""
        m, mh = self._m, self._mh
        J = self._dN_adj
        if self.scheme == "exponential_euler":
            return mh(self.E1, P) + J(Y, mh(self.F1, P))
        if self.scheme == "etd_rk2":
            a = m(self.E1, Y) + m(self.F1, self._nl(Y))
            pa = P + J(a, mh(self.F2, P))
            gY = -mh(self.F2, P) + mh(self.F1, pa)
            return mh(self.E1, pa) + J(Y, gY)
        E2, Q = self.E2, self.Q
        NY = self._nl(Y)
        a = m(E2, Y) + m(Q, NY)
        Na = self._nl(a)
        b = m(E2, Y) + m(Q, Na)
        Nb = self._nl(b)
        cc = m(E2, a) + m(Q, 2 * Nb - NY)
        pc = J(cc, mh(self.f3, P))
        pb = J(b, 2 * mh(self.f2, P) + 2 * mh(Q, pc))
        pa = J(a, 2 * mh(self.f2, P) + mh(Q, pb)) + mh(E2, pc)
        gY = mh(self.f1, P) - mh(Q, pc) + mh(Q, pa)
        return mh(self.E1, P) + mh(E2, pb) + mh(E2, pa) + J(Y, gY)


def get_stepper(model, h, scheme):
    cache = model.__dict__.setdefault("_steppers", {})
    key = (round(float(h), 15), scheme)
    if key not in cache:
        cache[key] = Stepper(model, h, scheme)
    return cache[key]


def _steps(t, dt):
    n = int(np.ceil(t / dt - 1e-9))
    return n, (t / n if n else 0.0)


def graded_steps(h, lam_max, ratio=0.5):
    """Step sizes covering [0, h], refined geometrically towards 0.

    The smallest step satisfies step * lam_max <= ratio, so that quadratic
    interactions of rapidly decaying modes are resolved during their decay.
    """
    m = max(0, int(np.ceil(np.log2(h * lam_max / ratio)))) if lam_max > 0 else 0
    h0 = h / 2**m
    return [h0] + [h0 * 2**j for j in range(m)]


def lam_max(model):
    return float(model.operator.eigenvalues[-1]) if model.operator is not None else 0.0


def _guard(model, Y, time, bound):
    nrm = np.max(model.basis.e_norm(Y))
    if not np.isfinite(nrm) or nrm > bound:
        raise BlowUpError(time, float(nrm))


def propagate(model, Y, t, dt, scheme="etd_rk4", bound=1e3, store=False):
    """Integrate raw spectral arrays; returns the final state (and the trajectory)."""
    if t < 0:
        raise FlowError("t must be non-negative")
    n, h = _steps(t, dt)
    traj = [Y] if store else None
    if n == 0:
        return (Y, traj) if store else Y
    st = get_stepper(model, h, scheme)
    for i in range(n):
        Y = st.step(Y)
        if store:
            traj.append(Y)
        if (i + 1) % 10 == 0 or i == n - 1:
            _guard(model, Y, (i + 1) * h, bound)
    return (Y, traj) if store else Y


def flow(model, x0, t, cfg=FlowConfig()):
    """phi_t(x0)."""
    if t == 0:
        return Field(x0.basis, x0.spec.copy())
    Y = propagate(model, x0.spec, t, cfg.dt, cfg.scheme, cfg.blowup)
    return Field(x0.basis, Y)


def flow_trajectory(model, x0, t, cfg=FlowConfig()):
    """Checkpointed trajectory: (times, list of Fields) at every step."""
    Y, traj = propagate(model, x0.spec, t, cfg.dt, cfg.scheme, cfg.blowup, store=True)
    n = len(traj) - 1
    times = np.linspace(0, t, n + 1)
    return times, [Field(x0.basis, y) for y in traj]


def propagate_tangent(model, Y, V, t, dt, scheme="etd_rk4", bound=1e3):
    n, h = _steps(t, dt)
    if n == 0:
        return Y, V
    st = get_stepper(model, h, scheme)
    for i in range(n):
        Y, V = st.step_tangent(Y, V)
        if (i + 1) % 10 == 0 or i == n - 1:
            _guard(model, Y, (i + 1) * h, bound)
    return Y, V


def propagate_second(model, Y, V, W, t, dt, scheme="etd_rk4", bound=1e3):
    n, h = _steps(t, dt)
    Z = np.zeros(np.broadcast_shapes(V.shape, W.shape), dtype=np.result_type(V, W))
    if n == 0:
        return Y, V, W, Z
    st = get_stepper(model, h, scheme)
    for i in range(n):
        Y, V, W, Z = st.step_second(Y, V, W, Z)
        if (i + 1) % 10 == 0 or i == n - 1:
            _guard(model, Y, (i + 1) * h, bound)
    return Y, V, W, Z


def dflow(model, x0, v, t, cfg=FlowConfig()):
    """D phi_t(x0)[v]."""
    _, V = propagate_tangent(model, x0.spec, v.spec, t, cfg.dt, cfg.scheme, cfg.blowup)
    return Field(x0.basis, V)


def d2flow(model, x0, v, w, t, cfg=FlowConfig()):
    """D^2 phi_t(x0)[v, w]."""
    *_, Z = propagate_second(model, x0.spec, v.spec, w.spec, t, cfg.dt, cfg.scheme, cfg.blowup)
    return Field(x0.basis, Z)


def basis_directions(basis, K, order=None):
    """Spectral arrays of the first K basis functions in the given coordinate order."""
    idx = np.arange(basis.dim) if order is None else np.asarray(order)
    idx = idx[:K]
    E = np.zeros((len(idx), basis.dim))
    E[np.arange(len(idx)), idx] = 1.0
    return basis.from_coeffs(E), idx


def flow_trace_terms(model, x0, t, K, cfg=FlowConfig()):
    """Per-mode ||Dphi_t e_k||_E and ||D^2phi_t[e_k, e_k]||_E for the first K modes.

    Modes are ordered by ascending eigenvalue of L.
    """
    b = model.basis
    order = model.operator.order if model.operator is not None else None
    if K > b.dim:
        raise FlowError(f"K={K} exceeds the number of resolved modes {b.dim}")
    E, idx = basis_directions(b, K, order)
    Y = x0.spec
    n, h = _steps(t, cfg.dt)
    V, Z = E, np.zeros_like(E)
    if n:
        # graded first step: the e_k decay on the time scale 1/lambda_k
        steps = graded_steps(h, lam_max(model)) + [h] * (n - 1)
        for i, hs in enumerate(steps):
            Y, V, Z = get_stepper(model, hs, cfg.scheme).step_second_diag(Y, V, Z)
            if (i + 1) % 10 == 0 or i == len(steps) - 1:
                _guard(model, Y, t, cfg.blowup)
    return b.e_norm(V), b.e_norm(Z), idx


def flow_trace_sums(model, x0, t, K, cfg=FlowConfig()):
    """(sum ||Dphi_t e_k||_E, sum ||Dphi_t e_k||_E^2, sum ||D^2phi_t[e_k,e_k]||_E) over k <= K."""
    d1, d2, _ = flow_trace_terms(model, x0, t, K, cfg)
    return float(d1.sum()), float((d1**2).sum()), float(d2.sum())
