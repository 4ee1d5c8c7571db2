"""The isochron map pi and its derivatives.

pi(x) is computed by flowing x until it is within ``tol_gamma`` of the family,
projecting, and rewinding the on-manifold drift: pi(x) = beta_T - c T. The
terminal projection is corrected to first order with the phase covector psi
(the left null vector of the linearisation at the profile), so the terminal
error is quadratic in the remaining distance.

States in one batch share the stopping time T. Finite-difference stencils are
therefore differences of a single smooth function, and the discrete adjoint
gives the exact gradient of that function.
"""

from dataclasses import dataclass

import numpy as np

from .flow import _guard, get_stepper, graded_steps, lam_max
from .manifold import Phase, project, wrap
from .spectral import Field


class IsochronError(RuntimeError):
    pass


class BasinEscapeError(IsochronError):
    def __init__(self, t_cap, dist):
        super().__init__(f"flow did not reach the manifold by t={t_cap:.4g} (distance {dist:.3g})")
        self.t_cap = t_cap
        self.distance = dist


@dataclass(frozen=True)
class IsochronConfig:
    tol_gamma: float = None
    t_cap: float = None
    fd_eps: float = 1e-4
    adjoint: bool = True
    dt: float = 0.1
    scheme: str = "etd_rk4"
    batch: int = 256
    blowup: float = 1e3

    def __post_init__(self):
        for name in ("tol_gamma", "t_cap"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise IsochronError(f"{name} must be positive")
        if not (self.fd_eps > 0 and self.dt > 0):
            raise IsochronError("fd_eps and dt must be positive")

    def resolved(self, family):
        tol = self.tol_gamma
        if tol is None:
            tol = 1e-6 * float(family.basis.e_norm(family.profile.spec))
        cap = self.t_cap
        if cap is None:
            op = family.model.operator
            omega = op.omega if op is not None else 1.0
            cap = 50.0 / omega
        return tol, cap


@dataclass
class PhaseGradient:
    grad: Field
    at: Field

    def __call__(self, v):
        return self.grad.inner(v)


def phase_covector(family, cfg):
    """Left fixed vector psi of the one-step tangent map at the profile (rotated back by c h).

    Normalised by <psi, D gamma_0> = 1.
    """
    key = ("psi", cfg.dt, cfg.scheme)
    if key in family.cache:
        return family.cache[key]
    b = family.basis
    st = get_stepper(family.model, cfg.dt, cfg.scheme)
    E = b.from_coeffs(np.eye(b.dim))
    Y = np.broadcast_to(family.profile.spec, E.shape)
    _, V = st.step_tangent(Y, E)
    V = b.act(V, np.full(b.dim, -family.speed * cfg.dt))
    R = b.to_coeffs(V).T
    _, s, vh = np.linalg.svd((R - np.eye(b.dim)).T)
    psi = vh[-1]
    dg = b.to_coeffs(family.dgamma_spec(0.0))
    psi = psi / (psi @ dg)
    psi_spec = b.from_coeffs(psi)
    family.cache[key] = psi_spec
    return psi_spec


def _terminal(family, Y, psi, need_grad, beta0=None):
    b = family.basis
    beta, dist = project(family, Y, beta0=beta0)
    G = family.gamma_spec(beta)
    D = Y - G
    ps = b.act(psi, beta)
    corr = b.inner(ps, D)
    if not need_grad:
        return beta, corr, dist, None
    dg = family.dgamma_spec(beta)
    d2g = family.d2gamma_spec(beta)
    denom = family._norm_gen2 - b.inner(D, d2g)
    dps = b.generator(ps)
    coef = b.inner(dps, D) / denom
    g = ps + coef[..., None, None] * dg
    return beta, corr, dist, g


def _run(family, Y, cfg, need_grad=False):
    """Isochron of a batch sharing one stopping time. Returns (pi, grad or None, T).

    The first step is graded so that high modes of the initial state decay
    on a resolved mesh.
    """
    tol, cap = cfg.resolved(family)
    model = family.model
    st = get_stepper(model, cfg.dt, cfg.scheme)
    first = [get_stepper(model, h, cfg.scheme) for h in graded_steps(cfg.dt, lam_max(model))]
    psi = phase_covector(family, cfg)
    traj = [] if need_grad else None
    n_max = int(np.ceil(cap / cfg.dt))
    # the distance test runs on a 0.25 time grid (every step for coarse dt)
    every = max(1, int(round(0.25 / cfg.dt)))
    n = 0
    beta = None
    while True:
        if n % every == 0:
            beta, dist = project(family, Y, beta0=beta)
            if np.all(dist <= tol):
                break
        if n >= n_max:
            raise BasinEscapeError(cap, float(np.max(dist)))
        for s in (first if n == 0 else (st,)):
            if need_grad:
                traj.append((s, Y))
            Y = s.step(Y)
        n += 1
        if n % 20 == 0:
            _guard(model, Y, n * cfg.dt, cfg.blowup)
    T = n * cfg.dt
    beta, corr, dist, g = _terminal(family, Y, psi, need_grad, beta)
    pi = np.mod(beta + corr - family.speed * T, family.period)
    if need_grad:
        for s, Yn in reversed(traj):
            g = s.step_adjoint(Yn, g)
    return pi, g, T


def isochron_batch(family, Y, cfg=IsochronConfig(), need_grad=False):
    """pi for a batch of spectral states of shape (B, ncomp, M), in chunks of ``cfg.batch``.

    All members of a chunk share the stopping time.
    """
    Y = np.asarray(Y)
    single = Y.ndim == 2
    if single:
        Y = Y[None]
    out, grads = [], []
    for i in range(0, len(Y), cfg.batch):
        pi, g, _ = _run(family, Y[i: i + cfg.batch], cfg, need_grad)
        out.append(pi)
        if need_grad:
            grads.append(g)
    pi = np.concatenate(out)
    g = np.concatenate(grads) if need_grad else None
    if single:
        return (pi[0], g[0]) if need_grad else pi[0]
    return (pi, g) if need_grad else pi


def isochron(family, x, cfg=IsochronConfig()):
    return Phase(float(isochron_batch(family, x.spec, cfg)), family.period)


def isochron_T_stability(family, x, cfg=IsochronConfig(), extra=1.0):
    """|pi computed at the first convergence time minus pi computed after ``extra`` more time|."""
    pi0, _, T = _run(family, x.spec[None], cfg)
    st = get_stepper(family.model, cfg.dt, cfg.scheme)
    Y = x.spec[None]
    n = int(round(T / cfg.dt)) + int(np.ceil(extra / cfg.dt))
    for h in graded_steps(cfg.dt, lam_max(family.model)):
        Y = get_stepper(family.model, h, cfg.scheme).step(Y)
    for _ in range(n - 1):
        Y = st.step(Y)
    psi = phase_covector(family, cfg)
    beta, corr, _, _ = _terminal(family, Y, psi, False)
    pi1 = np.mod(beta + corr - family.speed * n * cfg.dt, family.period)
    return float(abs(wrap(pi1 - pi0, family.period))[0])


def grad_pi(family, x, cfg=IsochronConfig()):
    """Riesz representative of D pi(x) by discrete adjoint transport."""
    _, g = isochron_batch(family, x.spec, cfg, need_grad=True)
    return PhaseGradient(Field(family.basis, g), x)


def _eps(cfg, family, v_spec):
    b = family.basis
    nv = np.sqrt(b.inner(v_spec, v_spec))
    return min(cfg.fd_eps, family.period / 100) / nv


def dpi(family, x, v, cfg=IsochronConfig()):
    """Central difference (pi(x + e v) - pi(x - e v)) / 2e with phase unwrapping."""
    e = _eps(cfg, family, v.spec)
    Y = np.stack([x.spec + e * v.spec, x.spec - e * v.spec])
    p = isochron_batch(family, Y, cfg)
    return float(wrap(p[0] - p[1], family.period) / (2 * e))


def dpi_adjoint(family, x, v, cfg=IsochronConfig()):
    return grad_pi(family, x, cfg)(v)


def d2pi(family, x, v, w=None, cfg=IsochronConfig()):
    """Second derivative by central stencils; diagonal uses the 3-point stencil."""
    P = family.period
    if w is None or w is v:
        e = _eps(cfg, family, v.spec) * 10
        Y = np.stack([x.spec + e * v.spec, x.spec, x.spec - e * v.spec])
        p = isochron_batch(family, Y, cfg)
        return float((wrap(p[0] - p[1], P) + wrap(p[2] - p[1], P)) / e**2)
    e = min(_eps(cfg, family, v.spec), _eps(cfg, family, w.spec)) * 10
    a, c = v.spec, w.spec
    Y = np.stack([x.spec + e * (a + c), x.spec + e * (a - c), x.spec + e * (c - a), x.spec - e * (a + c)])
    p = isochron_batch(family, Y, cfg)
    d = wrap(p - p[0], P)
    return float((d[0] - d[1] - d[2] + d[3]) / (4 * e**2))


def second_derivative_diag(family, X, dirs, cfg=IsochronConfig(), rel_eps=10.0):
    """D^2 pi(X_i)[d, d] and D pi(X_i) d for every state X_i and direction d.

    X has shape (B, ncomp, M) and dirs (K, ncomp, M). Each state is evaluated
    with its own stencil batch so that all members share one stopping time.
    Returns arrays of shape (B, K).
    """
    b = family.basis
    P = family.period
    nd = np.sqrt(b.inner(dirs, dirs))
    e = np.minimum(rel_eps * cfg.fd_eps, P / 100) / nd  # (K,)
    K = len(dirs)
    D2 = np.empty((len(X), K))
    D1 = np.empty((len(X), K))
    per = max(1, cfg.batch // (2 * K + 1))
    for i in range(0, len(X), per):
        Xc = X[i: i + per]
        B = len(Xc)
        st = np.concatenate([Xc[:, None], Xc[:, None] + e[None, :, None, None] * dirs[None],
                             Xc[:, None] - e[None, :, None, None] * dirs[None]], axis=1)
        flat = st.reshape((-1,) + st.shape[2:])
        p, _, _ = _run(family, flat, cfg)
        p = p.reshape(B, 2 * K + 1)
        dp = wrap(p[:, 1: K + 1] - p[:, :1], P)
        dm = wrap(p[:, K + 1:] - p[:, :1], P)
        D2[i: i + B] = (dp + dm) / e**2
        D1[i: i + B] = (dp - dm) / (2 * e)
    return D2, D1


def pi_trace_terms(family, x, K, cfg=IsochronConfig()):
    """Per-mode D^2 pi(x)[e_k, e_k] and D pi(x) e_k for the first K modes (ascending eigenvalue)."""
    from .flow import basis_directions
    b = family.basis
    order = family.model.operator.order if family.model.operator is not None else None
    E, idx = basis_directions(b, K, order)
    D2, D1 = second_derivative_diag(family, x.spec[None], E, cfg)
    return D2[0], D1[0], idx


def pi_trace_sums(family, x, K, cfg=IsochronConfig()):
    """(sum |D^2 pi[e_k, e_k]|, sum |D pi e_k|, sum |D pi e_k|^2) over k <= K."""
    d2, d1, _ = pi_trace_terms(family, x, K, cfg)
    return float(np.abs(d2).sum()), float(np.abs(d1).sum()), float((d1**2).sum())


def dpi_V(family, x, cfg=IsochronConfig()):
    """D pi(x) V(x) via the adjoint gradient."""
    g = grad_pi(family, x, cfg)
    return g(Field(family.basis, family.model.V(x.spec)))


def dpi_V_batch(family, Y, cfg=IsochronConfig()):
    pi, g = isochron_batch(family, Y, cfg, need_grad=True)
    return pi, g, family.basis.inner(g, family.model.V(Y))


def dpi_L(family, x, y, cfg=IsochronConfig(), K=None):
    """Partial sums of D pi(x)[L y] = -sum_k lambda_k y_k D pi(x) e_k, in eigenvalue order."""
    op = family.model.operator
    g = grad_pi(family, x, cfg).grad.coeffs
    lam = op.coord_eigenvalues()
    terms = -(lam * y.coeffs * g)[op.order]
    if K is not None:
        terms = terms[:K]
    return np.cumsum(terms)
