"""Invariant circles of relative equilibria: construction, parameterisation and projection.

A family is the orbit {gamma_alpha} of a profile under the symmetry of the
basis (spatial translation on the ring, rotation in the plane). Along the
family the flow is alpha -> alpha + c t.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .flow import FlowConfig, flow, dflow, propagate
from .spectral import Field


class ManifoldError(RuntimeError):
    pass


class NewtonError(ManifoldError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class SingularJacobianError(ManifoldError):
    pass


class OutOfTubeError(ManifoldError):
    def __init__(self, distance, bound):
        super().__init__(f"state is {distance:.3g} from the manifold, beyond {bound:.3g}")
        self.distance = distance


@dataclass(frozen=True)
class Phase:
    value: float
    period: float

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")
        v = float(np.mod(self.value, self.period))
        object.__setattr__(self, "value", 0.0 if v >= self.period else v)

    def __add__(self, other):
        v = other.value if isinstance(other, Phase) else float(other)
        return Phase(self.value + v, self.period)

    def __sub__(self, other):
        v = other.value if isinstance(other, Phase) else float(other)
        return Phase(self.value - v, self.period)

    def signed(self):
        """Representative in [-P/2, P/2)."""
        return wrap(self.value, self.period)

    def distance(self, other):
        d = abs(self.value - other.value)
        return min(d, self.period - d)


def wrap(a, period):
    """Minimal signed representative of a phase difference."""
    w = (np.asarray(a) + period / 2) % period
    # a tiny negative argument can round up to exactly period
    return np.where(w >= period, 0.0, w) - period / 2


def model_hash(model):
    p = {k: float(v) for k, v in model.parameters.items()}
    meta = dict(kind=model.kind, params=p)
    b = model.basis
    if getattr(b, "grid", None) is not None:
        meta.update(n=b.grid.n_points, length=b.grid.length, boundary=b.grid.boundary, M=b.M)
    blob = json.dumps(meta, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class WaveFamily:
    """The circle of translates (or rotations) of a relative equilibrium."""

    def __init__(self, model, profile, speed, residual=0.0):
        b = model.basis
        if not getattr(b, "has_symmetry", False):
            raise ManifoldError("the basis carries no symmetry group")
        self.model = model
        self.basis = b
        self.profile = profile
        self.speed = float(speed)
        self.period = float(b.period)
        self.residual = float(residual)
        self._gen = b.generator(profile.spec)
        self._gen2 = b.generator(self._gen)
        self._norm_gen2 = float(b.inner(self._gen, self._gen))
        self.cache = {}

    @property
    def dprofile(self):
        """gamma-hat' (so that D gamma_alpha is the translate of -gamma-hat')."""
        return Field(self.basis, -self._gen)

    def gamma_spec(self, alpha):
        return self.basis.act(self.profile.spec, alpha)

    def dgamma_spec(self, alpha):
        return self.basis.act(self._gen, alpha)

    def d2gamma_spec(self, alpha):
        return self.basis.act(self._gen2, alpha)

    def tube_radius(self, fraction=0.1, n=64):
        al = np.linspace(0, self.period, n, endpoint=False)
        return fraction * float(np.min(self.basis.e_norm(self.gamma_spec(al))))

    def hash(self):
        return model_hash(self.model)


def gamma(family, alpha):
    a = alpha.value if isinstance(alpha, Phase) else alpha
    return Field(family.basis, family.gamma_spec(a))


def dgamma(family, alpha):
    a = alpha.value if isinstance(alpha, Phase) else alpha
    return Field(family.basis, family.dgamma_spec(a))


def _generator_matrix(basis):
    E = basis.from_coeffs(np.eye(basis.dim))
    return basis.to_coeffs(basis.generator(E)).T


def find_relative_equilibrium(model, guess, guess_speed=0.0, tol=1e-10, max_iter=50):
    """Newton on F(g, c) = V(g) - c G g with phase condition <g - guess, G guess> = 0."""
    b = model.basis
    G = _generator_matrix(b)
    u0 = guess.coeffs
    row = G @ u0
    u = u0.copy()
    c = float(guess_speed)
    res = np.inf
    for _ in range(max_iter):
        Y = b.from_coeffs(u)
        F = b.to_coeffs(model.V(Y)) - c * (G @ u)
        res = float(np.linalg.norm(F))
        if res <= tol:
            break
        J = np.zeros((b.dim + 1, b.dim + 1))
        J[: b.dim, : b.dim] = model.jacobian_matrix(Y) - c * G
        J[: b.dim, b.dim] = -(G @ u)
        J[b.dim, : b.dim] = row
        rhs = np.concatenate([F, [row @ (u - u0)]])
        if np.linalg.cond(J) > 1e14:
            raise SingularJacobianError("Newton Jacobian is singular (degenerate phase condition)")
        d = np.linalg.solve(J, -rhs)
        u = u + d[: b.dim]
        c = c + d[b.dim]
    else:
        raise NewtonError("Newton did not converge", res)
    return WaveFamily(model, Field.from_coeffs(b, u), c, res)


def relax(model, x0, t, dt=0.1, scheme="etd_rk4"):
    """Long deterministic relaxation, used to produce Newton guesses."""
    return Field(x0.basis, propagate(model, x0.spec, t, dt, scheme))


# --- projection onto the family ------------------------------------------

def project(family, Y, n_scan=64, max_newton=30, beta0=None):
    """Nearest phase beta for a batch of states; returns (beta, E-distance).

    With ``beta0`` (a nearby phase per state) the coarse scan is skipped.
    """
    b = family.basis
    Y = np.asarray(Y)
    P = family.period
    kap = b.kappa
    a = np.sum(b.weights * Y * np.conj(family.profile.spec), axis=-2)  # (..., M)
    if beta0 is None:
        al = np.arange(n_scan) * P / n_scan
        ph = np.exp(-1j * np.outer(kap, al))  # (M, n_scan)
        C = (a @ ph).real
        beta = al[np.argmax(C, axis=-1)]
    else:
        beta = np.broadcast_to(np.asarray(beta0, float), a.shape[:-1]).copy()
    for _ in range(max_newton):
        e = np.exp(-1j * kap * beta[..., None])
        d1 = np.sum((a * (-1j * kap) * e).real, axis=-1)
        d2 = np.sum((a * (-(kap**2)) * e).real, axis=-1)
        d2 = np.where(d2 < 0, d2, -np.abs(d2) - 1e-300)
        step = -d1 / d2
        step = np.clip(step, -P / n_scan, P / n_scan)
        beta = beta + step
        if np.all(np.abs(step) <= 1e-13 * P):
            break
    beta = np.mod(beta, P)
    dist = b.e_norm(Y - family.gamma_spec(beta))
    return beta, dist


def project_phase(family, y, delta_proj=None):
    beta, dist = project(family, y.spec)
    if delta_proj is not None and dist > delta_proj:
        raise OutOfTubeError(float(dist), delta_proj)
    return Phase(float(beta), family.period)


def distance_to_manifold(family, y):
    return float(project(family, y.spec)[1])


# --- checks ------------------------------------------------------------------

def audit_manifold(family, samples=16, times=(1.0, 5.0, 10.0), cfg=None, seed=0):
    """Sampled bi-Lipschitz ratios on the family, tangent transport and min ||D gamma||_E."""
    cfg = cfg or FlowConfig(dt=0.05)
    rng = np.random.default_rng(seed)
    b = family.basis
    P = family.period
    al = rng.uniform(0, P, samples)
    be = np.mod(al + rng.uniform(0.05, 0.5, samples) * P, P)
    X, Z = family.gamma_spec(al), family.gamma_spec(be)
    d0 = b.e_norm(X - Z)
    ratios = {}
    tangent_err = {}
    tangent_ratio = {}
    for t in times:
        Xt = propagate(family.model, X, t, cfg.dt, cfg.scheme)
        Zt = propagate(family.model, Z, t, cfg.dt, cfg.scheme)
        r = b.e_norm(Xt - Zt) / d0
        ratios[t] = (float(r.min()), float(r.max()))
        dg = family.dgamma_spec(al)
        _, Vt = _tangent(family.model, X, dg, t, cfg)
        target = family.dgamma_spec(al + family.speed * t)
        tangent_err[t] = float(np.max(b.e_norm(Vt - target)))
        tangent_ratio[t] = float(np.min(b.e_norm(Vt) / b.e_norm(dg)))
    phases = np.linspace(0, P, 64, endpoint=False)
    min_dg = float(np.min(b.e_norm(family.dgamma_spec(phases))))
    return dict(bilipschitz=ratios, tangent_error=tangent_err, tangent_ratio=tangent_ratio,
                min_dgamma=min_dg)


def _tangent(model, Y, V, t, cfg):
    from .flow import propagate_tangent
    return propagate_tangent(model, Y, V, t, cfg.dt, cfg.scheme, cfg.blowup)


def invariance_defect(family, t_max=10.0, cfg=None, n_check=20):
    """sup_t dist_E(phi_t(gamma_0), Gamma) over a uniform time mesh."""
    cfg = cfg or FlowConfig(dt=0.05)
    Y = family.profile.spec
    worst = 0.0
    dt_chunk = t_max / n_check
    for _ in range(n_check):
        Y = propagate(family.model, Y, dt_chunk, cfg.dt, cfg.scheme)
        worst = max(worst, float(project(family, Y)[1]))
    return worst


def basin_check(family, n=20, delta=0.05, t=20.0, cfg=None, seed=0):
    """E-distances to the family after flowing delta-perturbations for time t."""
    cfg = cfg or FlowConfig(dt=0.1)
    rng = np.random.default_rng(seed)
    b = family.basis
    c = rng.standard_normal((n, b.dim)) / (1.0 + np.tile(b.freq_of_coord, b.ncomp))
    V = b.from_coeffs(c)
    V = V / b.e_norm(V)[:, None, None]
    al = rng.uniform(0, family.period, n)
    Y = family.gamma_spec(al) + delta * V
    Yt = propagate(family.model, Y, t, cfg.dt, cfg.scheme, cfg.blowup)
    return project(family, Yt)[1]


# --- persistence -----------------------------------------------------------

FORMAT_TAG = "isophase-wavefamily 1"


def save_family(family, path):
    b = family.basis
    lines = [FORMAT_TAG,
             f"model_hash {family.hash()}",
             f"kind {family.model.kind}",
             f"speed {family.speed:.17g}",
             f"period {family.period:.17g}",
             f"residual {family.residual:.17g}",
             f"n_components {b.ncomp}",
             f"n_coeffs {b.dim}"]
    lines += [f"{v:.17g}" for v in family.profile.coeffs]
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def load_family(model, path):
    with open(path) as fh:
        rows = fh.read().split("\n")
    if rows[0].strip() != FORMAT_TAG:
        raise ManifoldError(f"{path}: not a wave family file")
    head = dict(r.split(" ", 1) for r in rows[1:8])
    if head["model_hash"] != model_hash(model):
        raise ManifoldError(f"{path}: model hash mismatch")
    n = int(head["n_coeffs"])
    coeffs = np.array([float(r) for r in rows[8: 8 + n]])
    prof = Field.from_coeffs(model.basis, coeffs)
    return WaveFamily(model, prof, float(head["speed"]), float(head["residual"]))


__all__ = [
    "Phase", "WaveFamily", "find_relative_equilibrium", "gamma", "dgamma", "project",
    "project_phase", "audit_manifold", "invariance_defect", "basin_check", "save_family",
    "load_family", "wrap", "relax", "ManifoldError", "NewtonError", "SingularJacobianError",
    "OutOfTubeError", "distance_to_manifold",
]
