"""SPDE driver: truncated Wiener noise, exponential Euler with exact OU increments.

The scheme is

    X_{n+1} = e^{-hL} X_n + h phi_1(-hL) N(X_n) + sigma xi_n

where, per noise coordinate k, xi_n,k = b_k int e^{-lambda_k (t_{n+1} - s)} dW_k(s)
is sampled jointly with the Brownian increment dW_k so that the driving
increments are stored alongside the path. Paths at a coarse step H = r h are
built from the same fine increments, which couples the discretization levels.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .flow import _phi_functions
from .manifold import project
from .spectral import Field


class NoiseError(ValueError):
    pass


EXIT_FLAGS = ("none", "tube_exit", "basin_exit", "blow_up")


@dataclass
class NoiseModel:
    """Diagonal noise operator B e_k = b_k e_k on a subset of basis coordinates.

    ``coords`` are indices into the real orthonormal coordinates of the basis
    and ``multipliers`` the matching b_k.
    """

    sigma: float
    multipliers: np.ndarray
    coords: np.ndarray
    trace_class: bool
    law: str = "list"

    def __post_init__(self):
        self.multipliers = np.asarray(self.multipliers, float)
        self.coords = np.asarray(self.coords, int)
        if self.sigma < 0:
            raise NoiseError("sigma must be non-negative")
        if np.any(self.multipliers < 0) or not np.all(np.isfinite(self.multipliers)):
            raise NoiseError("multipliers must be finite and non-negative")
        if self.multipliers.shape != self.coords.shape:
            raise NoiseError("one multiplier per noise coordinate")

    @property
    def n_noise_modes(self):
        return len(self.coords)

    @property
    def m_b(self):
        return float(np.max(self.multipliers**2)) if len(self.multipliers) else 0.0

    def trace(self):
        return float(np.sum(self.multipliers**2))

    def directions(self, basis):
        """Spectral arrays of b_k e_k, shape (K_W, ncomp, M)."""
        E = np.zeros((len(self.coords), basis.dim))
        E[np.arange(len(self.coords)), self.coords] = self.multipliers
        return basis.from_coeffs(E)

    def unit_directions(self, basis):
        E = np.zeros((len(self.coords), basis.dim))
        E[np.arange(len(self.coords)), self.coords] = 1.0
        return basis.from_coeffs(E)


def make_noise(model, sigma, law="power", power=1.0, values=None, components=(0,),
               n_noise_modes=None):
    """Noise on the coordinates of ``components`` with |frequency| < n_noise_modes.

    law: 'white' (b_k = 1), 'power' (b_k = (1 + |k|)^-p) or 'list' (explicit b_k).
    Neural fields reject noise that is not trace class.
    """
    b = model.basis
    freq = np.asarray(b.freq_of_coord)
    per = len(freq)
    comps = list(components)
    if any(c < 0 or c >= b.ncomp for c in comps):
        raise NoiseError(f"noise components {comps} out of range for {b.ncomp} components")
    if n_noise_modes is None:
        local = np.arange(per)
    else:
        cap = int(n_noise_modes)
        if cap > b.M:
            raise NoiseError(f"n_noise_modes={cap} exceeds the {b.M} resolved modes")
        local = np.flatnonzero(np.abs(freq) < cap)
    coords = np.concatenate([c * per + local for c in comps])
    kf = np.tile(np.abs(freq[local]), len(comps))
    if law == "white":
        mult = np.ones(len(coords))
        trace_class = False
    elif law == "power":
        mult = (1.0 + kf) ** (-float(power))
        trace_class = 2 * float(power) > 1
    elif law == "list":
        if values is None or len(values) != len(coords):
            raise NoiseError(f"expected {len(coords)} multipliers, got {None if values is None else len(values)}")
        mult = np.asarray(values, float)
        trace_class = True
    else:
        raise NoiseError(f"unknown multiplier law {law!r}")
    if model.kind == "neural_field" and not trace_class:
        raise NoiseError("trace class required: neural field noise must have summable multipliers")
    return NoiseModel(float(sigma), mult, coords, trace_class, law)


def noise_from_config(cfg, model):
    n = cfg["noise"]
    return make_noise(model, n["sigma"], n["law"], n["power"], n["values"], n["components"],
                      n["n_noise_modes"])


# --- exact OU increments --------------------------------------------------

def _ou_coefficients(lam, h):
    """(m, s) with xi/b = (m/h) dW + s Z, matching var and cov with dW exactly."""
    lam = np.asarray(lam, float)
    small = np.abs(lam * h) < 1e-8
    ls = np.where(small, 1.0, lam)
    m = np.where(small, h - lam * h * h / 2, -np.expm1(-ls * h) / ls)
    v = np.where(small, h - lam * h * h, -np.expm1(-2 * ls * h) / (2 * ls))
    s = np.sqrt(np.maximum(v - m * m / h, 0.0))
    return m / h, s


def _noise_rates(model, noise, linear):
    if not linear or model.operator is None:
        return np.zeros(noise.n_noise_modes)
    return model.operator.coord_eigenvalues()[noise.coords]


def draw_increments(noise, lam, h, n_steps, seed, path=0, refine=1):
    """Joint (dW, xi) for ``n_steps`` steps of size h, built from ``refine`` substeps each.

    Returns arrays of shape (n_steps, K_W). The stream is keyed by (seed, path),
    so every path is reproducible on its own.
    """
    K = noise.n_noise_modes
    rng = np.random.Generator(np.random.Philox(key=[int(seed), int(path)]))
    hf = h / refine
    a, s = _ou_coefficients(lam, hf)
    Z = rng.standard_normal((n_steps, refine, 2, K))
    dW = np.sqrt(hf) * Z[:, :, 0]
    xi = noise.multipliers * (a * dW + s * Z[:, :, 1])
    decay = np.exp(-np.outer(hf * (refine - 1 - np.arange(refine)), lam))  # (refine, K)
    return dW.sum(axis=1), (decay * xi).sum(axis=1)


def coarsen_increments(dW, xi, lam, h, factor):
    """Exact composition of (dW, xi) over ``factor`` consecutive steps of size h."""
    n = dW.shape[-2] // factor
    dW = dW[..., : n * factor, :]
    xi = xi[..., : n * factor, :]
    shape = dW.shape[:-2] + (n, factor, dW.shape[-1])
    decay = np.exp(-np.outer(h * (factor - 1 - np.arange(factor)), lam))
    return dW.reshape(shape).sum(-2), (decay * xi.reshape(shape)).sum(-2)


# --- paths ----------------------------------------------------------------

@dataclass
class PathSample:
    """A simulated path. ``states`` holds raw spectral arrays of shape (n_t, ncomp, M)."""

    times: np.ndarray
    states: np.ndarray
    wiener_increments: np.ndarray
    seed: int
    basis: object = field(repr=False)
    exit_flag: str = "none"
    exit_time: float = None
    path_index: int = 0
    ou_increments: np.ndarray = field(default=None, repr=False)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def fields(self):
        return [Field(self.basis, y) for y in self.states]


class SPDEStepper:
    """Exponential Euler for the model with the diagonal operator as the linear part.

    Models without an operator (the planar oracle) are stepped with
    Euler-Maruyama on the full vector field.
    """

    def __init__(self, model, h):
        self.model = model
        self.h = float(h)
        self.linear = model.operator is not None
        if self.linear:
            A = -model.operator.lam
            ph = _phi_functions(A * h)
            self.E1 = ph["E1"]
            self.F1 = h * ph["phi1"]
            self.nl = model.N
        else:
            self.E1 = 1.0
            self.F1 = h
            self.nl = model.V

    def step(self, Y, kick):
        return self.E1 * Y + self.F1 * self.nl(Y) + kick


def _kick(basis, noise, xi):
    c = np.zeros(xi.shape[:-1] + (basis.dim,))
    c[..., noise.coords] = noise.sigma * xi
    return basis.from_coeffs(c)


def simulate_ensemble(model, family, noise, x0, t_max, dt, seed, n_paths=1, refine=1,
                      delta=None, first_path=0, blowup=1e3):
    """Simulate ``n_paths`` paths together; returns a list of PathSample.

    Increments are drawn at step dt/refine and composed exactly to dt, so
    ensembles at different dt with a common fine step see the same noise.
    A path that leaves the delta-tube (E-distance to the family) stops
    recording after the exit instant.
    """
    if not dt > 0:
        raise NoiseError("dt must be positive")
    b = model.basis
    n = int(round(t_max / dt))
    if n < 1 or abs(n * dt - t_max) > 1e-9 * t_max:
        raise NoiseError("t_max must be a positive multiple of dt")
    st = SPDEStepper(model, dt)
    lam = _noise_rates(model, noise, st.linear)
    dWs, xis = [], []
    for p in range(first_path, first_path + n_paths):
        dW, xi = draw_increments(noise, lam, dt, n, seed, p, refine)
        dWs.append(dW)
        xis.append(xi)
    dW = np.stack(dWs)
    xi = np.stack(xis)
    Y = np.broadcast_to(x0.spec, (n_paths,) + x0.spec.shape).copy()
    states = np.empty((n + 1,) + Y.shape, dtype=Y.dtype)
    states[0] = Y
    alive = np.ones(n_paths, bool)
    last = np.full(n_paths, n)
    flags = ["none"] * n_paths
    exit_t = [None] * n_paths
    for i in range(n):
        Y = st.step(Y, _kick(b, noise, xi[:, i]))
        states[i + 1] = Y
        nrm = b.e_norm(Y)
        bad = alive & (~np.isfinite(nrm) | (nrm > blowup))
        for j in np.flatnonzero(bad):
            flags[j], exit_t[j], last[j] = "blow_up", (i + 1) * dt, i
            alive[j] = False
        if delta is not None and family is not None:
            _, dist = project(family, Y)
            out = alive & (dist >= delta)
            for j in np.flatnonzero(out):
                flags[j], exit_t[j], last[j] = "tube_exit", (i + 1) * dt, i + 1
                alive[j] = False
        if not alive.any():
            break
    times = np.arange(n + 1) * dt
    out = []
    for j in range(n_paths):
        k = last[j]
        out.append(PathSample(times[: k + 1], states[: k + 1, j].copy(), dW[j, :k].copy(), int(seed), b,
                              flags[j], exit_t[j], first_path + j, xi[j, :k].copy()))
    return out


def spde_simulate(model, family, noise, x0, t_max, dt, seed, delta=None, refine=1, path=0):
    """Single path; see simulate_ensemble."""
    return simulate_ensemble(model, family, noise, x0, t_max, dt, seed, 1, refine, delta, path)[0]


# --- diagnostics ------------------------------------------------------------

def regularity_probe(sample, op, h_list):
    """sup_s h^{-1/2} ||(e^{-hL} - I) X_s||_E over the stored path, for each h."""
    h_list = np.asarray(sorted(h_list, reverse=True), float)
    b = sample.basis
    X = sample.states
    sup = np.array([float(np.max(b.e_norm((np.exp(-op.lam * h) - 1) * X))) / np.sqrt(h)
                    for h in h_list])
    ok = sup > 0
    slope = float(np.polyfit(np.log(h_list[ok]), np.log(sup[ok]), 1)[0]) if ok.sum() >= 2 else np.nan
    decreasing = bool(np.all(np.diff(sup) <= 1e-12 * max(sup.max(), 1e-300)))
    verified = decreasing and (sup[-1] <= 0.5 * sup[0] or sup[0] == 0)
    return dict(h=h_list, sup=sup, slope=slope, decreasing=decreasing, verified=bool(verified))


def exit_statistics(samples, t_max):
    """Empirical distribution of the tube exit time, censored at t_max."""
    if len(samples) < 2:
        raise NoiseError("need at least two samples")
    tau = np.array([s.exit_time if s.exit_flag == "tube_exit" else t_max for s in samples], float)
    exited = np.array([s.exit_flag == "tube_exit" for s in samples])
    grid = np.linspace(0, t_max, 51)
    survival = np.array([np.mean(tau > t) for t in grid[:-1]] + [np.mean(~exited)])
    return dict(mean=float(tau.mean()), median=float(np.median(tau)), fraction_exited=float(exited.mean()),
                survival_times=grid, survival=survival, tau=tau)


def write_path_csv(sample, family, path, meta=None):
    """CSV (time, phase, tube_distance, exit_flag) plus a JSON sidecar."""
    beta, dist = project(family, sample.states)
    flag = np.array(["none"] * len(beta), dtype=object)
    if sample.exit_flag != "none":
        flag[-1] = sample.exit_flag
    lines = ["time,phase,tube_distance,exit_flag"]
    lines += [f"{t:.10g},{p:.17g},{d:.17g},{f}" for t, p, d, f in zip(sample.times, beta, dist, flag)]
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    side = dict(seed=sample.seed, path_index=sample.path_index, exit_flag=sample.exit_flag,
                exit_time=sample.exit_time, dt=sample.dt, n_steps=len(sample.times) - 1)
    side.update(meta or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
    return text


__all__ = ["NoiseModel", "NoiseError", "make_noise", "noise_from_config", "PathSample", "SPDEStepper",
           "simulate_ensemble", "spde_simulate", "draw_increments", "coarsen_increments",
           "regularity_probe", "exit_statistics", "write_path_csv", "EXIT_FLAGS"]
