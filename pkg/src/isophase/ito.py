"""Term-by-term Ito formula for the isochronal phase along simulated paths.

For a path X with stored Brownian increments the ledger accumulates

    drift       sum_n  D pi(X_n) V(X_n) h
    trace       sum_n  (sigma^2 / 2) sum_k b_k^2 D^2 pi(X_n)[e_k, e_k] h
    martingale  sum_n  sigma sum_k b_k D pi(X_n) e_k  dW_n,k

and compares pi(X_n) - pi(X_0) with their sum. D pi comes from the discrete
adjoint; D^2 pi from central stencils, evaluated on a (possibly coarser)
trace mesh and held constant in between.
"""

from dataclasses import dataclass, field

import numpy as np

from .isochron import IsochronConfig, isochron_batch, second_derivative_diag
from .manifold import wrap
from .stochastic import SPDEStepper, _noise_rates, coarsen_increments, simulate_ensemble


class LedgerError(RuntimeError):
    pass


def unwrap_phase(pi, period):
    """Continuous representative of a phase sequence along the last axis."""
    d = wrap(np.diff(pi, axis=-1), period)
    return np.concatenate([pi[..., :1], pi[..., :1] + np.cumsum(d, axis=-1)], axis=-1)


def _pi_and_grad(family, X, cfg):
    """pi and its gradient for states X of shape (..., ncomp, M)."""
    shape = X.shape[:-2]
    flat = X.reshape((-1,) + X.shape[-2:])
    try:
        pi, g = isochron_batch(family, flat, cfg, need_grad=True)
    except Exception as exc:
        raise LedgerError(f"isochron failed on a path state: {exc}") from exc
    return pi.reshape(shape), g.reshape(X.shape)


def trace_integrand(family, X, noise, K=None, cfg=IsochronConfig()):
    """sum_{k<=K} b_k^2 D^2 pi(X)[e_k, e_k] for states X of shape (B, ncomp, M)."""
    b = family.basis
    K = noise.n_noise_modes if K is None else min(K, noise.n_noise_modes)
    dirs = noise.unit_directions(b)[:K]
    D2, _ = second_derivative_diag(family, X, dirs, cfg)
    return D2 @ (noise.multipliers[:K] ** 2)


@dataclass
class ItoLedger:
    times: np.ndarray
    pi_path: np.ndarray
    drift_term: np.ndarray
    trace_term: np.ndarray
    martingale_term: np.ndarray
    residual: np.ndarray
    period: float
    qv_martingale: float = 0.0
    qv_predicted: float = 0.0
    extras: dict = field(default_factory=dict, repr=False)

    def sup_residual(self):
        return float(np.max(np.abs(self.residual)))

    def rows(self):
        """CSV rows: time, pi, drift_cum, trace_cum, martingale_cum, residual."""
        return np.column_stack([self.times, np.mod(self.pi_path, self.period), self.drift_term,
                                self.trace_term, self.martingale_term, self.residual])


LEDGER_COLUMNS = ("time", "pi", "drift_cum", "trace_cum", "martingale_cum", "residual")


def ito_decompose(family, samples, noise, cfg=IsochronConfig(), K=None, trace_mesh=None):
    """Ledgers for one PathSample or a list of equally long samples.

    ``trace_mesh`` (a multiple of the sample step) sets where D^2 pi is
    evaluated; None evaluates it at every state. K truncates the trace sum.
    """
    single = not isinstance(samples, (list, tuple))
    if single:
        samples = [samples]
    n_t = {len(s.times) for s in samples}
    if len(n_t) != 1:
        raise LedgerError("samples must have equal length; truncate at the exit time first")
    model = family.model
    b = family.basis
    P = family.period
    h = samples[0].dt
    times = samples[0].times
    X = np.stack([s.states for s in samples])  # (B, n_t, ncomp, M)
    dW = np.stack([s.wiener_increments for s in samples])  # (B, n_t - 1, K_W)
    pi, g = _pi_and_grad(family, X, cfg)
    pi = unwrap_phase(pi, P)

    drift_rate = b.inner(g, model.V(X))  # (B, n_t)
    dirs = noise.directions(b)  # b_k e_k
    gB = _project_dirs(b, g, dirs)
    dmart = noise.sigma * np.sum(gB[:, :-1] * dW, axis=-1)

    r = 1 if trace_mesh is None else int(round(trace_mesh / h))
    if r < 1 or (trace_mesh is not None and abs(r * h - trace_mesh) > 1e-9 * trace_mesh):
        raise LedgerError("trace_mesh must be a positive multiple of the sample step")
    idx = np.arange(0, len(times) - 1, r)
    tr_vals = trace_integrand(family, X[:, idx].reshape((-1,) + X.shape[2:]), noise, K, cfg)
    tr_vals = tr_vals.reshape(len(samples), len(idx))
    tr_rate = np.repeat(tr_vals, r, axis=1)[:, : len(times) - 1]

    zero = np.zeros((len(samples), 1))
    drift = np.concatenate([zero, np.cumsum(drift_rate[:, :-1] * h, axis=1)], axis=1)
    trace = np.concatenate([zero, np.cumsum(0.5 * noise.sigma**2 * tr_rate * h, axis=1)], axis=1)
    mart = np.concatenate([zero, np.cumsum(dmart, axis=1)], axis=1)
    resid = (pi - pi[:, :1]) - drift - trace - mart
    qv = np.sum(dmart**2, axis=1)
    qv_pred = noise.sigma**2 * np.sum(np.sum(gB[:, :-1] ** 2, axis=-1) * h, axis=1)

    out = []
    for j in range(len(samples)):
        out.append(ItoLedger(times, pi[j], drift[j], trace[j], mart[j], resid[j], P,
                             float(qv[j]), float(qv_pred[j]),
                             dict(grad=g[j], grad_noise=gB[j], drift_rate=drift_rate[j], trace_rate=tr_rate[j])))
    return out[0] if single else out


def _unit_kick(basis, noise, xi):
    c = np.zeros(xi.shape[:-1] + (basis.dim,))
    c[..., noise.coords] = xi
    return basis.from_coeffs(c)


def _project_dirs(basis, g, dirs):
    """<g, d_k> for every direction d_k: shape (..., K)."""
    return basis.inner(g[..., None, :, :], dirs)


# --- convergence sweep -------------------------------------------------------

def residual_order_sweep(family, noise, x0, dt_list, n_paths, seed, t_max=1.0, cfg=IsochronConfig(),
                         K=None, trace_mesh=None, fine_tol=5e-3):
    """RMS over paths of sup_t |residual| for each dt, with coupled noise.

    All levels are driven by the same Brownian increments at the finest step.
    PASS iff the RMS residual decreases monotonically, the fitted log-log slope
    is at least 0.5 and the finest-level residual is at most ``fine_tol`` * P.
    """
    dt_list = [float(d) for d in dt_list]
    if sorted(dt_list, reverse=True) != dt_list:
        raise LedgerError("dt_list must be decreasing")
    fine = dt_list[-1]
    rows = []
    ledgers = {}
    for dt in dt_list:
        refine = int(round(dt / fine))
        if abs(refine * fine - dt) > 1e-9 * dt:
            raise LedgerError("every dt must be a multiple of the finest dt")
        paths = simulate_ensemble(family.model, family, noise, x0, t_max, dt, seed, n_paths, refine)
        if any(p.exit_flag != "none" for p in paths):
            raise LedgerError("a path left the domain during the sweep")
        led = ito_decompose(family, paths, noise, cfg, K, trace_mesh)
        sup = np.array([l.sup_residual() for l in led])
        qv = np.array([l.qv_martingale for l in led])
        qvp = np.array([l.qv_predicted for l in led])
        mart = np.array([l.martingale_term[-1] for l in led])
        se = float(mart.std(ddof=1) / np.sqrt(len(mart))) if len(mart) > 1 else float("nan")
        rows.append(dict(dt=dt, rms_sup_residual=float(np.sqrt(np.mean(sup**2))),
                         qv_realized=float(qv.mean()), qv_predicted=float(qvp.mean()),
                         martingale_mean=float(mart.mean()), martingale_se=se))
        ledgers[dt] = led
    res = np.array([r["rms_sup_residual"] for r in rows])
    dts = np.array(dt_list)
    slope = float(np.polyfit(np.log(dts), np.log(res), 1)[0]) if np.all(res > 0) else np.inf
    monotone = bool(np.all(np.diff(res) < 0))
    fine_ok = bool(res[-1] <= fine_tol * family.period)
    return dict(rows=rows, slope=slope, monotone=monotone, fine_ok=fine_ok,
                passed=bool(monotone and slope >= 0.5 and fine_ok), period=family.period, ledgers=ledgers)


# --- partition diagnostics -----------------------------------------------------

TERM_NAMES = ("I", "II", "III", "IV", "V", "VI")


@dataclass
class PartitionDiagnostics:
    """Running sums of the six Taylor terms on a partition of mesh h."""

    h: float
    times: np.ndarray
    terms: dict
    delta_pi: np.ndarray

    def totals(self):
        return {k: float(v[-1]) for k, v in self.terms.items()}

    def identity_defect(self):
        s = sum(self.terms[k] for k in TERM_NAMES)
        return float(np.max(np.abs(s - self.delta_pi)))


def _second_derivatives(family, X, dirs_list, cfg, rel_eps=10.0):
    """D^2 pi(X_i)[d_i, d_i] for several per-state direction arrays.

    Each entry of ``dirs_list`` has the shape of X. Directions are normalised
    and the stencil for state i shares one batch so all members share the
    stopping time.
    """
    b = family.basis
    P = family.period
    B = len(X)
    nd = len(dirs_list)
    norms = [np.sqrt(b.inner(d, d)) for d in dirs_list]
    unit = [d / np.where(n > 0, n, 1.0)[:, None, None] for d, n in zip(dirs_list, norms)]
    e = min(rel_eps * cfg.fd_eps, P / 100)
    out = np.empty((nd, B))
    per = max(1, cfg.batch // (2 * nd + 1))
    for i in range(0, B, per):
        Xc = X[i: i + per]
        Uc = np.stack([u[i: i + per] for u in unit], axis=1)  # (c, nd, ncomp, M)
        st = np.concatenate([Xc[:, None], Xc[:, None] + e * Uc, Xc[:, None] - e * Uc], axis=1)
        flat = st.reshape((-1,) + st.shape[2:])
        p = isochron_batch(family, flat, cfg).reshape(len(Xc), 2 * nd + 1)
        dp = wrap(p[:, 1: nd + 1] - p[:, :1], P)
        dm = wrap(p[:, nd + 1:] - p[:, :1], P)
        out[:, i: i + len(Xc)] = ((dp + dm) / e**2).T
    return [o * n**2 for o, n in zip(out, norms)]


def partition_terms(family, sample, noise, h, cfg=IsochronConfig(), ledger=None):
    """Terms I..VI of the Taylor bookkeeping of pi(X_t) - pi(X_0) on a mesh h.

    With Delta X_i = U1 + U2 + sigma U3 (semigroup part, nonlinear part and
    stochastic convolution over one cell), and all derivatives at the left
    state X_i:
        I, II, III   D pi [U1], D pi [U2], sigma D pi [U3]
        V            sigma D^2 pi [U1 + U2, U3]
        VI           (sigma^2 / 2) D^2 pi [U3, U3]
        IV           the exact remainder, which contains (1/2) D^2 pi [U1 + U2, U1 + U2]
                     and all higher-order Taylor terms.
    A ledger of the same sample supplies pi and D pi at the states.
    """
    dt = sample.dt
    r = int(round(h / dt))
    if r < 1 or abs(r * dt - h) > 1e-9 * h:
        raise LedgerError("mesh h must be a positive multiple of the sample step")
    model = family.model
    b = family.basis
    P = family.period
    n_cells = (len(sample.times) - 1) // r
    idx = np.arange(n_cells + 1) * r
    X = sample.states[idx]
    if ledger is None:
        pi, grad = _pi_and_grad(family, sample.states, cfg)
    else:
        pi, grad = ledger.pi_path, ledger.extras["grad"]
    pi_m = unwrap_phase(np.asarray(pi)[idx], P)
    g = np.asarray(grad)[idx]

    st = SPDEStepper(model, h)
    lam = _noise_rates(model, noise, st.linear)
    _, xi = coarsen_increments(sample.wiener_increments, sample.ou_increments, lam, dt, r)
    U3 = _unit_kick(b, noise, xi)
    Xl, Xr = X[:-1], X[1:]
    U1 = (st.E1 - 1) * Xl if st.linear else np.zeros_like(Xl)
    U2 = Xr - Xl - U1 - noise.sigma * U3
    gl = g[:-1]
    t1 = b.inner(gl, U1)
    t2 = b.inner(gl, U2)
    t3 = noise.sigma * b.inner(gl, U3)
    Dd = U1 + U2
    if noise.sigma > 0:
        dss, dpp, dmm = _second_derivatives(family, Xl, [U3, Dd + U3, Dd - U3], cfg)
        t5 = noise.sigma * (dpp - dmm) / 4
        t6 = 0.5 * noise.sigma**2 * dss
    else:
        t5 = t6 = np.zeros(n_cells)
    dpi = np.diff(pi_m)
    t4 = dpi - (t1 + t2 + t3 + t5 + t6)
    cum = lambda a: np.concatenate([[0.0], np.cumsum(a)])
    terms = dict(zip(TERM_NAMES, (cum(t1), cum(t2), cum(t3), cum(t4), cum(t5), cum(t6))))
    return PartitionDiagnostics(float(h), sample.times[idx], terms, pi_m - pi_m[0])


__all__ = ["ItoLedger", "LEDGER_COLUMNS", "ito_decompose", "residual_order_sweep", "trace_integrand",
           "PartitionDiagnostics", "partition_terms", "TERM_NAMES", "unwrap_phase", "LedgerError"]
