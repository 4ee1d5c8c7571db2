"""Numerical certification of the standing assumptions for a model and family.

Every clause maps to exactly one named check (or an explicit NOT-APPLICABLE
entry); supporting diagnostics are listed after the clauses. Individual
failures are recorded, never raised.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowConfig, FlowError, flow_trace_sums
from .isochron import IsochronConfig, IsochronError, pi_trace_sums
from .manifold import audit_manifold, basin_check, invariance_defect
from .models import lipschitz_audit
from .spectral import DegenerateSpectrumError, Field, gap_constant, trace_constant, trace_tail_bound
from .stochastic import NoiseError, make_noise, regularity_probe, spde_simulate

PASS, FAIL, NA = "PASS", "FAIL", "NOT-APPLICABLE"


@dataclass(frozen=True)
class AuditConfig:
    decay_slack: float = 1e-10
    trace_s: float = 0.5
    trace_r: float = 1.0
    cauchy_tol: float = 1e-8
    bilipschitz_max: float = 10.0
    tangent_tol: float = 1e-6
    invariance_tol: float = 1e-6
    basin_tol: float = 1e-4
    fd_slope_tol: float = 0.3
    n_tube: int = 4
    trace_K: int = 16
    probe_t: float = 1.0
    probe_dt: float = 0.01
    seed: int = 0


@dataclass
class Check:
    name: str
    clause: str
    statement: str
    measured: object
    threshold: object
    status: str


@dataclass
class AuditReport:
    checks: list
    config_hash: str
    timestamp: str
    model_kind: str
    values: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.status != FAIL for c in self.checks)

    def status(self, name):
        for c in self.checks:
            if c.name == name:
                return c.status
        raise KeyError(name)

    def to_text(self):
        lines = [f"audit.model_kind = {self.model_kind}", f"audit.config_hash = {self.config_hash}",
                 f"audit.timestamp = {self.timestamp}", f"audit.overall = {PASS if self.passed else FAIL}"]
        for c in self.checks:
            lines += [f"check.{c.name}.clause = {c.clause}", f"check.{c.name}.statement = {c.statement}",
                      f"check.{c.name}.measured = {_fmt(c.measured)}",
                      f"check.{c.name}.threshold = {_fmt(c.threshold)}", f"check.{c.name}.status = {c.status}"]
        for k, v in self.values.items():
            lines.append(f"value.{k} = {_fmt(v)}")
        lines += ["", self.table()]
        return "\n".join(lines) + "\n"

    def table(self):
        w = max(len(c.name) for c in self.checks)
        rows = [f"{'check'.ljust(w)}  {'clause'.ljust(8)}  status          measured"]
        for c in self.checks:
            rows.append(f"{c.name.ljust(w)}  {c.clause.ljust(8)}  {c.status.ljust(14)}  {_fmt(c.measured)}")
        return "\n".join(rows)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _fd_slope(model, x, rng, exact_tol=1e-9):
    """Observed order of the central-difference error of DN and D^2 N.

    A derivative whose relative error is below ``exact_tol`` at every step is
    reproduced exactly by the stencil (polynomial nonlinearity) and counts as order 2.
    """
    b = model.basis
    scale = 1 + np.tile(b.freq_of_coord, b.ncomp)
    v = b.from_coeffs(rng.standard_normal(b.dim) / scale)
    w = b.from_coeffs(rng.standard_normal(b.dim) / scale)
    v, w = v / b.e_norm(v), w / b.e_norm(w)
    y = x.spec
    eps = np.array([1e-2, 5e-3, 2.5e-3])
    e1, e2 = [], []
    for e in eps:
        d1 = (model.N(y + e * v) - model.N(y - e * v)) / (2 * e)
        e1.append(b.e_norm(d1 - model.dN(y, v)) / max(b.e_norm(model.dN(y, v)), 1e-300))
        d2 = (model.dN(y + e * w, v) - model.dN(y - e * w, v)) / (2 * e)
        ref = model.d2N(y, v, w)
        e2.append(b.e_norm(d2 - ref) / max(b.e_norm(ref), 1e-300))
    slopes = []
    for err in (e1, e2):
        if max(err) < exact_tol:
            slopes.append(2.0)
        else:
            slopes.append(float(np.polyfit(np.log(eps), np.log(err), 1)[0]))
    return slopes


def _tube_points(family, n, rng, scale=0.5):
    b = family.basis
    c = rng.standard_normal((n, b.dim)) / (1 + np.tile(b.freq_of_coord, b.ncomp))
    V = b.from_coeffs(c)
    V = V / b.e_norm(V)[:, None, None]
    r = scale * family.tube_radius() * rng.uniform(0.2, 1.0, n)
    return family.gamma_spec(rng.uniform(0, family.period, n)) + r[:, None, None] * V


def run_audit(model, family, noise_request, cfg=AuditConfig(), flow_cfg=FlowConfig(dt=0.05),
              iso_cfg=IsochronConfig(), config_hash="-"):
    """Run all checks. ``noise_request`` is a dict of make_noise keyword arguments."""
    rng = np.random.default_rng(cfg.seed)
    b = model.basis
    op = model.operator
    checks = []
    values = {}
    add = lambda *a: checks.append(Check(*a))

    # 1(a): smooth, locally Lipschitz nonlinearity
    kappa_f = lipschitz_audit(model, family.profile, family.tube_radius(), n_pairs=200, seed=cfg.seed)
    s1, s2 = _fd_slope(model, family.profile, rng)
    slope = s1 if abs(s1 - 2) > abs(s2 - 2) else s2
    ok = np.isfinite(kappa_f) and abs(slope - 2) <= cfg.fd_slope_tol
    values["lipschitz_constant"] = kappa_f
    add("A1a_smooth_nonlinearity", "1(a)", "N locally Lipschitz on the tube; DN, D2N consistent at order 2",
        f"kappa_F={kappa_f:.4g}, fd_slopes=({s1:.3f}, {s2:.3f})", "finite, slope 2+-0.3", PASS if ok else FAIL)

    # 1(b): exponential decay of the semigroup
    if op is None:
        add("A1b_semigroup_decay", "1(b)", "linear part generates a contracting semigroup", None, None, NA)
    else:
        omega = op.omega
        X = b.from_coeffs(rng.standard_normal((100, b.dim)))
        worst = 0.0
        for t in (0.01, 0.1, 1.0):
            Y = np.exp(-op.lam * t) * X
            ratio = np.sqrt(b.inner(Y, Y) / b.inner(X, X)) / np.exp(-omega * t)
            worst = max(worst, float(ratio.max()))
        values["omega"] = omega
        ok = omega > 0 and worst <= 1 + cfg.decay_slack
        add("A1b_semigroup_decay", "1(b)", "||Lambda_t x||_H <= exp(-omega t)||x||_H with omega > 0",
            f"omega={omega:.4g}, max ratio={worst:.12g}", f"<= 1+{cfg.decay_slack:g}", PASS if ok else FAIL)

    # 1(c): trace bound and eigenvalue gap
    if op is None:
        add("A1c_trace_and_gap", "1(c)", "sum_k ||Lambda_t e_k||_E bounded; gap condition", None, None, NA)
    else:
        try:
            c_lam = gap_constant(op)
            K_sr = trace_constant(op, cfg.trace_s, cfg.trace_r)
            tail = trace_tail_bound(op, cfg.trace_s)
            values.update(C_lambda=c_lam, K_sr=K_sr, trace_tail=tail)
            ok = np.isfinite(c_lam) and np.isfinite(K_sr) and tail <= cfg.cauchy_tol * max(K_sr, 1.0)
            add("A1c_trace_and_gap", "1(c)", "K_{s,r} finite with Cauchy partial sums; C_lambda finite",
                f"K_sr={K_sr:.6g}, tail={tail:.3g}, C_lambda={c_lam:.6g}", f"tail <= {cfg.cauchy_tol:g}",
                PASS if ok else FAIL)
        except DegenerateSpectrumError as exc:
            add("A1c_trace_and_gap", "1(c)",
                "spectrum is degenerate (constant-coefficient nonlocal model); the clause does not apply",
                str(exc), None, NA)

    # noise: trace class where required, and the white-noise probe
    try:
        noise = make_noise(model, **noise_request)
        values.update(noise_trace=noise.trace(), noise_m_b=noise.m_b)
        add("noise_admissible", "noise", "requested noise is admissible for the model",
            f"law={noise.law}, trace_class={noise.trace_class}", "accepted", PASS)
    except NoiseError as exc:
        noise = None
        add("noise_admissible", "noise", "requested noise is admissible for the model", str(exc), "accepted", FAIL)
    white = dict(noise_request, law="white")
    try:
        make_noise(model, **white)
        white_ok = model.kind != "neural_field"
        measured = "accepted"
    except NoiseError as exc:
        white_ok = model.kind == "neural_field"
        measured = f"rejected ({exc})"
    expect = "rejected (trace class required)" if model.kind == "neural_field" else "accepted"
    add("noise_white_probe", "noise", "white noise accepted iff the trace clause holds", measured, expect,
        PASS if white_ok else FAIL)

    # 2(a), 2(b), 2(c): geometry of the invariant circle
    rep = audit_manifold(family, samples=8, times=(1.0, 5.0, 10.0), cfg=flow_cfg, seed=cfg.seed)
    lo = min(v[0] for v in rep["bilipschitz"].values())
    hi = max(v[1] for v in rep["bilipschitz"].values())
    ok = lo > 1 / cfg.bilipschitz_max and hi < cfg.bilipschitz_max
    add("A2a_bilipschitz", "2(a)", "flow is bi-Lipschitz on Gamma for t in {1,5,10}",
        f"ratio in [{lo:.6g}, {hi:.6g}]", f"within [1/{cfg.bilipschitz_max:g}, {cfg.bilipschitz_max:g}]",
        PASS if ok else FAIL)
    terr = max(rep["tangent_error"].values())
    tmin = min(rep["tangent_ratio"].values())
    ok = terr <= cfg.tangent_tol and tmin > 0
    add("A2b_tangent_invertibility", "2(b)",
        "D phi_t D gamma_alpha = D gamma_(alpha+ct); invertibility audited along the tangent only",
        f"error={terr:.3g}, min ratio={tmin:.6g}", f"error <= {cfg.tangent_tol:g}", PASS if ok else FAIL)
    add("A2c_parametrization", "2(c)", "min_alpha ||D gamma_alpha||_E > 0", rep["min_dgamma"], "> 0",
        PASS if rep["min_dgamma"] > 0 else FAIL)

    # 3(a), 3(b): mild solution and regularity along a representative path
    if noise is None:
        add("A3a_mild_solution", "3(a)", "E-valued mild solution exists on [0, t]", None, None, FAIL)
        add("A3b_regularity", "3(b)", "sup_s h^-1/2 ||(Lambda_h - I)X_s||_E -> 0", None, None, FAIL)
    else:
        x0 = Field(b, family.gamma_spec(0.0))
        path = spde_simulate(model, family, noise, x0, cfg.probe_t, cfg.probe_dt, cfg.seed)
        ok = path.exit_flag == "none"
        add("A3a_mild_solution", "3(a)", "E-valued mild solution exists on [0, t]",
            f"exit_flag={path.exit_flag}", "none", PASS if ok else FAIL)
        if op is None:
            add("A3b_regularity", "3(b)", "sup_s h^-1/2 ||(Lambda_h - I)X_s||_E -> 0", None, None, NA)
        else:
            pr = regularity_probe(path, op, [0.1, 0.01, 1e-3, 1e-4, 1e-5])
            add("A3b_regularity", "3(b)", "sup_s h^-1/2 ||(Lambda_h - I)X_s||_E -> 0",
                f"sup={np.array2string(pr['sup'], precision=3)}, slope={pr['slope']:.3f}", "decreasing",
                PASS if pr["verified"] else FAIL)

    # supporting diagnostics
    inv = invariance_defect(family, 10.0, flow_cfg)
    add("invariance", "diag", "sup_{t<=10} dist_E(phi_t(gamma_0), Gamma)", inv, cfg.invariance_tol,
        PASS if inv <= cfg.invariance_tol else FAIL)
    bas = float(np.max(basin_check(family, 20, 0.05 if op is not None else 0.05, 20.0)))
    add("basin", "diag", "delta=0.05 perturbations return within 1e-4 by t=20", bas, cfg.basin_tol,
        PASS if bas <= cfg.basin_tol else FAIL)
    X = _tube_points(family, cfg.n_tube, rng)
    K = min(cfg.trace_K, b.dim)
    try:
        fs = np.array([[flow_trace_sums(model, Field(b, x), s, K, flow_cfg) for s in (0.1, 1.0)] for x in X])
        values["flow_trace_max"] = float(fs.max())
        ok = bool(np.all(np.isfinite(fs)))
        measured = float(fs.max())
    except FlowError as exc:
        ok, measured = False, str(exc)
    add("flow_trace_bounded", "diag", "flow trace partial sums finite on the tube", measured, "finite",
        PASS if ok else FAIL)
    try:
        ps = np.array([pi_trace_sums(family, Field(b, x), K, iso_cfg) for x in X[:2]])
        values["pi_trace_max"] = float(ps.max())
        ok = bool(np.all(np.isfinite(ps)))
        measured = float(ps.max())
    except (IsochronError, FlowError) as exc:
        ok, measured = False, str(exc)
    add("pi_trace_bounded", "diag", "isochron trace partial sums finite on the tube", measured, "finite",
        PASS if ok else FAIL)

    stamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    return AuditReport(checks, config_hash, stamp, model.kind, values)


__all__ = ["AuditConfig", "AuditReport", "Check", "run_audit", "PASS", "FAIL", "NA"]
