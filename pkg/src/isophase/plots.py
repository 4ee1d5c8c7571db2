"""Matplotlib figures for the CLI outputs (Agg backend, written to files)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def profile_figure(family, path):
    b = family.basis
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if getattr(b, "grid", None) is None:
        th = np.linspace(0, family.period, 200)
        z = family.gamma_spec(th)[:, 0, 0]
        ax.plot(z.real, z.imag)
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        vals = b.to_values(family.profile.spec)
        for j, v in enumerate(vals):
            ax.plot(b.x, v, label=f"component {j}")
        ax.set_xlabel("x")
        ax.legend()
    ax.set_title(f"profile, c = {family.speed:.4g}")
    _save(fig, path)


def phase_paths_figure(times_list, phase_list, period, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for t, p in zip(times_list, phase_list):
        ax.plot(t, np.unwrap(np.asarray(p) * 2 * np.pi / period) * period / (2 * np.pi), lw=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("projection phase (unwrapped)")
    _save(fig, path)


def sweep_figure(rows, slope, path):
    dt = np.array([r["dt"] for r in rows])
    res = np.array([r["rms_sup_residual"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(dt, res, "o-", label=f"RMS sup residual (slope {slope:.2f})")
    ax.loglog(dt, res[0] * (dt / dt[0]) ** 0.5, "k--", lw=0.8, label="slope 1/2")
    ax.set_xlabel("dt")
    ax.set_ylabel("residual")
    ax.legend()
    _save(fig, path)


def ledger_figure(ledger, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ledger.times, ledger.pi_path - ledger.pi_path[0], label="pi - pi0")
    ax.plot(ledger.times, ledger.drift_term, label="drift")
    ax.plot(ledger.times, ledger.trace_term, label="trace")
    ax.plot(ledger.times, ledger.martingale_term, label="martingale")
    ax.plot(ledger.times, ledger.residual, label="residual")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    _save(fig, path)


def traces_figure(lam, flow_d1, pi_d2, s, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(lam, np.maximum(flow_d1, 1e-300), "o", ms=3, label=f"||Dphi_s e_k||, s={s:g}")
    ax.semilogy(lam, np.maximum(np.abs(pi_d2), 1e-300), "s", ms=3, label="|D2pi[e_k,e_k]|")
    ax.semilogy(lam, np.exp(-lam * s) * flow_d1[0] / np.exp(-lam[0] * s), "k--", lw=0.8, label="exp(-lambda s)")
    ax.set_xlabel("eigenvalue")
    ax.legend(fontsize=8)
    _save(fig, path)
