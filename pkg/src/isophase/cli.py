"""Command-line driver.

Every command takes a config (a YAML path or a bundled name) and writes a new
run directory ``<root>/<config name>/<command>-NNNN``. The directory is built
under a hidden temporary name and renamed into place when complete, so a run
folder is either absent or whole and is never modified afterwards. Each run
folder holds the materialized config and a manifest of SHA-256 hashes.

Exit codes: 0 success, 1 a check reported FAIL, 2 config or usage error,
3 numerical failure, 4 missing upstream artifact.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, bundled_names, config_hash, dump_config, resolve_config
from .fixtures import build_family, build_model, flow_config, isochron_config
from .flow import FlowError, flow_trace_terms
from .isochron import IsochronError, dpi_V_batch, pi_trace_terms
from .manifold import ManifoldError, load_family, model_hash, project, save_family
from .models import ModelError
from .spectral import Field, SpectralError
from .stochastic import NoiseError, exit_statistics, noise_from_config, simulate_ensemble, write_path_csv

ENV_ROOT = "ISOPHASE_OUTPUT"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3, 4

# fixed column orders of the CSV outputs
COLUMNS = {
    "profile": ("x", "component", "value"),
    "coeffs": ("index", "coeff"),
    "phase": ("pi", "projection_phase", "distance", "dpi_V", "speed"),
    "path": ("time", "phase", "tube_distance", "exit_flag"),
    "exits": ("path", "exit_flag", "exit_time"),
    "sweep": ("dt", "rms_sup_residual", "qv_realized", "qv_predicted", "martingale_mean", "martingale_se"),
    "ledger": ("time", "pi", "drift_cum", "trace_cum", "martingale_cum", "residual"),
    "flow_traces": ("point", "s", "mode", "eigenvalue", "dphi_norm", "d2phi_norm"),
    "pi_traces": ("point", "mode", "eigenvalue", "d2pi", "dpi"),
    "audit": ("name", "clause", "status", "measured", "threshold", "statement"),
}


class MissingArtifactError(RuntimeError):
    pass


# --- run directories -----------------------------------------------------

class RunDir:
    """Staging directory published atomically by ``commit``."""

    def __init__(self, root, cfg, command):
        self.parent = Path(root) / cfg["name"]
        self.parent.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{command}-", dir=self.parent))
        self.files = []
        self.formats = set(cfg["output"]["formats"])
        self.write_text("config.yaml", dump_config(cfg))

    def path(self, name):
        self.files.append(name)
        return self.tmp / name

    def write_text(self, name, text):
        self.path(name).write_text(text)

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self.write_text(name, buf.getvalue())

    def figure(self, name, fn, *args):
        if "png" in self.formats:
            fn(*args, self.path(name))

    def commit(self):
        manifest = {}
        for name in sorted(set(self.files)):
            manifest[name] = hashlib.sha256((self.tmp / name).read_bytes()).hexdigest()
        (self.tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        n = 1
        while True:
            final = self.parent / f"{self.command}-{n:04d}"
            try:
                os.rename(self.tmp, final)  # fails if the target exists: runs are append-only
                return final
            except OSError:
                if not final.exists():
                    raise
                n += 1


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def output_root(args, cfg):
    return args.out or os.environ.get(ENV_ROOT) or cfg["output"]["directory"] or "isophase-runs"


def latest_family(root, cfg, model):
    """Most recent find-wave family for this model, or MissingArtifactError."""
    parent = Path(root) / cfg["name"]
    want = model_hash(model)
    runs = sorted(parent.glob("find-wave-*"), reverse=True) if parent.is_dir() else []
    for run in runs:
        f = run / "family.txt"
        if f.is_file() and f"model_hash {want}" in f.read_text().split("\n", 3)[1]:
            return load_family(model, f), f
    raise MissingArtifactError(f"no wave family for model {want} under {parent}; run find-wave first")


# --- commands ------------------------------------------------------------

def cmd_find_wave(cfg, args, root):
    model = build_model(cfg)
    family = build_family(cfg, model)
    run = RunDir(root, cfg, "find-wave")
    save_family(family, run.path("family.txt"))
    b = family.basis
    run.write_csv("coeffs.csv", COLUMNS["coeffs"], enumerate(family.profile.coeffs))
    vals = b.to_values(family.profile.spec)
    rows = [(x, j, v) for j in range(len(vals)) for x, v in zip(b.x, vals[j])]
    run.write_csv("profile.csv", COLUMNS["profile"], rows)
    summary = dict(speed=family.speed, period=family.period, residual=family.residual,
                   tube_radius=family.tube_radius(), model_hash=family.hash())
    run.write_text("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    from .plots import profile_figure
    run.figure("profile.png", profile_figure, family)
    out = run.commit()
    print(f"speed = {family.speed:.10g}\nresidual = {family.residual:.3g}\nrun = {out}")
    return EXIT_OK


def read_state(model, path):
    """A state file: ``index,coeff`` rows or ``x,component,value`` collocation rows."""
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"state file {path} not found")
    with open(p) as fh:
        rows = list(csv.reader(fh))
    head, body = tuple(rows[0]), rows[1:]
    b = model.basis
    if head == COLUMNS["coeffs"]:
        c = np.array([float(r[1]) for r in body])
        if len(c) != b.dim:
            raise ConfigError(f"state has {len(c)} coefficients, model needs {b.dim}")
        return Field.from_coeffs(b, c)
    if head == COLUMNS["profile"]:
        vals = np.zeros((b.ncomp, len(b.x)))
        count = np.zeros(b.ncomp, int)
        for _, j, v in body:
            j = int(j)
            vals[j, count[j]] = float(v)
            count[j] += 1
        if np.any(count != len(b.x)):
            raise ConfigError("state file does not match the collocation grid")
        return Field.from_values(b, vals)
    raise ConfigError(f"unrecognised state header {head}")


def cmd_isochron(cfg, args, root):
    model = build_model(cfg)
    family, _ = latest_family(root, cfg, model)
    x = read_state(model, args.state)
    icfg = isochron_config(cfg)
    pi, _, dv = dpi_V_batch(family, x.spec[None], icfg)
    beta, dist = project(family, x.spec)
    run = RunDir(root, cfg, "isochron")
    run.write_csv("phase.csv", COLUMNS["phase"], [(pi[0], beta, dist, dv[0], family.speed)])
    out = run.commit()
    print(f"pi = {pi[0]:.12g}\nprojection_phase = {float(beta):.12g}\ndistance = {float(dist):.4g}\n"
          f"dpi_V = {dv[0]:.10g}\nrun = {out}")
    return EXIT_OK


def _simulate_chunk(job):
    cfg, family_path, first, n = job
    model = build_model(cfg)
    family = load_family(model, family_path)
    noise = noise_from_config(cfg, model)
    r = cfg["run"]
    x0 = Field(model.basis, family.gamma_spec(0.0))
    return simulate_ensemble(model, family, noise, x0, r["t_max"], r["dt"], r["seed"], n,
                             delta=family.tube_radius(), first_path=first, blowup=cfg["flow"]["blowup"])


def _workers(args, cfg):
    w = args.workers or cfg["run"]["workers"] or os.cpu_count() or 1
    return max(1, int(w))


def cmd_simulate(cfg, args, root):
    model = build_model(cfg)
    family, fpath = latest_family(root, cfg, model)
    noise_from_config(cfg, model)  # reject inadmissible noise before any work
    r = cfg["run"]
    n, w = r["n_paths"], min(_workers(args, cfg), r["n_paths"])
    bounds = np.linspace(0, n, w + 1).astype(int)
    jobs = [(cfg, str(fpath), int(a), int(bb - a)) for a, bb in zip(bounds[:-1], bounds[1:]) if bb > a]
    if len(jobs) == 1:
        chunks = [_simulate_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(len(jobs)) as ex:
            chunks = list(ex.map(_simulate_chunk, jobs))
    samples = [s for c in chunks for s in c]
    run = RunDir(root, cfg, "simulate")
    times, phases = [], []
    for s in samples:
        name = f"path_{s.path_index:04d}.csv"
        text = write_path_csv(s, family, run.path(name), meta=dict(config_hash=config_hash(cfg)))
        run.files.append(name + ".json")
        body = np.array([ln.split(",")[:2] for ln in text.strip().split("\n")[1:]], float)
        times.append(body[:, 0])
        phases.append(body[:, 1])
    run.write_csv("exits.csv", COLUMNS["exits"], [(s.path_index, s.exit_flag, s.exit_time if s.exit_time is not None else "")
                                                   for s in samples])
    if len(samples) >= 2:
        st = exit_statistics(samples, r["t_max"])
        run.write_text("exit_statistics.json", json.dumps(
            dict(mean=st["mean"], median=st["median"], fraction_exited=st["fraction_exited"]), indent=2) + "\n")
    from .plots import phase_paths_figure
    run.figure("phases.png", phase_paths_figure, times, phases, family.period)
    out = run.commit()
    print(f"paths = {len(samples)}\nexited = {sum(s.exit_flag != 'none' for s in samples)}\nrun = {out}")
    return EXIT_OK


def cmd_ito_check(cfg, args, root):
    from .ito import residual_order_sweep
    model = build_model(cfg)
    family, _ = latest_family(root, cfg, model)
    noise = noise_from_config(cfg, model)
    r = cfg["run"]
    x0 = Field(model.basis, family.gamma_spec(0.0))
    K = min(r["K"], noise.n_noise_modes)
    sw = residual_order_sweep(family, noise, x0, r["dt_list"], r["n_paths"], r["seed"], r["t_max"],
                              isochron_config(cfg), K=K, trace_mesh=r["trace_mesh"])
    run = RunDir(root, cfg, "ito-check")
    run.write_csv("sweep.csv", COLUMNS["sweep"], [[row[c] for c in COLUMNS["sweep"]] for row in sw["rows"]])
    fine = sw["ledgers"][r["dt_list"][-1]][0]
    run.write_csv("ledger_path0.csv", COLUMNS["ledger"], fine.rows())
    verdict = "PASS" if sw["passed"] else "FAIL"
    report = (f"slope = {sw['slope']:.4f}\nmonotone = {sw['monotone']}\n"
              f"finest_residual = {sw['rows'][-1]['rms_sup_residual']:.4g}\n"
              f"finest_bound = {5e-3 * family.period:.4g}\nresult = {verdict}\n")
    run.write_text("report.txt", report)
    from .plots import ledger_figure, sweep_figure
    run.figure("sweep.png", sweep_figure, sw["rows"], sw["slope"])
    run.figure("ledger_path0.png", ledger_figure, fine)
    out = run.commit()
    print(report + f"run = {out}")
    return EXIT_OK if sw["passed"] else EXIT_CHECK


def cmd_traces(cfg, args, root):
    from .audit import _tube_points
    model = build_model(cfg)
    family, _ = latest_family(root, cfg, model)
    b = model.basis
    fcfg, icfg = flow_config(cfg), isochron_config(cfg)
    K = min(max(cfg["run"]["K_list"]), b.dim)
    rng = np.random.default_rng(cfg["run"]["seed"])
    X = np.concatenate([family.profile.spec[None], _tube_points(family, 2, rng)])
    lam = model.operator.coord_eigenvalues() if model.operator is not None else np.zeros(b.dim)
    frows, prows = [], []
    first = None
    for i, x in enumerate(X):
        for s in (0.1, 0.5, 1.0):
            d1, d2, idx = flow_trace_terms(model, Field(b, x), s, K, fcfg)
            frows += [(i, s, int(k), lam[k], a, c) for k, a, c in zip(idx, d1, d2)]
            if i == 0 and s == 0.1:
                first = (lam[idx], d1)
        p2, p1, idx = pi_trace_terms(family, Field(b, x), K, icfg)
        prows += [(i, int(k), lam[k], a, c) for k, a, c in zip(idx, p2, p1)]
        if i == 0:
            first = first + (p2,)
    run = RunDir(root, cfg, "traces")
    run.write_csv("flow_traces.csv", COLUMNS["flow_traces"], frows)
    run.write_csv("pi_traces.csv", COLUMNS["pi_traces"], prows)
    from .plots import traces_figure
    run.figure("traces.png", traces_figure, first[0], first[1], first[2], 0.1)
    out = run.commit()
    print(f"points = {len(X)}\nK = {K}\nrun = {out}")
    return EXIT_OK


def cmd_audit(cfg, args, root):
    from .audit import AuditConfig, run_audit
    model = build_model(cfg)
    family, _ = latest_family(root, cfg, model)
    n = cfg["noise"]
    request = dict(sigma=n["sigma"], law=n["law"], power=n["power"], values=n["values"],
                   components=n["components"], n_noise_modes=n["n_noise_modes"])
    rep = run_audit(model, family, request, AuditConfig(seed=cfg["run"]["seed"]), flow_config(cfg),
                    isochron_config(cfg), config_hash(cfg))
    run = RunDir(root, cfg, "audit")
    run.write_text("audit.txt", rep.to_text())
    run.write_csv("audit.csv", COLUMNS["audit"],
                  [(c.name, c.clause, c.status, c.measured, c.threshold, c.statement) for c in rep.checks])
    out = run.commit()
    print(rep.table() + f"\noverall = {'PASS' if rep.passed else 'FAIL'}\nrun = {out}")
    return EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {
    "find-wave": cmd_find_wave,
    "isochron": cmd_isochron,
    "simulate": cmd_simulate,
    "ito-check": cmd_ito_check,
    "traces": cmd_traces,
    "audit": cmd_audit,
}


def build_parser():
    p = argparse.ArgumentParser(prog="isophase", description="Isochronal phase of stochastic waves and bumps.")
    p.add_argument("--out", help=f"output root (default: ${ENV_ROOT}, then output.directory, then ./isophase-runs)")
    p.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__name__[4:].replace("_", " "))
        sp.add_argument("config", help=f"YAML file or bundled name ({', '.join(bundled_names())})")
        if name == "isochron":
            sp.add_argument("state", help="state CSV (index,coeff or x,component,value)")
        sp.add_argument("--seed", type=int, help="override run.seed")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        root = output_root(args, cfg)
        return COMMANDS[args.command](cfg, args, root)
    except (ConfigError, ModelError, NoiseError, SpectralError) as exc:
        print(f"isophase: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"isophase: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ManifoldError, FlowError, IsochronError, FloatingPointError) as exc:
        print(f"isophase: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:  # ledger errors and other module failures
        print(f"isophase: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
