"""Experiment configuration: schema, defaults and YAML round trip.

A config has the blocks model, grid, manifold, flow, isochron, noise, run and
output. Unknown keys are rejected; defaults are filled in so that the
materialized copy written next to every output is self-describing.
"""

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "name": "experiment",
    "model": {"kind": None, "parameters": {}},
    "grid": {"n_points": 64, "length": 16.0, "boundary": "periodic", "n_modes": 32},
    "manifold": {
        "guess": {"shape": "plateau", "center": None, "width": 0.3, "steepness": 0.7, "amplitude": 1.0},
        "guess_speed": 0.0,
        "relax_time": 50.0,
        "relax_dt": 0.25,
        "newton_tol": 1e-10,
        "basin_delta": 0.05,
        "basin_time": 20.0,
    },
    "flow": {"dt": 0.01, "scheme": "etd_rk4", "t_max": 100.0, "blowup": 1000.0},
    "isochron": {"dt": 0.25, "scheme": "etd_rk4", "tol_gamma": None, "t_cap": None,
                 "fd_eps": 1e-4, "batch": 256},
    "noise": {"sigma": 0.01, "law": "power", "power": 1.0, "values": None,
              "components": [0], "n_noise_modes": None},
    "run": {"dt": 0.01, "t_max": 1.0, "n_paths": 16, "seed": 20240611,
            "dt_list": [0.01, 0.005, 0.0025], "K": 16, "K_list": [32, 64],
            "trace_mesh": 0.05, "n_states": 20, "workers": None},
    "output": {"directory": None, "formats": ["csv", "png"]},
}

KINDS = ("reaction_diffusion", "neural_field", "oracle_oscillator")
LAWS = ("white", "power", "list")
SCHEMES = ("exponential_euler", "etd_rk2", "etd_rk4")
SHAPES = ("plateau", "gaussian", "unit_circle")


def _merge(base, over, path):
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(base[k], dict) and k != "parameters":
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _positive(cfg, block, *keys, allow_none=False):
    for k in keys:
        v = cfg[block][k]
        if v is None and allow_none:
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"{block}.{k} must be a positive number, got {v!r}")


def validate(raw):
    """Return the materialized config (a new dict) or raise ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, raw, "")
    kind = cfg["model"]["kind"]
    if kind not in KINDS:
        raise ConfigError(f"model.kind must be one of {KINDS}, got {kind!r}")
    if not isinstance(cfg["model"]["parameters"], dict):
        raise ConfigError("model.parameters must be a mapping")
    g = cfg["grid"]
    if g["boundary"] not in ("periodic", "dirichlet"):
        raise ConfigError("grid.boundary must be periodic or dirichlet")
    for k in ("n_points", "n_modes"):
        if not isinstance(g[k], int) or g[k] <= 0:
            raise ConfigError(f"grid.{k} must be a positive integer")
    _positive(cfg, "grid", "length")
    for block in ("flow", "isochron"):
        if cfg[block]["scheme"] not in SCHEMES:
            raise ConfigError(f"{block}.scheme must be one of {SCHEMES}")
        _positive(cfg, block, "dt")
    _positive(cfg, "isochron", "tol_gamma", "t_cap", allow_none=True)
    _positive(cfg, "isochron", "fd_eps")
    _positive(cfg, "flow", "t_max", "blowup")
    m = cfg["manifold"]
    if m["guess"]["shape"] not in SHAPES:
        raise ConfigError(f"manifold.guess.shape must be one of {SHAPES}")
    _positive(cfg, "manifold", "relax_dt", "newton_tol", "basin_delta", "basin_time")
    n = cfg["noise"]
    if n["law"] not in LAWS:
        raise ConfigError(f"noise.law must be one of {LAWS}")
    if not isinstance(n["sigma"], (int, float)) or n["sigma"] < 0:
        raise ConfigError("noise.sigma must be non-negative")
    if n["law"] == "list" and not isinstance(n["values"], list):
        raise ConfigError("noise.values must be a list when law is 'list'")
    r = cfg["run"]
    _positive(cfg, "run", "dt", "t_max", "trace_mesh")
    for k in ("n_paths", "K", "n_states"):
        if not isinstance(r[k], int) or r[k] <= 0:
            raise ConfigError(f"run.{k} must be a positive integer")
    if not isinstance(r["seed"], int) or r["seed"] < 0:
        raise ConfigError("run.seed must be a non-negative integer")
    dts = r["dt_list"]
    if not dts or any(not (d > 0) for d in dts) or sorted(dts, reverse=True) != list(dts):
        raise ConfigError("run.dt_list must be positive and decreasing")
    for d in dts:
        if abs(d / dts[-1] - round(d / dts[-1])) > 1e-9 or abs(
                r["trace_mesh"] / d - round(r["trace_mesh"] / d)) > 1e-9 or r["trace_mesh"] < d:
            raise ConfigError("every run.dt_list entry must be a multiple of the finest and divide run.trace_mesh")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return validate(raw)


def bundled_names():
    root = resources.files("isophase") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_config(name):
    p = resources.files("isophase") / "configs" / f"{name}.yaml"
    if not p.is_file():
        raise ConfigError(f"no bundled config {name!r} (available: {', '.join(bundled_names())})")
    return validate(yaml.safe_load(p.read_text()))


def resolve_config(ref):
    """A path to a YAML file or the name of a bundled config."""
    if Path(ref).is_file():
        return load_config(ref)
    return bundled_config(ref)


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=False)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


__all__ = ["ConfigError", "DEFAULTS", "validate", "load_config", "bundled_config",
           "bundled_names", "resolve_config", "dump_config", "config_hash"]
