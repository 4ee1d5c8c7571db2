"""Build models, wave families and run settings from an experiment config."""

import numpy as np

from .config import bundled_config, config_hash
from .flow import FlowConfig
from .isochron import IsochronConfig
from .manifold import find_relative_equilibrium, relax
from .models import make_model
from .spectral import Field, Grid

_CACHE = {}


def build_model(cfg):
    m = cfg["model"]
    params = dict(m["parameters"])
    if m["kind"] == "oracle_oscillator":
        return make_model(m["kind"], **params)
    g = cfg["grid"]
    grid = Grid(g["n_points"], float(g["length"]), g["boundary"])
    return make_model(m["kind"], grid, g["n_modes"], **params)


def initial_guess(cfg, model):
    b = model.basis
    gs = cfg["manifold"]["guess"]
    amp = gs["amplitude"]
    if gs["shape"] == "unit_circle":
        return Field.from_coeffs(b, [float(amp), 0.0])
    x = b.x
    ell = b.grid.length
    c = ell / 2 if gs["center"] is None else gs["center"]
    w = gs["width"]
    if gs["shape"] == "plateau":
        s = gs["steepness"]
        u = 0.5 * amp * (np.tanh(s * (x - c + w / 2)) - np.tanh(s * (x - c - w / 2)))
    else:
        u = amp * np.exp(-((x - c) ** 2) / (2 * w**2))
    vals = np.zeros((b.ncomp, len(x)))
    vals[0] = u
    return Field.from_values(b, vals)


def build_family(cfg, model):
    m = cfg["manifold"]
    x0 = initial_guess(cfg, model)
    if m["relax_time"] > 0:
        x0 = relax(model, x0, m["relax_time"], m["relax_dt"])
    return find_relative_equilibrium(model, x0, m["guess_speed"], tol=m["newton_tol"])


def flow_config(cfg):
    f = cfg["flow"]
    return FlowConfig(dt=f["dt"], scheme=f["scheme"], t_max=f["t_max"], blowup=f["blowup"])


def isochron_config(cfg):
    c = cfg["isochron"]
    return IsochronConfig(tol_gamma=c["tol_gamma"], t_cap=c["t_cap"], fd_eps=c["fd_eps"],
                          dt=c["dt"], scheme=c["scheme"], batch=c["batch"],
                          blowup=cfg["flow"]["blowup"])


def fixture(cfg):
    """(model, family) for a config, memoized on the config hash."""
    if isinstance(cfg, str):
        cfg = bundled_config(cfg)
    key = config_hash(cfg)
    if key not in _CACHE:
        model = build_model(cfg)
        _CACHE[key] = (model, build_family(cfg, model))
    return _CACHE[key]


__all__ = ["build_model", "initial_guess", "build_family", "flow_config", "isochron_config", "fixture"]
