import sys

import numpy as np
import pytest

from isophase.config import bundled_config
from isophase.fixtures import fixture, isochron_config


@pytest.fixture(scope="session")
def nagumo():
    return fixture("nagumo_wave")


@pytest.fixture(scope="session")
def amari():
    return fixture("amari_bump")


@pytest.fixture(scope="session")
def oracle():
    return fixture("oracle_sl")


@pytest.fixture(scope="session")
def nagumo_icfg():
    return isochron_config(bundled_config("nagumo_wave"))


@pytest.fixture(scope="session")
def oracle_icfg():
    return isochron_config(bundled_config("oracle_sl"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_direction(basis, rng, n=None):
    """Random unit-E-norm directions with decaying coefficients."""
    shape = (basis.dim,) if n is None else (n, basis.dim)
    c = rng.standard_normal(shape) / (1 + np.tile(basis.freq_of_coord, basis.ncomp)) ** 2
    V = basis.from_coeffs(c)
    nrm = basis.e_norm(V)
    return V / (nrm[..., None, None] if n is not None else nrm)


def tube_points(family, n, rng, scale=0.5):
    b = family.basis
    V = smooth_direction(b, rng, n)
    r = scale * family.tube_radius() * rng.uniform(0.2, 1.0, n)
    return family.gamma_spec(rng.uniform(0, family.period, n)) + r[:, None, None] * V


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
