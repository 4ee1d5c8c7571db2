import numpy as np
import pytest

from isophase.audit import FAIL, NA, PASS, AuditConfig, _fd_slope, run_audit
from isophase.config import bundled_config
from isophase.fixtures import flow_config, isochron_config

CLAUSES = ["A1a_smooth_nonlinearity", "A1b_semigroup_decay", "A1c_trace_and_gap", "noise_admissible",
           "noise_white_probe", "A2a_bilipschitz", "A2b_tangent_invertibility", "A2c_parametrization",
           "A3a_mild_solution", "A3b_regularity"]


def _request(name):
    n = bundled_config(name)["noise"]
    return dict(sigma=n["sigma"], law=n["law"], power=n["power"], values=n["values"],
                components=n["components"], n_noise_modes=n["n_noise_modes"])


def _audit(fix, name, request=None):
    model, family = fix
    cfg = bundled_config(name)
    return run_audit(model, family, request or _request(name), AuditConfig(), flow_config(cfg),
                     isochron_config(cfg), "h")


@pytest.fixture(scope="module")
def amari_report(amari):
    return _audit(amari, "amari_bump")


def test_every_clause_is_reported(amari_report):
    names = [c.name for c in amari_report.checks]
    assert names[: len(CLAUSES)] == CLAUSES
    assert len(set(names)) == len(names)


def test_neural_field_statuses(amari_report):
    assert amari_report.status("A1c_trace_and_gap") == NA
    wp = [c for c in amari_report.checks if c.name == "noise_white_probe"][0]
    assert wp.status == PASS and "trace class required" in wp.measured
    assert amari_report.passed


def test_report_text(amari_report):
    text = amari_report.to_text()
    assert "audit.overall = PASS" in text
    assert "check.A1c_trace_and_gap.status = NOT-APPLICABLE" in text
    assert "audit.config_hash = h" in text


def test_inadmissible_request_fails(amari):
    rep = _audit(amari, "amari_bump", dict(sigma=0.01, law="white"))
    assert rep.status("noise_admissible") == FAIL
    assert not rep.passed


def test_oracle_without_operator(oracle):
    rep = _audit(oracle, "oracle_sl")
    assert rep.status("A1b_semigroup_decay") == NA
    assert rep.status("A3b_regularity") == NA
    assert rep.passed


def test_fd_slope_orders(nagumo, amari):
    rng = np.random.default_rng(0)
    for model, family in (nagumo, amari):
        s1, s2 = _fd_slope(model, family.profile, rng)
        assert s1 == pytest.approx(2.0, abs=0.3)
        assert s2 == pytest.approx(2.0, abs=0.3)
