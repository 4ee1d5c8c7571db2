import json
import hashlib

import pytest
import yaml

from isophase import cli
from isophase.config import bundled_config, dump_config


@pytest.fixture
def small_oracle(tmp_path):
    cfg = bundled_config("oracle_sl")
    cfg["run"].update(n_paths=4, t_max=0.2, dt_list=[0.02, 0.01], K_list=[2], trace_mesh=0.04)
    p = tmp_path / "oracle.yaml"
    p.write_text(dump_config(cfg))
    return str(p)


def _run(root, *argv):
    return cli.main(["--out", str(root), "--workers", "1", *argv])


def test_missing_family_and_bad_config(tmp_path, small_oracle):
    root = tmp_path / "runs"
    assert _run(root, "simulate", small_oracle) == cli.EXIT_MISSING
    assert _run(root, "simulate", "no_such_config") == cli.EXIT_CONFIG
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump({"model": {"kind": "oracle_oscillator"}, "flow": {"dt": -1}}))
    assert _run(root, "find-wave", str(tmp_path / "bad.yaml")) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        _run(root, "frobnicate", small_oracle)
    assert info.value.code == 2


def test_pipeline_is_append_only_and_reproducible(tmp_path, small_oracle):
    root = tmp_path / "runs"
    assert _run(root, "find-wave", small_oracle) == cli.EXIT_OK
    assert _run(root, "simulate", small_oracle) == cli.EXIT_OK
    assert _run(root, "simulate", small_oracle) == cli.EXIT_OK
    base = root / "oracle_sl"
    assert sorted(p.name for p in base.iterdir()) == ["find-wave-0001", "simulate-0001", "simulate-0002"]
    a, b = base / "simulate-0001", base / "simulate-0002"
    for name in ("path_0000.csv", "exits.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert "config.yaml" in manifest and "phases.png" in manifest
    for name, digest in manifest.items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest
    assert (a / "path_0000.csv").read_text().split("\n")[0] == ",".join(cli.COLUMNS["path"])
    assert (a / "exits.csv").read_text().split("\n")[0] == ",".join(cli.COLUMNS["exits"])


def test_isochron_command(tmp_path, small_oracle):
    root = tmp_path / "runs"
    assert _run(root, "find-wave", small_oracle) == cli.EXIT_OK
    state = tmp_path / "state.csv"
    state.write_text("index,coeff\n0,2.0\n1,0.0\n")
    assert _run(root, "isochron", small_oracle, str(state)) == cli.EXIT_OK
    rows = (root / "oracle_sl" / "isochron-0001" / "phase.csv").read_text().strip().split("\n")
    assert rows[0] == ",".join(cli.COLUMNS["phase"])
    pi = float(rows[1].split(",")[0])
    # theta - kappa ln r at (2, 0)
    assert abs(pi - (2 * 3.141592653589793 - 0.5 * 0.6931471805599453)) < 1e-6
    bad = tmp_path / "bad_state.csv"
    bad.write_text("index,coeff\n0,2.0\n")
    assert _run(root, "isochron", small_oracle, str(bad)) == cli.EXIT_CONFIG


def test_env_root_and_formats(tmp_path, monkeypatch):
    cfg = bundled_config("oracle_sl")
    cfg["output"]["formats"] = ["csv"]
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    monkeypatch.setenv(cli.ENV_ROOT, str(tmp_path / "env"))
    assert cli.main(["find-wave", str(p)]) == cli.EXIT_OK
    run = tmp_path / "env" / "oracle_sl" / "find-wave-0001"
    assert (run / "profile.csv").is_file() and not (run / "profile.png").exists()
    assert not any(q.name.startswith(".") for q in run.parent.iterdir())


def test_traces_and_ito_check(tmp_path, small_oracle):
    root = tmp_path / "runs"
    assert _run(root, "find-wave", small_oracle) == cli.EXIT_OK
    assert _run(root, "traces", small_oracle) == cli.EXIT_OK
    run = root / "oracle_sl" / "traces-0001"
    for key in ("flow_traces", "pi_traces"):
        assert (run / f"{key}.csv").read_text().split("\n")[0] == ",".join(cli.COLUMNS[key])
    code = _run(root, "ito-check", small_oracle)
    assert code in (cli.EXIT_OK, cli.EXIT_CHECK)
    report = (root / "oracle_sl" / "ito-check-0001" / "report.txt").read_text()
    assert ("result = PASS" in report) == (code == cli.EXIT_OK)
