import pytest
import yaml

from isophase.config import (ConfigError, bundled_config, bundled_names, config_hash, dump_config,
                             load_config, resolve_config, validate)


def test_bundled_configs_validate():
    assert bundled_names() == ["amari_bump", "nagumo_wave", "oracle_sl"]
    for name in bundled_names():
        cfg = bundled_config(name)
        assert cfg["name"] == name
        assert validate(yaml.safe_load(dump_config(cfg))) == cfg


def test_unknown_bundled_name():
    with pytest.raises(ConfigError, match="available"):
        bundled_config("nope")


@pytest.mark.parametrize("raw", [
    [],
    {"model": {"kind": "kuramoto"}},
    {"model": {"kind": "neural_field"}, "grid": {"n_points": -4}},
    {"model": {"kind": "neural_field"}, "grid": {"boundary": "neumann"}},
    {"model": {"kind": "neural_field"}, "flow": {"scheme": "rk4"}},
    {"model": {"kind": "neural_field"}, "flow": {"dt": 0}},
    {"model": {"kind": "neural_field"}, "noise": {"law": "list"}},
    {"model": {"kind": "neural_field"}, "noise": {"sigma": -1}},
    {"model": {"kind": "neural_field"}, "run": {"dt_list": [0.01, 0.02]}},
    {"model": {"kind": "neural_field"}, "run": {"seed": -3}},
    {"model": {"kind": "neural_field"}, "run": {"dt_list": [0.02, 0.01], "trace_mesh": 0.05}},
    {"model": {"kind": "neural_field"}, "run": {"dt_list": [0.01, 0.004]}},
    {"model": {"kind": "neural_field"}, "run": {"n_paths": 2.5}},
    {"model": {"kind": "neural_field"}, "colour": "blue"},
    {"model": {"kind": "neural_field"}, "grid": 3},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        validate(raw)


def test_defaults_fill_in():
    cfg = validate({"model": {"kind": "oracle_oscillator"}})
    assert cfg["isochron"]["fd_eps"] == 1e-4
    assert cfg["run"]["dt_list"] == [0.01, 0.005, 0.0025]


def test_load_and_resolve(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(bundled_config("oracle_sl")))
    assert load_config(p) == resolve_config(str(p)) == resolve_config("oracle_sl")
    (tmp_path / "bad.yaml").write_text("model: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_hash_is_stable_and_sensitive():
    a = bundled_config("oracle_sl")
    b = bundled_config("oracle_sl")
    assert config_hash(a) == config_hash(b)
    b["noise"]["sigma"] = 0.2
    assert config_hash(a) != config_hash(b)
