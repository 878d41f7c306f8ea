import sys
from pathlib import Path

import pytest

from nlqg.config import EXPERIMENTS, build_config, defaults_for, dump_defaults, parse_config, parse_override
from nlqg.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_defaults_round_trip_through_toml(experiment):
    text = dump_defaults(experiment)
    cfg = build_config(tomllib.loads(text), text=text)
    assert cfg.experiment == experiment
    assert cfg.values == defaults_for(experiment)


def test_missing_keys_take_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, 'experiment = "evolve"\n[dg]\nD = 0.02\n'))
    assert cfg["dg.D"] == 0.02
    assert cfg["grid.points"] == defaults_for("evolve")["grid.points"]
    assert cfg.source == tmp_path / "c.toml"


def test_misspelled_key_reports_name_and_line(tmp_path):
    path = _write(tmp_path, 'experiment = "evolve"\n\n[dg]\nhbar = 1.0\nDd = 0.1\n')
    with pytest.raises(ConfigError) as info:
        parse_config(path)
    assert info.value.key == "dg.Dd"
    assert info.value.line == 5
    assert "dg.Dd (line 5)" in str(info.value)


def test_out_of_range_value_reports_rule(tmp_path):
    path = _write(tmp_path, 'experiment = "evolve"\n[grid]\npoints = 4\n')
    with pytest.raises(ConfigError, match=r"grid.points \(line 3\): must be >= 8"):
        parse_config(path)


@pytest.mark.parametrize(
    "body,key",
    [
        ('[grid]\nlength = "long"\n', "grid.length"),
        ("[dg]\nsample_every = 1.5\n", "dg.sample_every"),
        ("[dg]\nallow_negative_D = 1\n", "dg.allow_negative_D"),
        ('[dg]\nobservables = ["q"]\n', "dg.observables"),
        ("[dg]\nD = -0.1\n", "dg.D"),
        ("[cosmo]\nrho = [1.0]\np = [0.0, 1.0]\n", "cosmo.p"),
    ],
)
def test_type_and_cross_key_errors(tmp_path, body, key):
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, 'experiment = "evolve"\n' + body))
    assert info.value.key == key


def test_negative_d_allowed_behind_flag(tmp_path):
    cfg = parse_config(_write(tmp_path, 'experiment = "evolve"\n[dg]\nD = -0.1\nallow_negative_D = true\n'))
    assert cfg["dg.D"] == -0.1


def test_experiment_mismatch_and_unknown(tmp_path):
    path = _write(tmp_path, 'experiment = "evolve"\n')
    with pytest.raises(ConfigError, match="requested"):
        parse_config(path, "energy-check")
    with pytest.raises(ConfigError, match="unknown experiment"):
        parse_config(_write(tmp_path, 'experiment = "warp"\n', "w.toml"))
    with pytest.raises(ConfigError, match="no experiment"):
        build_config({})


def test_malformed_and_missing_files(tmp_path):
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(_write(tmp_path, "experiment = \n"))
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "nope.toml")


def test_overrides_take_precedence(tmp_path):
    path = _write(tmp_path, 'experiment = "evolve"\n[dg]\nD = 0.02\n')
    cfg = parse_config(path, overrides=dict([parse_override("dg.D=0.05"), parse_override("dg.initial=plane_wave")]))
    assert cfg["dg.D"] == 0.05
    assert cfg["dg.initial"] == "plane_wave"
    with pytest.raises(ConfigError, match="override"):
        parse_config(path, overrides={"dg.nope": 1})


def test_parse_override_literals():
    assert parse_override("grid.points=64") == ("grid.points", 64)
    assert parse_override("cosmo.rho = [1.0, 2.0]") == ("cosmo.rho", [1.0, 2.0])
    assert parse_override("dg.initial=gaussian") == ("dg.initial", "gaussian")
    with pytest.raises(ConfigError):
        parse_override("grid.points")


def test_resolved_config_is_nested():
    cfg = build_config({}, "energy-check")
    resolved = cfg.resolved()
    assert resolved["experiment"] == "energy-check"
    assert resolved["cosmo"]["p"] == [0.0, -1.0, -1.2, 1.0 / 3.0, 2.0]
    assert cfg.section("grid") == {"dim": 1, "points": resolved["grid"]["points"], "length": resolved["grid"]["length"]}


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_checked_in_configs_are_valid(path):
    cfg = parse_config(path)
    assert cfg.experiment in EXPERIMENTS
