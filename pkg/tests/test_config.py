import json

import pytest

from uwbcalib.config import (ConfigError, RunConfig, config_from_dict, config_schema,
                             config_to_dict, load_config, preset_names, validate_config)


def test_defaults_round_trip():
    d = config_to_dict(RunConfig())
    assert config_to_dict(config_from_dict(d)) == d
    assert config_from_dict({}) == RunConfig()


def test_missing_keys_keep_defaults():
    cfg = config_from_dict({"scenario": {"seed": 7, "noise": {"pixel": 0.01}}})
    assert cfg.scenario.seed == 7 and cfg.scenario.noise.pixel == 0.01
    assert cfg.scenario.noise.range_std == RunConfig().scenario.noise.range_std


def test_integers_accepted_for_floats():
    cfg = config_from_dict({"scenario": {"duration": 30}})
    assert isinstance(cfg.scenario.duration, float)


@pytest.mark.parametrize("data, field", [
    ({"scenario": {"bogus": 1}}, "scenario"),
    ({"scenario": {"duration": "long"}}, "scenario.duration"),
    ({"mode": "ri+ukf"}, "mode"),
    ({"montecarlo": {"modes": ["nope"]}}, "montecarlo.modes.0"),
    ({"scenario": {"duration": -3.0}}, "scenario.duration"),
    ({"filter": {"gate": 1.5}}, "filter.gate"),
    ({"scenario": {"anchors": [{"beta": 0.0}]}}, "scenario.anchors.0.beta"),
    ({"scenario": {"trajectory": {"center": [0, 0]}}}, "scenario.trajectory.center"),
    ({"montecarlo": {"grid": [{"sigma_u": 0.0}]}}, "montecarlo.grid.0.sigma_u"),
])
def test_bad_fields_are_named(data, field):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert f"field {field}" in str(exc.value)


def test_validate_collects_every_problem():
    cfg = RunConfig()
    cfg.scenario.imu_rate = 1.0
    cfg.montecarlo.trials = 0
    with pytest.raises(ConfigError) as exc:
        validate_config(cfg)
    assert len(str(exc.value).splitlines()) == 2


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "mode": "ri+skf",\n  oops\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert "line 3" in str(exc.value)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_config("no-such-preset")


@pytest.mark.parametrize("name", ["fig3", "table1", "nominal", "collinear", "planar", "static",
                                  "four_anchor"])
def test_presets_load(name):
    assert name in preset_names()
    cfg = load_config(name)
    assert isinstance(cfg, RunConfig)


def test_preset_contents():
    f3 = load_config("fig3")
    assert f3.montecarlo.experiment == "init" and f3.montecarlo.trials == 200
    assert [c.sigma_r for c in f3.montecarlo.grid] == [0.01, 0.05, 0.1, 0.2, 0.4]
    t1 = load_config("table1")
    assert t1.montecarlo.trials == 100
    assert [(c.sigma_i, c.sigma_u) for c in t1.montecarlo.grid] == [(0.1, 1.0), (0.5, 0.9)]


def test_schema_is_json():
    s = config_schema()
    json.dumps(s)
    assert s["properties"]["mode"]["enum"][0] == "ri+skf"
    assert s["additionalProperties"] is False
