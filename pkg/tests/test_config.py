import json
import shutil
from dataclasses import replace
from importlib import resources
from pathlib import Path

import pytest

from dsomdp.config import (ConfigError, build, load_config, offline_checksum, parse_config,
                           preset, scenario_checksum)
from dsomdp.profiles import Prices

from conftest import SMALL_CONFIG

BUNDLED = Path(str(resources.files("dsomdp") / "data" / "profiles"))


def test_defaults_use_full_grids():
    cfg = parse_config("{}")
    assert cfg.grids.pv_bins == 11 and cfg.horizon == 96
    assert cfg.prices == Prices(200, 600, 200, 200)


@pytest.mark.parametrize("name", ["desk", "full"])
def test_presets_parse(name):
    assert preset(name).case == 1


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("huge")


@pytest.mark.parametrize(("text", "where"), [
    ('{\n  "horizon": 96,\n  "colour": 1\n}', "x.json:3:"),
    ('{\n  "grids": {\n    "pv_bins": 3,\n    "bins": 4\n  }\n}', "x.json:4:"),
    ('{\n  "gamma": 1.0,\n  "discount": "geometric"\n}', "x.json:3:"),
    ('{\n  "grids": {\n    "soc_step": 30\n  }\n}', "x.json:3:"),
    ('{\n  "case": 9\n}', "x.json:2:"),
    ('{\n  "horizon": 48\n}', "x.json:2:"),
    ('{\n  "gamma": 1.0,\n  oops\n}', "x.json:3:"),
])
def test_errors_name_the_line(text, where):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "x.json")
    assert str(e.value).startswith(where)


@pytest.mark.parametrize(("patch", "key"), [
    ({"gamma": 1.5}, "gamma"),
    ({"controller": "greedy"}, "controller"),
    ({"salvage": -1}, "salvage"),
    ({"initial_soc": [0.0, 0.0]}, "initial_soc"),
    ({"grids": {"q_levels_offline": [0.3]}}, "must include the offline"),
    ({"grids": {"bes_levels": [-10.0, 0.0]}}, "multiple of soc_step"),
    ({"grids": {"load_groups": ["none", "5-x"]}}, "load group"),
    ({"ders": []}, "DER"),
])
def test_validation(patch, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(json.dumps(patch))


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.json")


def test_relative_paths_follow_config_file(tmp_path):
    shutil.copytree(BUNDLED, tmp_path / "prof")
    (tmp_path / "c.json").write_text(json.dumps({"profiles": "prof"}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.profiles_dir() == tmp_path / "prof"


def test_build_small(small_scenario):
    sc = small_scenario
    assert sc.setup.states.size == 3 ** 2 * 5
    assert sc.day.horizon == 96
    assert sc.setup.initial_soc == (0.0,)


def test_case_does_not_change_scenario_checksum():
    a = parse_config(json.dumps(SMALL_CONFIG))
    for b in (replace(a, case=3), replace(a, controller="oracle"), replace(a, workers=4)):
        assert scenario_checksum(a) == scenario_checksum(b)


@pytest.mark.parametrize("patch", [
    {"prices": {"c_grid": 201}},
    {"gamma": 0.99},
    {"grids": dict(SMALL_CONFIG["grids"], soc_step=12.5,
                   bes_levels=[-25.0, -12.5, 0.0, 12.5, 25.0])},
    {"network": {"slack_voltage": 1.04}},
])
def test_checksum_tracks_inputs(patch):
    a = parse_config(json.dumps(SMALL_CONFIG))
    b = parse_config(json.dumps({**SMALL_CONFIG, **patch}))
    assert scenario_checksum(a) != scenario_checksum(b)


def test_checksum_tracks_profile_files(tmp_path):
    shutil.copytree(BUNDLED, tmp_path / "prof")
    cfg = parse_config(json.dumps({**SMALL_CONFIG, "profiles": "prof"}), base_dir=str(tmp_path))
    before = scenario_checksum(cfg)
    f = tmp_path / "prof" / "loads.csv"
    f.write_text(f.read_text().replace("\n0,", "\n0,0", 1))
    assert scenario_checksum(cfg) != before


def test_offline_checksum_groups_cases(small_scenario):
    sums = [offline_checksum(small_scenario.with_case(c)) for c in range(1, 6)]
    assert len(set(sums[:4])) == 1
    assert sums[4] != sums[0]


def test_bundled_network_override():
    sc = build(parse_config(json.dumps({**SMALL_CONFIG, "network": {"s_slack_max": 5.0}})))
    assert sc.system.network.s_slack_max == 5.0
    assert len(sc.system.network.buses) == 33
