import json
from dataclasses import replace
from importlib import resources
from pathlib import Path

import pytest

from dsomdp.config import build, parse_config, preset
from dsomdp.grid import ieee33

BUNDLED_HISTORY = Path(str(resources.files("dsomdp") / "data" / "profiles" / "history.csv"))

# a small scenario: full day and full feeder, coarse grids
SMALL_CONFIG = {
    "grids": {
        "pv_bins": 3,
        "soc_step": 25.0,
        "pv_levels": [0.0, 1.0],
        "q_levels_offline": [-1.0, 0.0, 1.0],
        "q_levels_online": [-1.0, -0.5, 0.0, 0.5, 1.0],
        "bes_levels": [-25.0, 0.0, 25.0],
        "load_groups": ["none", "2-33", "19-33"],
    },
    "workers": 1,
}

CRITERIA = {
    1: "power-flow oracle equivalence",
    2: "backward-induction exactness",
    3: "online-selection exactness",
    4: "oracle lower bound",
    5: "qualitative cost pattern",
    6: "constraint safety",
    7: "transition-matrix properties",
    8: "battery physics",
    9: "determinism",
    10: "desk-scale performance",
}

_outcomes: dict[int, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _outcomes.setdefault(mark.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        ok = all(_outcomes[n])
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {CRITERIA[n]}")


@pytest.fixture(scope="session")
def ieee():
    return ieee33()


@pytest.fixture(scope="session")
def small_config_text():
    return json.dumps(SMALL_CONFIG, indent=2)


@pytest.fixture(scope="session")
def small_scenario(small_config_text):
    return build(parse_config(small_config_text, "small.json"))


@pytest.fixture(scope="session")
def desk_config():
    return replace(preset("desk"), workers=1)


@pytest.fixture(scope="session")
def desk_scenario(desk_config):
    return build(desk_config)
