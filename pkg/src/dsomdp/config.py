"""Scenario configuration: one JSON file describes a complete run.

Every key is optional; missing keys take the defaults below. Relative paths
are resolved against the directory of the config file. ``null`` for
``network``/``profiles``/``history`` selects the bundled data.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .der import BessUnit, DerUnit
from .grid import ieee33, load_network
from .mdp.costs import BIG_M, System
from .mdp.solver import OfflineProblem
from .mdp.spaces import ActionSpace, LoadGroup, FULL_LOAD_GROUPS, StateSpace, _grid
from .profiles import (CaseParams, DayProfiles, Prices, TransitionMatrix, apply_case,
                       error_bins, estimate_transition_matrix, load_day_profiles, load_history)
from .simulate import Setup


class ConfigError(ValueError):
    """Invalid configuration, with the offending line when known."""


def _default_ders() -> list[dict]:
    return [
        {"bus": 3, "pv_rating": 3.0, "inverter_s_max": 3.0, "inverter_efficiency": 0.9,
         "bess": {"capacity": 2.85, "e_min": 0.0, "converter_p_max": 3.0,
                  "converter_efficiency": 0.95}},
        {"bus": 30, "pv_rating": 1.5, "inverter_s_max": 1.5, "inverter_efficiency": 0.9,
         "bess": None},
    ]


@dataclass(frozen=True)
class Grids:
    pv_bins: int = 11
    soc_step: float = 6.25
    pv_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    q_levels_offline: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    q_levels_online: tuple[float, ...] = (-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)
    bes_levels: tuple[float, ...] = _grid(-25.0, 25.0, 6.25)
    load_groups: tuple[str, ...] = FULL_LOAD_GROUPS


@dataclass(frozen=True)
class ScenarioConfig:
    network: dict | None = None  # {"buses": path, "lines": path, overrides...}
    ders: tuple = field(default_factory=lambda: tuple(_default_ders()))
    grids: Grids = Grids()
    prices: Prices = Prices()
    horizon: int = 96
    dt: float = 0.25
    gamma: float = 1.0
    big_m: float = BIG_M
    discount: str = "power"
    tso_reward_mode: str = "margin"
    allow_grid_charging: bool = True
    initial_soc: tuple[float, ...] | None = None
    salvage: float = 0.0  # $/MWh credited for energy left in storage at the end
    case: int = 1
    case_params: CaseParams = CaseParams()
    profiles: str | None = None
    history: str | None = None
    matrices: tuple[str, ...] | None = None
    controller: str = "mdp"
    deterministic_plan_online: bool = True
    workers: int = 0  # 0: available parallelism
    seed: int = 0
    base_dir: str = field(default=".", compare=False)

    # -- paths -------------------------------------------------------------

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def profiles_dir(self) -> Path:
        if self.profiles is None:
            return Path(str(resources.files("dsomdp") / "data" / "profiles"))
        return self.path(self.profiles)

    def history_path(self) -> Path:
        if self.history is None:
            return self.profiles_dir() / "history.csv"
        return self.path(self.history)

    def n_workers(self) -> int:
        if self.workers:
            return self.workers
        if hasattr(os, "sched_getaffinity"):
            return len(os.sched_getaffinity(0))
        return os.cpu_count() or 1

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def canonical(self, exclude=()) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return json.dumps(d, sort_keys=True, default=list)


# ---------------------------------------------------------------------------
# parsing with line numbers

_SECTIONS = {"grids": Grids, "prices": Prices, "case_params": CaseParams}
_TOP = {f.name for f in fields(ScenarioConfig)} - {"base_dir"}


def _line_of(text: str, key: str, after: int = 0) -> int:
    lines = text.splitlines()
    token = f'"{key}"'
    for n in range(after, len(lines)):
        if token in lines[n]:
            return n + 1
    return after + 1 if after else 1


def _fail(src: str, text: str, key: str, msg: str, parent: str | None = None) -> ConfigError:
    after = _line_of(text, parent) - 1 if parent else 0
    return ConfigError(f"{src}:{_line_of(text, key, after)}: {msg}")


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, list) else v


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    kw: dict[str, Any] = {}
    for key, val in raw.items():
        if key not in _TOP:
            raise _fail(source, text, key, f"unknown key {key!r}")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(val, dict):
                raise _fail(source, text, key, f"{key} must be an object")
            names = {f.name for f in fields(cls)}
            for k in val:
                if k not in names:
                    raise _fail(source, text, k, f"unknown key {key}.{k}", key)
            try:
                kw[key] = cls(**{k: _tuple(v) for k, v in val.items()})
            except (TypeError, ValueError) as e:
                raise _fail(source, text, key, f"{key}: {e}") from None
        else:
            kw[key] = _tuple(val) if key != "network" else val
    if "ders" in kw:
        kw["ders"] = tuple(dict(d) if isinstance(d, dict) else d for d in kw["ders"])
    try:
        cfg = ScenarioConfig(base_dir=base_dir, **kw)
    except TypeError as e:
        raise ConfigError(f"{source}:1: {e}") from None
    for key, msg in validate(cfg):
        raise _fail(source, text, key, msg)
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p), str(p.parent))


def preset(name: str) -> ScenarioConfig:
    """Bundled config (``desk`` or ``full``)."""
    res = resources.files("dsomdp") / "data" / "configs" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return parse_config(res.read_text(encoding="utf-8"), f"preset:{name}", ".")


def validate(cfg: ScenarioConfig) -> list[tuple[str, str]]:
    """(key, message) pairs; empty when the config is usable."""
    errs = []
    g = cfg.grids
    if not math.isclose(cfg.horizon * cfg.dt, 24.0):
        errs.append(("horizon", "horizon x dt must cover 24 h"))
    if not isinstance(g.pv_bins, int) or g.pv_bins < 2:
        errs.append(("pv_bins", "pv_bins must be an integer >= 2"))
    if g.soc_step <= 0 or not math.isclose(100.0 / g.soc_step, round(100.0 / g.soc_step)):
        errs.append(("soc_step", "soc_step must divide 100"))
    elif any(not math.isclose(b / g.soc_step, round(b / g.soc_step), abs_tol=1e-9)
             for b in g.bes_levels):
        errs.append(("bes_levels", "every battery level must be a multiple of soc_step"))
    if not set(g.q_levels_offline) <= set(g.q_levels_online):
        errs.append(("q_levels_online", "online reactive levels must include the offline ones"))
    for spec in g.load_groups:
        try:
            LoadGroup.parse(spec)
        except ValueError:
            errs.append(("load_groups", f"bad load group {spec!r}"))
    if not 0 <= cfg.gamma <= 1:
        errs.append(("gamma", "gamma must lie in [0, 1]"))
    if cfg.discount not in ("power", "step"):
        errs.append(("discount", "discount must be 'power' or 'step'"))
    if cfg.tso_reward_mode not in ("margin", "flat"):
        errs.append(("tso_reward_mode", "tso_reward_mode must be 'margin' or 'flat'"))
    if cfg.case not in range(1, 6):
        errs.append(("case", "case must be 1..5"))
    if cfg.controller not in ("mdp", "deterministic", "oracle"):
        errs.append(("controller", "controller must be mdp, deterministic or oracle"))
    if cfg.salvage < 0:
        errs.append(("salvage", "salvage must be non-negative"))
    if cfg.big_m <= 0:
        errs.append(("big_m", "big_m must be positive"))
    if not cfg.ders:
        errs.append(("ders", "at least one DER is required"))
    for d in cfg.ders:
        if not isinstance(d, dict) or "bus" not in d or "pv_rating" not in d:
            errs.append(("ders", "each DER needs at least bus and pv_rating"))
    n_bess = sum(1 for d in cfg.ders if isinstance(d, dict) and d.get("bess"))
    if cfg.initial_soc is not None and len(cfg.initial_soc) != n_bess:
        errs.append(("initial_soc", f"initial_soc needs {n_bess} values"))
    if cfg.matrices is not None and len(cfg.matrices) != len(cfg.ders):
        errs.append(("matrices", "one matrix file per DER is required"))
    return errs


# ---------------------------------------------------------------------------
# building the runtime objects

def build_network(cfg: ScenarioConfig):
    net = dict(cfg.network or {})
    buses, lines = net.pop("buses", None), net.pop("lines", None)
    if buses is None and lines is None:
        return ieee33(**net)
    if buses is None or lines is None:
        raise ConfigError("network needs both 'buses' and 'lines'")
    for p in (buses, lines):
        if not cfg.path(p).exists():
            raise FileNotFoundError(f"network file not found: {cfg.path(p)}")
    return load_network(cfg.path(buses), cfg.path(lines), **net)


def build_ders(cfg: ScenarioConfig) -> tuple[DerUnit, ...]:
    out = []
    for d in cfg.ders:
        d = dict(d)
        bess = d.pop("bess", None)
        try:
            out.append(DerUnit(bess=BessUnit(**bess) if bess else None, **d))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"DER at bus {d.get('bus')}: {e}") from None
    return tuple(out)


def build_spaces(cfg: ScenarioConfig, n_der: int, n_bess: int):
    g = cfg.grids
    states = StateSpace((error_bins(g.pv_bins),) * n_der, (_grid(0.0, 100.0, g.soc_step),) * n_bess)
    actions = ActionSpace(n_der, n_bess, tuple(g.pv_levels), tuple(g.q_levels_offline),
                          tuple(g.q_levels_online), tuple(g.bes_levels),
                          tuple(LoadGroup.parse(s) for s in g.load_groups))
    return states, actions


def build_matrices(cfg: ScenarioConfig, states: StateSpace) -> tuple[TransitionMatrix, ...]:
    if cfg.matrices is not None:
        out = []
        for p in cfg.matrices:
            path = cfg.path(p)
            if not path.exists():
                raise FileNotFoundError(f"matrix file not found: {path}")
            out.append(TransitionMatrix.from_csv(path.read_text(encoding="utf-8")))
        return tuple(out)
    path = cfg.history_path()
    if not path.exists():
        raise FileNotFoundError(f"history file not found: {path}")
    hist = load_history(path)
    return tuple(estimate_transition_matrix(hist, bins) for bins in states.pv_bins)


@dataclass
class Scenario:
    config: ScenarioConfig
    setup: Setup
    base: DayProfiles
    day: DayProfiles

    @property
    def system(self) -> System:
        return self.setup.system

    def offline_problem(self) -> OfflineProblem:
        s = self.setup
        return OfflineProblem(s.system, s.states, s.actions, s.matrices, self.day.predicted,
                              s.gamma, s.big_m, s.discount, s.terminal,
                              offline_checksum(self), s.model)

    def with_case(self, case: int) -> "Scenario":
        cfg = replace(self.config, case=case)
        return Scenario(cfg, self.setup, self.base, apply_case(case, self.base, cfg.case_params))


def salvage_layer(system: System, states: StateSpace, rate: float) -> np.ndarray | None:
    """Terminal utility crediting ``rate`` $/MWh of stored energy, or None."""
    if not rate:
        return None
    caps = np.array([system.ders[k].bess.capacity for k in system.bess_ders])
    stored = states.soc_values @ caps / 100.0  # (n_soc,) MWh
    return np.tile(-rate * stored, states.n_pv)


def build(cfg: ScenarioConfig) -> Scenario:
    net = build_network(cfg)
    ders = build_ders(cfg)
    system = System(net, ders, cfg.dt, cfg.allow_grid_charging, cfg.tso_reward_mode)
    states, actions = build_spaces(cfg, len(ders), len(system.bess_ders))
    matrices = build_matrices(cfg, states)
    base = load_day_profiles(cfg.profiles_dir(), cfg.prices, cfg.horizon, cfg.dt, len(ders))
    init = cfg.initial_soc if cfg.initial_soc is not None else \
        tuple(b[0] for b in states.soc_bins)
    setup = Setup(system, states, actions, matrices, cfg.gamma, cfg.big_m, cfg.discount,
                  tuple(float(x) for x in init), salvage_layer(system, states, cfg.salvage))
    return Scenario(cfg, setup, base, apply_case(cfg.case, base, cfg.case_params))


# ---------------------------------------------------------------------------
# checksums

def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def input_files(cfg: ScenarioConfig) -> list[Path]:
    files = sorted(p for p in cfg.profiles_dir().glob("*.csv") if p.name != "history.csv")
    if cfg.matrices is not None:
        files += [cfg.path(p) for p in cfg.matrices]
    else:
        files.append(cfg.history_path())
    net = cfg.network or {}
    files += [cfg.path(net[k]) for k in ("buses", "lines") if k in net]
    return files


def scenario_checksum(cfg: ScenarioConfig) -> str:
    """Everything that defines the study except the case and run-time choices."""
    runtime = ("case", "controller", "deterministic_plan_online", "workers")
    h = hashlib.sha256(cfg.canonical(runtime).encode())
    for p in input_files(cfg):
        h.update(p.name.encode() + b":" + _file_digest(p).encode())
    return h.hexdigest()


def offline_checksum(sc: Scenario) -> str:
    """Identifies the offline problem: shared by cases with the same day-ahead view."""
    h = hashlib.sha256(scenario_checksum(sc.config).encode())
    h.update(repr(sc.day.predicted).encode())
    return h.hexdigest()

