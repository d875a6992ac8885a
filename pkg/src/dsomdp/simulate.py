"""Day simulation shared by every controller.

All controllers are charged from the same per-epoch table, built from the
realised data over the online action set, so their totals are directly
comparable.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .mdp.costs import BIG_M, CostBreakdown, CostModel, System
from .mdp.solver import Selection, discount_factor, epoch_kernels, online_select
from .mdp.spaces import ActionSpace, StateSpace, soc_successors
from .profiles import DayProfiles, TransitionMatrix, bin_index, relative_error


@dataclass
class Setup:
    """Discretised system shared by the offline solve and every controller."""
    system: System
    states: StateSpace
    actions: ActionSpace
    matrices: tuple[TransitionMatrix, ...]
    gamma: float = 1.0
    big_m: float = BIG_M
    discount: str = "power"
    initial_soc: tuple[float, ...] = ()
    terminal: np.ndarray | None = None
    model: CostModel | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.model is None:
            self.model = CostModel(self.system, self.actions)
        if not self.initial_soc:
            self.initial_soc = tuple(b[0] for b in self.states.soc_bins)

    def weight(self, t: int) -> float:
        return discount_factor(self.gamma, t, self.discount)

    def soc_next(self, online: bool) -> np.ndarray:
        key = "_soc_next_on" if online else "_soc_next_off"
        if not hasattr(self, key):
            grid = self.actions.grid(online)
            setattr(self, key, soc_successors(self.states, grid.a_bes, self.system.soc_floors))
        return getattr(self, key)

    def observe_pv(self, pv_actual: Sequence[float], pv_pred: Sequence[float]) -> tuple[int, ...]:
        return tuple(bin_index(relative_error(a, p), bins)
                     for a, p, bins in zip(pv_actual, pv_pred, self.states.pv_bins))

    def soc_index(self, soc: Sequence[float]) -> tuple[int, ...]:
        out = []
        for s, bins in zip(soc, self.states.soc_bins):
            i = int(np.argmin(np.abs(np.asarray(bins) - s)))
            if abs(bins[i] - s) > 1e-6:
                raise ValueError(f"SoC {s}% is not on the grid")
            out.append(i)
        return tuple(out)

    def online_costs(self, day: DayProfiles, t: int):
        """Executed-cost table for epoch ``t`` (realised data, online set)."""
        return self.model.table(day.actual[t], day.pv_actual[t], online=True)


class Controller(Protocol):
    name: str

    def start(self, setup: Setup, day: DayProfiles) -> None: ...

    def select(self, t: int, pv_idx: tuple[int, ...], soc_idx: tuple[int, ...],
               cost_online: np.ndarray) -> Selection: ...


@dataclass(frozen=True)
class EpochRecord:
    t: int
    pv_idx: tuple[int, ...]
    soc_idx: tuple[int, ...]
    soc: tuple[float, ...]
    action: int  # flat index in the online set
    coords: tuple[int, ...]
    costs: CostBreakdown
    p_ts: float
    q_ts: float
    p_limits: tuple[float, float]  # realised transfer band
    violations: int
    fallback: bool


COST_FIELDS = ("c_grid", "c_der", "c_pv", "c_load", "c_tso", "total")


@dataclass(frozen=True)
class Trajectory:
    controller: str
    records: tuple[EpochRecord, ...]

    @property
    def totals(self) -> CostBreakdown:
        return CostBreakdown.fsum([r.costs for r in self.records])

    @property
    def total(self) -> float:
        return math.fsum(r.costs.total for r in self.records)

    @property
    def fallback_epochs(self) -> tuple[int, ...]:
        return tuple(r.t for r in self.records if r.fallback)

    def executed_violations(self) -> int:
        """Limit violations in epochs that were not fallbacks."""
        return sum(r.violations for r in self.records if not r.fallback)

    def summary(self) -> dict:
        tot = self.totals
        out = {f: getattr(tot, f) for f in COST_FIELDS[:-1]}
        out["total"] = self.total
        out["fallback_epochs"] = list(self.fallback_epochs)
        out["violations"] = self.executed_violations()
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_pv = len(self.records[0].pv_idx) if self.records else 0
        n_soc = len(self.records[0].soc_idx) if self.records else 0
        n_coord = len(self.records[0].coords) if self.records else 0
        w.writerow(["t"] + [f"pv_idx_{d + 1}" for d in range(n_pv)]
                   + [f"soc_idx_{b + 1}" for b in range(n_soc)]
                   + [f"soc_{b + 1}" for b in range(n_soc)] + ["action"]
                   + [f"a_{k}" for k in range(n_coord)] + list(COST_FIELDS)
                   + ["p_ts", "q_ts", "p_min", "p_max", "violations", "fallback"])
        for r in self.records:
            c = r.costs
            w.writerow([r.t, *r.pv_idx, *r.soc_idx, *(repr(float(s)) for s in r.soc), r.action,
                        *r.coords, *(repr(float(getattr(c, f))) for f in COST_FIELDS),
                        repr(r.p_ts), repr(r.q_ts), *(repr(float(x)) for x in r.p_limits),
                        r.violations, int(r.fallback)])
        return buf.getvalue()


def simulate_day(controller: Controller, setup: Setup, day: DayProfiles) -> Trajectory:
    """Step through the day, charging every epoch from the realised table."""
    controller.start(setup, day)
    grid = setup.actions.grid(online=True)
    soc = tuple(float(s) for s in setup.initial_soc)
    records = []
    for t in range(day.horizon):
        pv_idx = setup.observe_pv(day.pv_actual[t], day.actual[t].pv_pred)
        soc_idx = setup.soc_index(soc)
        tab = setup.online_costs(day, t)
        sel = controller.select(t, pv_idx, soc_idx, tab.masked(setup.big_m)[0])
        a = sel.action
        viol = int(tab.violations[0, a])
        if not tab.feasible[0, a] and viol == 0:
            viol = 1  # inverter or converter limit
        coords = tuple(int(x) for x in grid.coords[a])
        records.append(EpochRecord(t, pv_idx, soc_idx, soc, a, coords,
                                   tab.breakdown(0, a), float(tab.p_ts[0, a]),
                                   float(tab.q_ts[0, a]), day.actual[t].p_bounds(), viol,
                                   sel.fallback))
        soc = tuple(float(np.round(s + d, 9)) for s, d in zip(soc, grid.a_bes[a]))
    return Trajectory(controller.name, tuple(records))


class MdpController:
    """Online re-selection against a precomputed utility table."""
    name = "mdp"

    def __init__(self, table, kernels: Sequence[np.ndarray] | None = None):
        self.table = table
        self.kernels = kernels

    def start(self, setup: Setup, day: DayProfiles) -> None:
        self.setup = setup
        if self.kernels is None:
            self.kernels = epoch_kernels(setup.states, setup.matrices, day.pv_pred_array())
        self._fallback = setup.actions.fallback(online=True)

    def select(self, t, pv_idx, soc_idx, cost_online) -> Selection:
        s = self.setup
        return online_select(s.states.pv_joint(pv_idx), s.states.soc_joint(soc_idx), cost_online,
                             self.table.layer(t + 1), self.kernels[t], s.soc_next(True),
                             s.weight(t), self._fallback, s.big_m)
