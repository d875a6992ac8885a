"""Per-epoch operating cost with constraint screening.

The cost of a (PV availability, action) pair does not depend on the SoC
except through whether the battery move is admissible, so tables are keyed
on the PV outputs and the epoch profile only; the SoC band is applied later
by the solver.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..der import DerUnit, actual_pv_power, battery_power, inverter_flows
from ..grid import NetworkModel, count_violations, sweep
from ..profiles import EpochProfile, Flex
from .spaces import ActionGrid, ActionSpace, State, StateSpace, soc_successors

BIG_M = 1e9
# power flows per sweep call; bounds peak memory of a batch
CHUNK = 60_000


@dataclass(frozen=True)
class System:
    network: NetworkModel
    ders: tuple[DerUnit, ...]
    dt: float = 0.25  # h
    allow_grid_charging: bool = True
    tso_reward_mode: str = "margin"  # or "flat"

    def __post_init__(self):
        if self.tso_reward_mode not in ("margin", "flat"):
            raise ValueError("tso_reward_mode must be 'margin' or 'flat'")
        for d in self.ders:
            if d.bus not in self.network.bus_index:
                raise ValueError(f"DER bus {d.bus} not in network")

    @property
    def bess_ders(self) -> tuple[int, ...]:
        """Positions of DERs that carry a battery, in BESS order."""
        return tuple(k for k, d in enumerate(self.ders) if d.bess is not None)

    @property
    def soc_floors(self) -> tuple[float, ...]:
        return tuple(self.ders[k].bess.soc_min for k in self.bess_ders)


@dataclass(frozen=True)
class CostBreakdown:
    c_grid: float
    c_der: float
    c_pv: float
    c_load: float
    c_tso: float

    @property
    def total(self) -> float:
        return self.c_grid + self.c_der + self.c_pv + self.c_load + self.c_tso

    @classmethod
    def zero(cls) -> "CostBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def fsum(cls, items: Sequence["CostBreakdown"]) -> "CostBreakdown":
        return cls(*(math.fsum(getattr(c, f) for c in items)
                     for f in ("c_grid", "c_der", "c_pv", "c_load", "c_tso")))


class Infeasible(NamedTuple):
    reasons: tuple[str, ...]


def tso_reward(p_ts, flex: Flex | None, mode: str = "margin"):
    """Flexibility reward in $ for one epoch (never positive).

    ``margin``: rate times the margin below the requested cap. ``flat``:
    rate times the cap whenever the transfer is under it.
    """
    p_ts = np.asarray(p_ts, dtype=float)
    if flex is None:
        out = np.zeros_like(p_ts)
    elif mode == "margin":
        out = -flex.rate * np.maximum(0.0, flex.p_max - p_ts)
    else:
        out = np.where(p_ts <= flex.p_max, -flex.rate * flex.p_max, 0.0)
    out = out + 0.0  # no negative zeros
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CostTable:
    """Arrays of shape (K, A): K operating contexts by A actions."""
    c_grid: np.ndarray
    c_der: np.ndarray
    c_pv: np.ndarray
    c_load: np.ndarray
    c_tso: np.ndarray
    feasible: np.ndarray
    p_ts: np.ndarray
    q_ts: np.ndarray
    violations: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.c_grid + self.c_der + self.c_pv + self.c_load + self.c_tso

    def masked(self, big_m: float = BIG_M) -> np.ndarray:
        return np.where(self.feasible, self.total, big_m)

    def breakdown(self, k: int, a: int) -> CostBreakdown:
        return CostBreakdown(float(self.c_grid[k, a]), float(self.c_der[k, a]),
                             float(self.c_pv[k, a]), float(self.c_load[k, a]),
                             float(self.c_tso[k, a]))


def _profile_key(p: EpochProfile):
    # t is irrelevant to the physics; dropping it lets identical epochs share rows
    return (p.load_factor, p.pv_pred, p.prices, p.tso_p_limits, p.tso_q_limits, p.flex)


class CostModel:
    """Evaluates and caches cost rows for one system and action space."""

    def __init__(self, system: System, actions: ActionSpace):
        if actions.n_der != len(system.ders) or actions.n_bess != len(system.bess_ders):
            raise ValueError("action space does not match the DER set")
        self.system = system
        self.actions = actions
        net = system.network
        self._served = np.array([~net.bus_mask(g.buses) for g in actions.load_groups])
        self._shed_p = np.array([net.p_load[~s].sum() for s in self._served])
        self._der_cols = [net.bus_index[d.bus] for d in system.ders]
        self._rows: dict = {}
        self._tables: dict = {}
        self._lock = threading.Lock()

    # -- raw evaluation -----------------------------------------------------

    def evaluate(self, profiles: Sequence[EpochProfile], pv_available: np.ndarray,
                 online: bool) -> CostTable:
        """Evaluate every action of the chosen set for K (profile, PV) rows."""
        grid = self.actions.grid(online)
        pv_available = np.asarray(pv_available, dtype=float).reshape(len(profiles), -1)
        k_rows = len(profiles)
        per = max(1, CHUNK // grid.size)
        parts = [self._evaluate(profiles[i:i + per], pv_available[i:i + per], grid)
                 for i in range(0, k_rows, per)]
        return CostTable(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in CostTable.__dataclass_fields__))

    def _evaluate(self, profiles, pv_available, grid: ActionGrid) -> CostTable:
        sys_, net = self.system, self.system.network
        k, a = len(profiles), grid.size
        lf = np.array([p.load_factor for p in profiles])[:, None]
        served = self._served[grid.load]  # (A, n_bus)
        p_dem = lf[:, :, None] * (net.p_load * served)[None]  # (K, A, n_bus)
        q_dem = lf[:, :, None] * (net.q_load * served)[None]
        feasible = np.ones((k, a), dtype=bool)
        der_loss = np.zeros((k, a))
        curtailed = np.zeros((k, a))
        bess_pos = {d: b for b, d in enumerate(sys_.bess_ders)}
        for d, der in enumerate(sys_.ders):
            if d in bess_pos:
                p_conv, conv_loss, ok = battery_power(grid.a_bes[:, bess_pos[d]], der.bess, sys_.dt)
                feasible &= ok[None, :]
            else:
                p_conv = conv_loss = np.zeros(a)
            f = inverter_flows(der, pv_available[:, d][:, None], grid.a_pv[:, d][None, :],
                               grid.a_q[:, d][None, :], p_conv[None, :], conv_loss[None, :],
                               sys_.allow_grid_charging)
            col = self._der_cols[d]
            p_dem[:, :, col] -= f["p"]
            q_dem[:, :, col] -= f["q"]
            feasible &= f["feasible"]
            der_loss += f["der_loss"]
            curtailed += f["curtailed"]

        flow = sweep(net, p_dem.reshape(k * a, -1), q_dem.reshape(k * a, -1))
        bounds = np.array([p.p_bounds() + p.tso_q_limits for p in profiles])
        rep = lambda col: np.repeat(bounds[:, col], a)
        viol = count_violations(net, flow, rep(0), rep(1), rep(2), rep(3)).reshape(k, a)
        feasible &= viol == 0

        dt = sys_.dt
        price = lambda name: np.array([getattr(p.prices, name) for p in profiles])[:, None]
        loss = flow.loss.reshape(k, a)
        p_ts = flow.p_slack.reshape(k, a)
        c_tso = np.stack([tso_reward(p_ts[i], p.flex, sys_.tso_reward_mode)
                          for i, p in enumerate(profiles)])
        return CostTable(
            c_grid=dt * price("c_grid") * loss,
            c_der=dt * price("c_der") * der_loss,
            c_pv=dt * price("c_pv") * curtailed,
            c_load=dt * price("c_load") * (lf * self._shed_p[grid.load][None, :]),
            c_tso=c_tso,
            feasible=feasible,
            p_ts=p_ts,
            q_ts=flow.q_slack.reshape(k, a),
            violations=viol,
        )

    # -- cached access ------------------------------------------------------

    def totals(self, profiles: Sequence[EpochProfile], pv_available: np.ndarray,
               online: bool = False, big_m: float = BIG_M) -> np.ndarray:
        """(K, A) cost with ``big_m`` on infeasible pairs, cached per row."""
        pv_available = np.asarray(pv_available, dtype=float).reshape(len(profiles), -1)
        keys = [(_profile_key(p), tuple(r), online, big_m)
                for p, r in zip(profiles, pv_available.tolist())]
        todo, seen = [], set()
        for i, key in enumerate(keys):
            if key not in self._rows and key not in seen:
                todo.append(i)
                seen.add(key)
        if todo:
            tab = self.evaluate([profiles[i] for i in todo], pv_available[todo], online)
            masked = tab.masked(big_m)
            with self._lock:
                for j, i in enumerate(todo):
                    self._rows[keys[i]] = masked[j]
        return np.stack([self._rows[key] for key in keys])

    def table(self, profile: EpochProfile, pv_available: Sequence[float],
              online: bool = True) -> CostTable:
        """Full (1, A) table for one context, cached."""
        key = (_profile_key(profile), tuple(float(x) for x in pv_available), online)
        tab = self._tables.get(key)
        if tab is None:
            tab = self.evaluate([profile], np.asarray([key[1]]), online)
            with self._lock:
                self._tables[key] = tab
        return tab

    def clear(self):
        with self._lock:
            self._rows.clear()
            self._tables.clear()


def pv_availability(states: StateSpace, system: System, pv_pred: Sequence[float]) -> np.ndarray:
    """(n_pv, D) PV output implied by each joint error state at one epoch."""
    cols = [actual_pv_power(np.full(states.n_pv, pv_pred[d]), states.pv_values[:, d],
                            der.pv_rating)
            for d, der in enumerate(system.ders)]
    return np.stack(cols, axis=1) if cols else np.zeros((states.n_pv, 0))


def epoch_cost(s: State, a_flat: int, profile: EpochProfile, system: System,
               states: StateSpace, actions: ActionSpace, online: bool = False,
               model: CostModel | None = None) -> CostBreakdown | Infeasible:
    """Cost of one state-action pair at one epoch, or :class:`Infeasible`."""
    model = model or CostModel(system, actions)
    grid = actions.grid(online)
    reasons = []
    nxt = soc_successors(states, grid.a_bes[a_flat:a_flat + 1], system.soc_floors)
    if nxt[states.soc_joint(s.soc_idx), 0] < 0:
        reasons.append("soc")
    pv = pv_availability(states, system, profile.pv_pred)[states.pv_joint(s.pv_idx)]
    tab = model.evaluate([profile], pv[None, :], online)
    if not tab.feasible[0, a_flat]:
        reasons.append("operating limits")
    if reasons:
        return Infeasible(tuple(reasons))
    return tab.breakdown(0, a_flat)
