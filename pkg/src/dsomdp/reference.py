"""Comparison controllers: persistence-driven re-planning and perfect hindsight."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp.solver import Selection, backward_induction, online_select
from .profiles import DayProfiles
from .simulate import Setup, Trajectory, simulate_day


def smart_persistence(pred, t: int, actual_t, t_prime=None):
    """Forecast for ``t_prime`` updated with the actual output at ``t``.

    ``pred`` is the day-ahead series (epochs on axis 0, optionally DERs on
    axis 1); ``actual_t`` the measurement at ``t``. With ``t_prime`` omitted
    the whole updated series from ``t`` on is returned.
    """
    pred = np.asarray(pred, dtype=float)
    anchor = pred[t]
    actual_t = np.asarray(actual_t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(anchor == 0, 1.0, actual_t / np.where(anchor == 0, 1.0, anchor))
    if t_prime is None:
        return pred[t:] * ratio
    if t_prime < t:
        raise ValueError("target epoch precedes the anchor")
    out = pred[t_prime] * ratio
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ForecastUpdate:
    base_pred: tuple[tuple[float, ...], ...]
    anchor_epoch: int
    anchor_actual: tuple[float, ...]

    def series(self) -> np.ndarray:
        return smart_persistence(np.asarray(self.base_pred, dtype=float), self.anchor_epoch,
                                 self.anchor_actual)


def _terminal_soc(setup: Setup) -> np.ndarray:
    """Terminal utility over SoC only, read at the zero-error PV row."""
    if setup.terminal is None:
        return np.zeros(setup.states.n_soc)
    st = setup.states
    term = np.asarray(setup.terminal, dtype=float).reshape(st.n_pv, st.n_soc)
    mid = tuple(int(np.argmin(np.abs(b))) for b in st.pv_bins)
    return term[st.pv_joint(mid)]


class DeterministicController:
    """Re-plans the rest of the day every epoch on a persistence forecast.

    The plan is a shortest path over SoC with PV fixed at the updated point
    forecast and loads and limits taken from the day-ahead view. The
    immediate epoch is then chosen over the online set against realised
    data, like the online step of the MDP controller. ``plan_online``
    switches the future epochs to the online action set as well.
    """
    name = "deterministic"

    def __init__(self, plan_online: bool = True):
        self.plan_online = plan_online

    def start(self, setup: Setup, day: DayProfiles) -> None:
        self.setup = setup
        self.day = day
        self._fallback = setup.actions.fallback(online=True)
        self.last_plan: np.ndarray | None = None

    def plan(self, t: int, pv_now: Sequence[float]) -> np.ndarray:
        """(n_soc,) cost-to-go from ``t + 1`` under the forecast updated at ``t``."""
        s, day = self.setup, self.day
        horizon = day.horizon
        n_soc = s.states.n_soc
        if t + 1 >= horizon:
            return _terminal_soc(s)
        upd = smart_persistence(day.pv_pred_array(), t, pv_now)[1:]
        profs = day.predicted[t + 1:]
        costs = s.model.totals(list(profs), upd, self.plan_online, s.big_m)
        eye = [np.ones((1, 1))] * len(profs)
        u, _ = backward_induction(costs[:, None, :], eye, s.soc_next(self.plan_online), s.gamma,
                                  s.big_m, _terminal_soc(s), t + 1, s.discount)
        return u[0].reshape(n_soc)

    def select(self, t, pv_idx, soc_idx, cost_online) -> Selection:
        s = self.setup
        u_next = self.plan(t, self.day.pv_actual[t])
        self.last_plan = u_next
        return online_select(0, s.states.soc_joint(soc_idx), cost_online, u_next[None, :],
                             np.ones((1, 1)), s.soc_next(True), s.weight(t), self._fallback,
                             s.big_m)


@dataclass(frozen=True)
class OracleResult:
    trajectory: Trajectory
    value: float  # optimal day total from the initial state
    feasible: bool


class OracleController:
    """Follows a policy computed with the whole realised day in hand."""
    name = "oracle"

    def start(self, setup: Setup, day: DayProfiles) -> None:
        self.setup = setup
        horizon = day.horizon
        costs = np.stack([setup.online_costs(day, t).masked(setup.big_m) for t in range(horizon)])
        eye = [np.ones((1, 1))] * horizon
        u, policy = backward_induction(costs, eye, setup.soc_next(True), setup.gamma,
                                       setup.big_m, _terminal_soc(setup), 0, setup.discount)
        self.u = u[:, 0, :]
        self.policy = policy[:, 0, :]
        self.costs = costs[:, 0, :]
        self._fallback = setup.actions.fallback(online=True)

    def select(self, t, pv_idx, soc_idx, cost_online) -> Selection:
        s = self.setup.states.soc_joint(soc_idx)
        a = int(self.policy[t, s])
        if self.costs[t, a] >= self.setup.big_m or self.setup.soc_next(True)[s, a] < 0:
            return Selection(self._fallback, float("nan"), True, 0)
        return Selection(a, float(self.u[t, s]), False)


def optimal_oracle(setup: Setup, day: DayProfiles) -> OracleResult:
    """Perfect-information trajectory.

    ``feasible`` is False when the day cannot be run within limits.
    """
    ctrl = OracleController()
    traj = simulate_day(ctrl, setup, day)
    s0 = setup.states.soc_joint(setup.soc_index(setup.initial_soc))
    value = float(ctrl.u[0, s0])
    return OracleResult(traj, value, value < setup.big_m)
