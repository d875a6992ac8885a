"""Backward induction and the online re-selection step.

Utilities are laid out as ``(n_pv, n_soc)`` per epoch. A cost table for an
epoch is ``(n_pv, A)``: it does not depend on SoC, whose only effect is to
invalidate battery moves that leave the band. Invalid moves get exactly
``big_m``; actions that break an operating limit get ``big_m`` as their
immediate cost with the future term still added.
"""
from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..profiles import TransitionMatrix
from .costs import BIG_M, CostModel, System, pv_availability
from .spaces import ActionSpace, StateSpace, soc_successors

MAGIC = b"DSOMDP-UTILITY 1\n"
# bounds the (pv, soc, action) block materialised at once
BLOCK = 4_000_000


class TableMismatch(ValueError):
    """A utility table does not belong to the scenario it is used with."""


@dataclass
class UtilityTable:
    u: np.ndarray  # (T + 1, n_states), flat state index
    policy: np.ndarray  # (T, n_states), offline argmin
    pv_dims: tuple[int, ...]
    soc_dims: tuple[int, ...]
    n_actions: int
    gamma: float = 1.0
    big_m: float = BIG_M
    discount: str = "power"
    checksum: str = ""
    t0: int = 0

    @property
    def horizon(self) -> int:
        return self.policy.shape[0]

    @property
    def n_pv(self) -> int:
        return int(np.prod(self.pv_dims, dtype=int))

    @property
    def n_soc(self) -> int:
        return int(np.prod(self.soc_dims, dtype=int))

    def layer(self, t: int) -> np.ndarray:
        """(n_pv, n_soc) utilities at absolute epoch ``t``."""
        return self.u[t - self.t0].reshape(self.n_pv, self.n_soc)

    def infeasible_count(self, t: int | None = None) -> int:
        u = self.u[:-1] if t is None else self.u[t - self.t0]
        return int(np.count_nonzero(u >= self.big_m))

    def header(self) -> dict:
        return {"horizon": self.horizon, "t0": self.t0, "pv_dims": list(self.pv_dims),
                "soc_dims": list(self.soc_dims), "n_actions": self.n_actions,
                "gamma": self.gamma, "big_m": self.big_m, "discount": self.discount,
                "checksum": self.checksum}

    def save(self, path) -> None:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(json.dumps(self.header(), sort_keys=True).encode() + b"\n")
        np.save(buf, np.ascontiguousarray(self.u, dtype="<f8"), allow_pickle=False)
        np.save(buf, np.ascontiguousarray(self.policy, dtype="<i8"), allow_pickle=False)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path, checksum: str | None = None) -> "UtilityTable":
        with open(path, "rb") as fh:
            if fh.readline() != MAGIC:
                raise TableMismatch(f"{path}: not a utility table")
            head = json.loads(fh.readline())
            u = np.load(fh, allow_pickle=False)
            policy = np.load(fh, allow_pickle=False)
        if checksum is not None and head["checksum"] != checksum:
            raise TableMismatch(f"{path}: checksum {head['checksum'][:12]} does not match "
                                f"the scenario ({checksum[:12]})")
        return cls(u, policy, tuple(head["pv_dims"]), tuple(head["soc_dims"]), head["n_actions"],
                   head["gamma"], head["big_m"], head["discount"], head["checksum"], head["t0"])


def discount_factor(gamma: float, t: int, mode: str = "power") -> float:
    """Weight on the expectation term at absolute epoch ``t``."""
    if mode == "power":
        return float(gamma ** t)
    if mode == "step":
        return float(gamma)
    raise ValueError(f"unknown discount mode {mode!r}")


def epoch_kernels(states: StateSpace, matrices: Sequence[TransitionMatrix],
                  pv_pred: np.ndarray) -> list[np.ndarray]:
    """Joint PV kernels from each epoch to the next, one per epoch.

    A DER whose prediction is zero at either end of the step keeps its
    error bin (identity factor). The last epoch gets an identity kernel.
    """
    pv_pred = np.asarray(pv_pred, dtype=float)
    horizon, n_der = pv_pred.shape
    if len(matrices) != n_der or len(states.pv_bins) != n_der:
        raise ValueError("need one transition matrix per DER")
    for m, bins in zip(matrices, states.pv_bins):
        if not np.allclose(m.bins, bins):
            raise ValueError("transition matrix bins differ from the state grid")
    eyes = [np.eye(n) for n in states.pv_dims]
    out = []
    for t in range(horizon):
        k = np.ones((1, 1))
        for d in range(n_der):
            day = t + 1 < horizon and pv_pred[t, d] > 0 and pv_pred[t + 1, d] > 0
            k = np.kron(k, matrices[d].array if day else eyes[d])
        out.append(k)
    return out


def composite_transition(states: StateSpace, pv_idx: Sequence[int], soc_idx: Sequence[int],
                         a_bes: Sequence[float], kernel: np.ndarray,
                         soc_floor: Sequence[float] | None = None) -> dict[int, float]:
    """Sparse successor distribution ``{flat state: probability}``.

    Empty when the battery move leaves the SoC band.
    """
    nxt = soc_successors(states, np.asarray([a_bes], dtype=float).reshape(1, -1), soc_floor)
    s_next = int(nxt[states.soc_joint(soc_idx), 0])
    if s_next < 0:
        return {}
    row = kernel[states.pv_joint(pv_idx)]
    return {int(p) * states.n_soc + s_next: float(row[p]) for p in np.flatnonzero(row)}


def q_values(cost: np.ndarray, u_next: np.ndarray, kernel: np.ndarray, soc_next: np.ndarray,
             weight: float, big_m: float = BIG_M) -> np.ndarray:
    """(n_pv, n_soc, A) action values for one epoch."""
    eu = kernel @ u_next  # (n_pv, n_soc)
    valid = soc_next >= 0
    fut = eu[:, np.where(valid, soc_next, 0)]  # (n_pv, n_soc, A)
    q = cost[:, None, :] + weight * fut
    return np.where(valid[None], q, big_m)


def backward_induction(costs: Sequence[np.ndarray], kernels: Sequence[np.ndarray],
                       soc_next: np.ndarray, gamma: float = 1.0, big_m: float = BIG_M,
                       terminal: np.ndarray | None = None, t0: int = 0,
                       discount: str = "power", cost_fn: Callable | None = None):
    """Solve the finite-horizon recursion.

    ``costs[t]`` is the (n_pv, A) immediate cost at local epoch ``t`` with
    ``big_m`` already substituted for infeasible pairs; pass ``cost_fn(t)``
    instead to build each layer on demand. ``soc_next`` is (n_soc, A).
    Returns ``(u, policy)`` with ``u`` of shape (T + 1, n_pv, n_soc).
    """
    horizon = len(kernels)
    n_pv = kernels[0].shape[0]
    n_soc, n_act = soc_next.shape
    u = np.zeros((horizon + 1, n_pv, n_soc))
    if terminal is not None:
        u[horizon] = np.asarray(terminal, dtype=float).reshape(n_pv, n_soc)
    policy = np.zeros((horizon, n_pv, n_soc), dtype=np.int64)
    step = max(1, BLOCK // max(1, n_soc * n_act))
    for t in range(horizon - 1, -1, -1):
        cost = cost_fn(t) if cost_fn is not None else np.asarray(costs[t], dtype=float)
        w = discount_factor(gamma, t0 + t, discount)
        eu = kernels[t] @ u[t + 1]
        valid = soc_next >= 0
        idx = np.where(valid, soc_next, 0)
        for lo in range(0, n_pv, step):
            hi = min(n_pv, lo + step)
            q = cost[lo:hi, None, :] + w * eu[lo:hi][:, idx]
            q = np.where(valid[None], q, big_m)
            a = np.argmin(q, axis=2)
            policy[t, lo:hi] = a
            u[t, lo:hi] = np.take_along_axis(q, a[..., None], axis=2)[..., 0]
    return u, policy


@dataclass(frozen=True)
class Selection:
    action: int
    value: float
    fallback: bool
    n_feasible: int = 0


def online_select(pv_row: int, soc_row: int, cost_online: np.ndarray, u_next: np.ndarray,
                  kernel: np.ndarray, soc_next_online: np.ndarray, weight: float,
                  fallback_action: int, big_m: float = BIG_M) -> Selection:
    """Argmin over the online set of immediate cost plus expected utility.

    Only actions that are feasible now (within limits, SoC band kept) are
    candidates; the lowest index wins ties. With no candidate the fallback
    action is returned and flagged.
    """
    cost_online = np.asarray(cost_online, dtype=float)
    nxt = soc_next_online[soc_row]
    ok = (nxt >= 0) & (cost_online < big_m)
    if not ok.any():
        return Selection(int(fallback_action), float("nan"), True, 0)
    eu = kernel[pv_row] @ u_next  # (n_soc,)
    q = np.where(ok, cost_online + weight * eu[np.where(ok, nxt, 0)], np.inf)
    a = int(np.argmin(q))
    return Selection(a, float(q[a]), False, int(ok.sum()))


@dataclass
class OfflineProblem:
    """Everything the offline solve needs for one day."""
    system: System
    states: StateSpace
    actions: ActionSpace
    matrices: tuple[TransitionMatrix, ...]
    profiles: tuple  # EpochProfile per epoch, predicted view
    gamma: float = 1.0
    big_m: float = BIG_M
    discount: str = "power"
    terminal: np.ndarray | None = None
    checksum: str = ""
    model: CostModel | None = field(default=None, repr=False)

    def cost_model(self) -> CostModel:
        if self.model is None:
            self.model = CostModel(self.system, self.actions)
        return self.model


def solve_offline(problem: OfflineProblem, workers: int = 1,
                  progress: Callable[[int], None] | None = None) -> UtilityTable:
    """Offline backward induction over the predicted day."""
    states, actions, system = problem.states, problem.actions, problem.system
    model = problem.cost_model()
    pv_pred = np.array([p.pv_pred for p in problem.profiles], dtype=float)
    kernels = epoch_kernels(states, problem.matrices, pv_pred)
    grid = actions.grid(online=False)
    soc_next = soc_successors(states, grid.a_bes, system.soc_floors)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def cost_fn(t: int) -> np.ndarray:
        prof = problem.profiles[t]
        rows = pv_availability(states, system, prof.pv_pred)
        if pool is None:
            out = model.totals([prof] * len(rows), rows, False, problem.big_m)
        else:
            parts = np.array_split(np.arange(len(rows)), workers)
            out = np.concatenate(list(pool.map(
                lambda ix: model.totals([prof] * len(ix), rows[ix], False, problem.big_m),
                [ix for ix in parts if len(ix)])))
        if progress is not None:
            progress(t)
        return out

    try:
        u, policy = backward_induction(None, kernels, soc_next, problem.gamma, problem.big_m,
                                       problem.terminal, 0, problem.discount, cost_fn)
    finally:
        if pool is not None:
            pool.shutdown()
    horizon = len(kernels)
    return UtilityTable(u.reshape(horizon + 1, -1), policy.reshape(horizon, -1),
                        states.pv_dims, states.soc_dims, grid.size, problem.gamma,
                        problem.big_m, problem.discount, problem.checksum)
