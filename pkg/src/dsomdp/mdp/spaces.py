"""Discretised state and action spaces.

States are ``(pv error bin per DER, SoC bin per BESS)``; the flat index
puts the joint PV coordinate first. Actions follow the vector order
``[a_pv1, a_q1, ..., a_pvD, a_qD, a_bes1, ..., a_besB, a_load]`` and are
flattened in C order, so a lower flat index is lexicographically smaller.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from ..profiles import error_bins


def _unravel(flat: int, dims: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(int(i) for i in np.unravel_index(flat, dims)) if dims else ()


def _grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step)) + 1
    return tuple(float(x) for x in np.round(lo + step * np.arange(n), 12))


@dataclass(frozen=True)
class State:
    pv_idx: tuple[int, ...]
    soc_idx: tuple[int, ...]


@dataclass(frozen=True)
class Action:
    a_pv: tuple[int, ...]
    a_q: tuple[int, ...]
    a_bes: tuple[int, ...]
    a_load: int


@dataclass(frozen=True)
class LoadGroup:
    label: str
    buses: frozenset[int]

    @classmethod
    def parse(cls, spec: str) -> "LoadGroup":
        """``"none"`` or an inclusive bus range such as ``"19-33"``."""
        if spec.strip().lower() == "none":
            return cls("none", frozenset())
        lo, hi = (int(x) for x in spec.split("-"))
        return cls(f"{lo}-{hi}", frozenset(range(lo, hi + 1)))


FULL_LOAD_GROUPS = ("none", "2-33", "2-28", "19-33", "2-10", "11-18", "19-25", "26-33",
                     "2-6", "7-10", "11-14", "15-18", "19-22", "23-25", "26-29", "30-33")
DESK_LOAD_GROUPS = ("none", "2-33", "2-28", "19-33", "2-10", "11-18", "19-25", "26-33",
                    "2-6", "7-10", "30-33")


@dataclass(frozen=True)
class StateSpace:
    pv_bins: tuple[tuple[float, ...], ...]  # per DER, fractions in [-1, 1]
    soc_bins: tuple[tuple[float, ...], ...]  # per BESS, % of capacity

    def __post_init__(self):
        for bins in self.pv_bins + self.soc_bins:
            if any(b >= c for b, c in zip(bins, bins[1:])):
                raise ValueError("bins must be strictly increasing")

    @classmethod
    def uniform(cls, n_der: int, n_bess: int, n_pv: int = 11, soc_step: float = 6.25):
        return cls((error_bins(n_pv),) * n_der, (_grid(0.0, 100.0, soc_step),) * n_bess)

    @cached_property
    def pv_dims(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.pv_bins)

    @cached_property
    def soc_dims(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.soc_bins)

    @property
    def n_pv(self) -> int:
        return int(np.prod(self.pv_dims, dtype=int))

    @property
    def n_soc(self) -> int:
        return int(np.prod(self.soc_dims, dtype=int))

    @property
    def size(self) -> int:
        return self.n_pv * self.n_soc

    def pv_joint(self, pv_idx: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(pv_idx), self.pv_dims)) if self.pv_dims else 0

    def soc_joint(self, soc_idx: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(soc_idx), self.soc_dims)) if self.soc_dims else 0

    def index(self, s: State) -> int:
        return self.pv_joint(s.pv_idx) * self.n_soc + self.soc_joint(s.soc_idx)

    def state(self, flat: int) -> State:
        pv, soc = divmod(int(flat), self.n_soc)
        return State(_unravel(pv, self.pv_dims), _unravel(soc, self.soc_dims))

    @cached_property
    def pv_values(self) -> np.ndarray:
        """(n_pv, D) error representatives of every joint PV coordinate."""
        if not self.pv_dims:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*[np.asarray(b) for b in self.pv_bins], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def soc_values(self) -> np.ndarray:
        """(n_soc, B) SoC levels of every joint SoC coordinate."""
        if not self.soc_dims:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*[np.asarray(b) for b in self.soc_bins], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class ActionGrid:
    """Flat enumeration of one action set (offline or online)."""
    dims: tuple[int, ...]
    a_pv: np.ndarray  # (A, D) curtailed fraction
    a_q: np.ndarray  # (A, D) reactive fraction of headroom
    a_bes: np.ndarray  # (A, B) SoC change in %
    load: np.ndarray  # (A,) load-group index
    coords: np.ndarray  # (A, len(dims)) per-dimension indices

    @property
    def size(self) -> int:
        return len(self.load)


@dataclass(frozen=True)
class ActionSpace:
    n_der: int
    n_bess: int
    pv_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    q_levels_offline: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    q_levels_online: tuple[float, ...] = (-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)
    bes_levels: tuple[float, ...] = _grid(-25.0, 25.0, 6.25)
    load_groups: tuple[LoadGroup, ...] = tuple(LoadGroup.parse(g) for g in FULL_LOAD_GROUPS)

    def __post_init__(self):
        if not set(self.q_levels_offline) <= set(self.q_levels_online):
            raise ValueError("offline reactive levels must be a subset of the online ones")
        if not all(0 <= x <= 1 for x in self.pv_levels):
            raise ValueError("curtailment levels must lie in [0, 1]")
        if not all(-1 <= x <= 1 for x in self.q_levels_online):
            raise ValueError("reactive levels must lie in [-1, 1]")

    def _dims(self, online: bool) -> tuple[int, ...]:
        q = self.q_levels_online if online else self.q_levels_offline
        return ((len(self.pv_levels), len(q)) * self.n_der
                + (len(self.bes_levels),) * self.n_bess + (len(self.load_groups),))

    def size(self, online: bool = False) -> int:
        return int(np.prod(self._dims(online), dtype=int))

    def grid(self, online: bool = False) -> ActionGrid:
        return self._online_grid if online else self._offline_grid

    @cached_property
    def _offline_grid(self) -> ActionGrid:
        return self._build(False)

    @cached_property
    def _online_grid(self) -> ActionGrid:
        return self._build(True)

    def _build(self, online: bool) -> ActionGrid:
        dims = self._dims(online)
        q = np.asarray(self.q_levels_online if online else self.q_levels_offline)
        coords = np.indices(dims).reshape(len(dims), -1).T
        pv = np.asarray(self.pv_levels)
        d = self.n_der
        a_pv = pv[coords[:, 0:2 * d:2]]
        a_q = q[coords[:, 1:2 * d:2]]
        a_bes = np.asarray(self.bes_levels)[coords[:, 2 * d:2 * d + self.n_bess]]
        return ActionGrid(dims, a_pv, a_q, a_bes, coords[:, -1].copy(), coords)

    def index(self, a: Action, online: bool = False) -> int:
        coords = []
        for p, q in zip(a.a_pv, a.a_q):
            coords += [p, q]
        coords += list(a.a_bes) + [a.a_load]
        return int(np.ravel_multi_index(coords, self._dims(online)))

    def action(self, flat: int, online: bool = False) -> Action:
        c = [int(i) for i in np.unravel_index(int(flat), self._dims(online))]
        d = self.n_der
        return Action(tuple(c[0:2 * d:2]), tuple(c[1:2 * d:2]),
                      tuple(c[2 * d:2 * d + self.n_bess]), c[-1])

    def to_online(self, flat: int) -> int:
        """Online index of an offline action (same physical action)."""
        a = self.action(flat, online=False)
        qi = tuple(self.q_levels_online.index(self.q_levels_offline[i]) for i in a.a_q)
        return self.index(Action(a.a_pv, qi, a.a_bes, a.a_load), online=True)

    def fallback(self, online: bool = True) -> int:
        """Maximal shedding with idle battery, no curtailment and no reactive power."""
        q = self.q_levels_online if online else self.q_levels_offline
        qi = int(np.argmin(np.abs(np.asarray(q))))
        pi = int(np.argmin(np.asarray(self.pv_levels)))
        bi = int(np.argmin(np.abs(np.asarray(self.bes_levels))))
        gi = max(range(len(self.load_groups)), key=lambda g: (len(self.load_groups[g].buses), -g))
        return self.index(Action((pi,) * self.n_der, (qi,) * self.n_der, (bi,) * self.n_bess, gi),
                          online)


def soc_successors(states: StateSpace, bes_levels_per_action: np.ndarray,
                   soc_floor: Sequence[float] | None = None) -> np.ndarray:
    """(n_soc, A) joint SoC successor index, -1 where the SoC band is left.

    ``bes_levels_per_action`` is the (A, B) array of SoC changes in %.
    """
    n_soc = states.n_soc
    a = bes_levels_per_action.shape[0]
    if not states.soc_dims:
        return np.zeros((1, a), dtype=int)
    out = np.zeros((n_soc, a), dtype=int)
    valid = np.ones((n_soc, a), dtype=bool)
    floors = soc_floor if soc_floor is not None else [0.0] * len(states.soc_dims)
    for b, bins in enumerate(states.soc_bins):
        bins_arr = np.asarray(bins)
        cur = states.soc_values[:, b][:, None]
        nxt = cur + bes_levels_per_action[:, b][None, :]
        pos = np.searchsorted(bins_arr, nxt - 1e-9)
        pos_c = np.clip(pos, 0, len(bins) - 1)
        hit = (np.abs(bins_arr[pos_c] - nxt) < 1e-9) & (nxt >= floors[b] - 1e-9)
        valid &= hit
        out = out * len(bins) + pos_c
    return np.where(valid, out, -1)
