"""Radial feeder model and backward/forward sweep power flow.

Loads are constant-power. Voltages are carried in per-unit on the feeder
base (``base_voltage`` kV line-to-line, ``base_mva`` three-phase); line
currents are reported in amperes so they can be compared with the
ampere ratings of the line table.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SWEEP_TOL = 1e-6
SWEEP_MAX_ITER = 100
# slack on every limit comparison, so that e.g. a flat 1.05 p.u. profile
# is not flagged against a 1.05 p.u. ceiling
LIMIT_EPS = 1e-9


class NetworkError(ValueError):
    """Invalid network description."""


class NotRadialError(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    p_load_nominal: float  # MW
    q_load_nominal: float  # MVAr
    v_min: float = 0.95
    v_max: float = 1.05

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise NetworkError(f"bus {self.id}: v_min must be below v_max")
        if self.p_load_nominal < 0:
            raise NetworkError(f"bus {self.id}: negative active load")


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    resistance: float  # ohm
    reactance: float  # ohm
    i_max: float  # A

    def __post_init__(self):
        if self.i_max <= 0:
            raise NetworkError(f"line {self.id}: i_max must be positive")
        if self.resistance < 0:
            raise NetworkError(f"line {self.id}: negative resistance")


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack_voltage: float = 1.05
    base_voltage: float = 12.66  # kV
    s_slack_max: float = 4.0  # MVA
    base_mva: float = 100.0
    slack_id: int = 1

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise NetworkError(f"duplicate bus id(s): {dup}")
        if self.slack_id not in ids:
            raise NetworkError(f"missing slack bus {self.slack_id}")
        slack = self.buses[ids.index(self.slack_id)]
        if slack.p_load_nominal != 0 or slack.q_load_nominal != 0:
            raise NetworkError("slack bus must carry no load")
        for ln in self.lines:
            for b in (ln.from_bus, ln.to_bus):
                if b not in ids:
                    raise NetworkError(f"line {ln.id} references unknown bus {b}")
        if len(self.lines) != len(self.buses) - 1:
            raise NotRadialError(
                f"{len(self.lines)} lines for {len(self.buses)} buses; "
                "a radial feeder needs exactly one line fewer than buses")
        # the BFS ordering below also proves connectivity
        self._topology

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def _topology(self):
        """Lines oriented away from the slack, in breadth-first order."""
        adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in self.buses}
        for k, ln in enumerate(self.lines):
            adj[ln.from_bus].append((ln.to_bus, k))
            adj[ln.to_bus].append((ln.from_bus, k))
        seen = {self.slack_id}
        order = []  # (line position, parent bus id, child bus id)
        queue = deque([self.slack_id])
        while queue:
            parent = queue.popleft()
            for child, k in adj[parent]:
                if child in seen:
                    continue
                seen.add(child)
                order.append((k, parent, child))
                queue.append(child)
        if len(seen) != self.n_bus:
            missing = sorted(set(self.bus_index) - seen)
            raise NotRadialError(f"buses not reachable from slack: {missing}")
        return tuple(order)

    @cached_property
    def sweep_arrays(self):
        idx = self.bus_index
        order = self._topology
        line_pos = np.array([k for k, _, _ in order])
        parent = np.array([idx[p] for _, p, _ in order])
        child = np.array([idx[c] for _, _, c in order])
        z_base = self.base_voltage ** 2 / self.base_mva
        z = np.array([complex(self.lines[k].resistance, self.lines[k].reactance)
                      for k in line_pos]) / z_base
        return line_pos, parent, child, z

    @cached_property
    def i_base(self) -> float:
        """Base current in A."""
        return self.base_mva * 1e6 / (math.sqrt(3) * self.base_voltage * 1e3)

    @cached_property
    def p_load(self) -> np.ndarray:
        return np.array([b.p_load_nominal for b in self.buses])

    @cached_property
    def q_load(self) -> np.ndarray:
        return np.array([b.q_load_nominal for b in self.buses])

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    @cached_property
    def i_max(self) -> np.ndarray:
        return np.array([ln.i_max for ln in self.lines])

    @cached_property
    def resistance(self) -> np.ndarray:
        return np.array([ln.resistance for ln in self.lines])

    def bus_mask(self, bus_ids: Iterable[int]) -> np.ndarray:
        mask = np.zeros(self.n_bus, dtype=bool)
        for b in bus_ids:
            mask[self.bus_index[b]] = True
        return mask


def _read_table(source) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a CSV with optional leading ``# key=value`` metadata lines."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    meta, body = {}, []
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("#"):
            if "=" in s:
                k, v = s[1:].split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if s:
            body.append(line)
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    return meta, list(reader)


def _require(rows, columns, what):
    if not rows:
        raise NetworkError(f"{what} table is empty")
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise NetworkError(f"{what} table lacks column(s) {missing}")


def network_from_tables(bus_rows: Sequence[Mapping], line_rows: Sequence[Mapping],
                        **params) -> NetworkModel:
    """Build a model from rows shaped like the CSV tables (kW / kVAr / ohm / A)."""
    _require(bus_rows, ("id", "p_load_kW", "q_load_kVAr"), "bus")
    _require(line_rows, ("id", "from", "to", "R_ohm", "X_ohm", "i_max_A"), "line")
    buses = []
    for r in bus_rows:
        kw = {}
        if r.get("v_min") not in (None, ""):
            kw["v_min"] = float(r["v_min"])
        if r.get("v_max") not in (None, ""):
            kw["v_max"] = float(r["v_max"])
        buses.append(Bus(int(r["id"]), float(r["p_load_kW"]) / 1e3,
                         float(r["q_load_kVAr"]) / 1e3, **kw))
    lines = [Line(int(r["id"]), int(r["from"]), int(r["to"]), float(r["R_ohm"]),
                  float(r["X_ohm"]), float(r["i_max_A"])) for r in line_rows]
    buses.sort(key=lambda b: b.id)
    return NetworkModel(tuple(buses), tuple(lines), **params)


def load_network(buses, lines, **overrides) -> NetworkModel:
    """Load a feeder from a bus CSV and a line CSV.

    Network-level parameters (``base_kv``, ``base_mva``, ``slack_voltage``,
    ``s_slack_max``) may be given as ``# key=value`` lines at the top of the
    bus file; keyword overrides take precedence.
    """
    meta, bus_rows = _read_table(buses)
    _, line_rows = _read_table(lines)
    params = {}
    names = {"base_kv": "base_voltage", "base_mva": "base_mva",
             "slack_voltage": "slack_voltage", "s_slack_max": "s_slack_max"}
    for key, attr in names.items():
        if key in meta:
            params[attr] = float(meta[key])
    params.update({k: v for k, v in overrides.items() if v is not None})
    return network_from_tables(bus_rows, line_rows, **params)


def ieee33(**overrides) -> NetworkModel:
    """The bundled 33-bus feeder with the line ratings used for the DER study."""
    data = resources.files("dsomdp") / "data"
    with (data / "ieee33_buses.csv").open(encoding="utf-8") as b, \
            (data / "ieee33_lines.csv").open(encoding="utf-8") as ln:
        return load_network(b, ln, **overrides)


# ---------------------------------------------------------------------------
# power flow

@dataclass(frozen=True)
class BatchFlow:
    """Power-flow results for ``N`` operating points (rows)."""
    v: np.ndarray  # (N, n_bus) complex p.u.
    i_line: np.ndarray  # (N, n_line) A, in line-table order
    loss: np.ndarray  # (N,) MW
    p_slack: np.ndarray  # (N,) MW
    q_slack: np.ndarray  # (N,) MVAr
    converged: np.ndarray  # (N,) bool
    iterations: np.ndarray  # (N,) int


def sweep(net: NetworkModel, p_demand: np.ndarray, q_demand: np.ndarray,
          tol: float = SWEEP_TOL, max_iter: int = SWEEP_MAX_ITER) -> BatchFlow:
    """Backward/forward sweep for a batch of net demands (MW, MVAr per bus).

    Each row stops iterating on its own once its largest voltage update falls
    below ``tol``, so a row's result does not depend on what else is in the
    batch.
    """
    p_demand = np.atleast_2d(np.asarray(p_demand, dtype=float))
    q_demand = np.atleast_2d(np.asarray(q_demand, dtype=float))
    n_rows, n_bus = p_demand.shape
    line_pos, parent, child, z = net.sweep_arrays
    slack = net.bus_index[net.slack_id]
    # bus-major layout: each bus is a contiguous vector over the batch
    s_pu = np.ascontiguousarray(((p_demand + 1j * q_demand) / net.base_mva).T)
    v0 = complex(net.slack_voltage)

    v_out = np.full((n_bus, n_rows), v0, dtype=complex)
    converged = np.zeros(n_rows, dtype=bool)
    iterations = np.full(n_rows, max_iter, dtype=int)

    active = np.arange(n_rows)
    v = v_out.copy()
    s_act = s_pu
    for it in range(1, max_iter + 1):
        i_br = _backward(s_act, v, parent, child)
        v_new = np.empty_like(v)
        v_new[slack] = v0
        for k in range(len(z)):
            v_new[child[k]] = v_new[parent[k]] - z[k] * i_br[k]
        with np.errstate(invalid="ignore"):
            dv = np.max(np.abs(v_new - v), axis=0)
        done = dv < tol
        bad = ~np.isfinite(dv)
        finished = done | bad
        if finished.any():
            rows = active[finished]
            v_out[:, rows] = v_new[:, finished]
            converged[active[done]] = True
            iterations[rows] = it
        if finished.all():
            active = active[:0]
            break
        if finished.any():
            keep = ~finished
            active, v, s_act = active[keep], v_new[:, keep], s_act[:, keep]
        else:
            v = v_new
    if active.size:
        v_out[:, active] = v

    i_br = _backward(s_pu, v_out, parent, child)
    i_line = np.empty_like(i_br)
    i_line[line_pos] = i_br
    amps = np.abs(i_line)
    r_pu = net.resistance / (net.base_voltage ** 2 / net.base_mva)
    loss = (r_pu @ amps ** 2) * net.base_mva
    root = parent == slack
    s_slack = v_out[slack] * np.conj(i_br[root].sum(axis=0)) * net.base_mva
    return BatchFlow(v_out.T, amps.T * net.i_base, loss, s_slack.real, s_slack.imag,
                     converged, iterations)


def _backward(s_pu, v, parent, child):
    """Branch currents (p.u.) from bus demands, accumulated leaf to root."""
    with np.errstate(divide="ignore", invalid="ignore"):
        j = np.conj(s_pu / v)
    i_br = np.empty((len(child), v.shape[1]), dtype=complex)
    for k in range(len(child) - 1, -1, -1):
        i_br[k] = j[child[k]]
        j[parent[k]] += i_br[k]
    return i_br


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_voltages: np.ndarray  # complex p.u., bus order of the model
    line_currents: np.ndarray  # A, line order of the model
    grid_loss: float  # MW
    slack_p: float  # MW drawn from the transmission system
    slack_q: float  # MVAr
    converged: bool = True
    iterations: int = 0

    @property
    def slack_s(self) -> float:
        return math.hypot(self.slack_p, self.slack_q)


def net_demand(net: NetworkModel, injections: Mapping[int, tuple[float, float]] | None = None,
               load_scale: float = 1.0, shed: Iterable[int] = ()):
    """Per-bus net demand (load minus injection) in MW / MVAr."""
    if load_scale < 0:
        raise ValueError("load_scale must be non-negative")
    served = ~net.bus_mask(shed)
    p = net.p_load * load_scale * served
    q = net.q_load * load_scale * served
    for bus, (pi, qi) in (injections or {}).items():
        k = net.bus_index[bus]
        p[k] -= pi
        q[k] -= qi
    return p, q


def solve_power_flow(net: NetworkModel, injections: Mapping[int, tuple[float, float]] | None = None,
                     load_scale: float = 1.0, shed: Iterable[int] = (),
                     tol: float = SWEEP_TOL, max_iter: int = SWEEP_MAX_ITER) -> PowerFlowSolution:
    """Solve one operating point.

    ``injections`` maps bus id to (P MW, Q MVAr) injected into the feeder;
    loads are the nominal loads times ``load_scale``, except at buses listed in
    ``shed``. A run that does not converge is returned with
    ``converged=False`` rather than raised.
    """
    p, q = net_demand(net, injections, load_scale, shed)
    res = sweep(net, p, q, tol, max_iter)
    return PowerFlowSolution(res.v[0], res.i_line[0], float(res.loss[0]),
                             float(res.p_slack[0]), float(res.q_slack[0]),
                             bool(res.converged[0]), int(res.iterations[0]))


# ---------------------------------------------------------------------------
# constraints

@dataclass(frozen=True)
class Violation:
    kind: str  # "voltage", "current", "slack_s", "tso_p", "tso_q", "nonconvergence"
    element: int | None  # bus or line id
    value: float
    limit: float


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def check_constraints(sol: PowerFlowSolution, net: NetworkModel,
                      p_limits: tuple[float, float] | None = None,
                      q_limits: tuple[float, float] | None = None) -> ConstraintReport:
    """Voltage band, line ampacity, slack apparent power and TSO transfer limits."""
    out: list[Violation] = []
    if not sol.converged:
        out.append(Violation("nonconvergence", None, float("nan"), float("nan")))
        return ConstraintReport(tuple(out))
    vm = np.abs(sol.bus_voltages)
    for b, v in zip(net.buses, vm):
        if v < b.v_min - LIMIT_EPS:
            out.append(Violation("voltage", b.id, float(v), b.v_min))
        elif v > b.v_max + LIMIT_EPS:
            out.append(Violation("voltage", b.id, float(v), b.v_max))
    for ln, i in zip(net.lines, sol.line_currents):
        if i > ln.i_max + LIMIT_EPS:
            out.append(Violation("current", ln.id, float(i), ln.i_max))
    if sol.slack_s > net.s_slack_max + LIMIT_EPS:
        out.append(Violation("slack_s", net.slack_id, sol.slack_s, net.s_slack_max))
    if p_limits is not None:
        lo, hi = p_limits
        if sol.slack_p < lo - LIMIT_EPS:
            out.append(Violation("tso_p", None, sol.slack_p, lo))
        elif sol.slack_p > hi + LIMIT_EPS:
            out.append(Violation("tso_p", None, sol.slack_p, hi))
    if q_limits is not None:
        lo, hi = q_limits
        if sol.slack_q < lo - LIMIT_EPS:
            out.append(Violation("tso_q", None, sol.slack_q, lo))
        elif sol.slack_q > hi + LIMIT_EPS:
            out.append(Violation("tso_q", None, sol.slack_q, hi))
    return ConstraintReport(tuple(out))


def count_violations(net: NetworkModel, flow: BatchFlow, p_lo=None, p_hi=None,
                     q_lo=None, q_hi=None) -> np.ndarray:
    """Vectorised counterpart of :func:`check_constraints` (counts per row).

    Limit arguments are scalars or arrays broadcastable to the batch.
    Non-converged rows count as one violation.
    """
    vm = np.abs(flow.v)
    n = ((vm < net.v_min - LIMIT_EPS) | (vm > net.v_max + LIMIT_EPS)).sum(axis=1)
    n += (flow.i_line > net.i_max + LIMIT_EPS).sum(axis=1)
    n += np.hypot(flow.p_slack, flow.q_slack) > net.s_slack_max + LIMIT_EPS
    if p_lo is not None:
        n += (flow.p_slack < p_lo - LIMIT_EPS) | (flow.p_slack > p_hi + LIMIT_EPS)
    if q_lo is not None:
        n += (flow.q_slack < q_lo - LIMIT_EPS) | (flow.q_slack > q_hi + LIMIT_EPS)
    return np.where(flow.converged, n, 1)
