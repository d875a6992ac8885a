"""Time-series inputs: load factors, PV forecasts and realisations, prices,
TSO transfer limits and flexibility windows.

Also holds the PV prediction-error Markov kernel and its estimation from
history, and the scenario transforms for the five study cases.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ProfileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# relative prediction error and its discretisation

def relative_error(actual, predicted):
    """``(actual - predicted) / max(actual, predicted)``, 0 when both are 0."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    den = np.maximum(actual, predicted)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(den > 0, (actual - predicted) / np.where(den > 0, den, 1.0), 0.0)
    return err if err.ndim else float(err)


def bin_index(value, bins: Sequence[float]):
    """Index of the nearest bin representative; ties go to the one nearer zero."""
    bins = np.asarray(bins, dtype=float)
    x = np.asarray(value, dtype=float)
    d = np.abs(x[..., None] - bins)
    near = d <= d.min(axis=-1, keepdims=True) + 1e-12
    idx = np.where(near, np.abs(bins), np.inf).argmin(axis=-1)
    return idx if idx.ndim else int(idx)


def error_bins(n: int) -> tuple[float, ...]:
    """``n`` evenly spaced error representatives from -1 to 1."""
    return tuple(float(x) for x in np.round(np.linspace(-1.0, 1.0, n), 12))


# ---------------------------------------------------------------------------
# Markov kernel of the PV prediction error

@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic kernel over PV error bins."""
    bins: tuple[float, ...]
    matrix: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        m = self.array
        k = len(self.bins)
        if m.shape != (k, k):
            raise ValueError(f"matrix must be {k}x{k}")
        if (m < 0).any() or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("matrix must be non-negative with unit row sums")

    @classmethod
    def from_array(cls, bins, m) -> "TransitionMatrix":
        m = np.asarray(m, dtype=float)
        return cls(tuple(float(b) for b in bins), tuple(tuple(float(x) for x in r) for r in m))

    @classmethod
    def identity(cls, bins) -> "TransitionMatrix":
        return cls.from_array(bins, np.eye(len(bins)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from_bin"] + [f"{b:g}" for b in self.bins])
        for b, row in zip(self.bins, self.matrix):
            w.writerow([f"{b:g}"] + [f"{x:.12g}" for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TransitionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        bins = [float(x) for x in rows[0][1:]]
        m = [[float(x) for x in r[1:]] for r in rows[1:] if r]
        return cls.from_array(bins, m)


@dataclass(frozen=True)
class HistoryRecord:
    timestamp: datetime | int
    actual_pu: float
    pred_pu: float


def estimate_transition_matrix(history: Sequence[HistoryRecord], bins: Sequence[float],
                               step: timedelta = timedelta(minutes=15)) -> TransitionMatrix:
    """Count bin-to-bin transitions between consecutive daylight epochs.

    Records where both prediction and actual are zero (night) are dropped.
    Two records are consecutive when their timestamps differ by ``step``
    (or by 1 for integer stamps). Rows never visited fall back to identity.
    """
    if not history:
        raise ProfileError("empty history")
    k = len(bins)
    counts = np.zeros((k, k))
    prev = None
    for rec in history:
        if rec.actual_pu == 0 and rec.pred_pu == 0:
            prev = None
            continue
        b = bin_index(relative_error(rec.actual_pu, rec.pred_pu), bins)
        if prev is not None:
            gap = rec.timestamp - prev[0]
            if gap == (step if isinstance(gap, timedelta) else 1):
                counts[prev[1], b] += 1
        prev = (rec.timestamp, b)
    occ = counts.sum(axis=1, keepdims=True)
    m = np.where(occ > 0, counts / np.where(occ > 0, occ, 1.0), np.eye(k))
    return TransitionMatrix.from_array(bins, m)


def load_history(path) -> list[HistoryRecord]:
    """``timestamp, pred_pu, actual_pu`` CSV; timestamps ISO-8601 or integers."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    _check_header(path, rows, ("timestamp", "pred_pu", "actual_pu"), text)
    out = []
    for n, r in enumerate(rows, start=2):
        ts = r["timestamp"]
        try:
            stamp = int(ts) if ts.lstrip("-").isdigit() else datetime.fromisoformat(ts)
            out.append(HistoryRecord(stamp, float(r["actual_pu"]), float(r["pred_pu"])))
        except ValueError as e:
            raise ProfileError(f"{path}:{n}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# epoch profiles

@dataclass(frozen=True)
class Prices:
    c_pv: float = 200.0  # $/MWh curtailed
    c_load: float = 600.0  # $/MWh shed
    c_grid: float = 200.0  # $/MWh of feeder losses
    c_der: float = 200.0  # $/MWh of inverter/converter losses

    def __post_init__(self):
        if min(self.c_pv, self.c_load, self.c_grid, self.c_der) < 0:
            raise ProfileError("prices must be non-negative")


@dataclass(frozen=True)
class Flex:
    """Active flexibility request: keep P_TS under ``p_max`` for ``rate`` $/MW."""
    p_max: float = 1.0
    rate: float = 100.0


@dataclass(frozen=True)
class EpochProfile:
    t: int
    load_factor: float
    pv_pred: tuple[float, ...]  # MW per DER
    prices: Prices = Prices()
    tso_p_limits: tuple[float, float] = (-math.inf, math.inf)
    tso_q_limits: tuple[float, float] = (-math.inf, math.inf)
    flex: Flex | None = None

    def __post_init__(self):
        if self.load_factor < 0:
            raise ProfileError(f"epoch {self.t}: negative load factor")
        if any(p < 0 for p in self.pv_pred):
            raise ProfileError(f"epoch {self.t}: negative PV prediction")
        for name in ("tso_p_limits", "tso_q_limits"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ProfileError(f"epoch {self.t}: {name} not ordered")

    def p_bounds(self) -> tuple[float, float]:
        """Active-power transfer band, tightened by an active flex request."""
        lo, hi = self.tso_p_limits
        if self.flex is not None:
            hi = min(hi, self.flex.p_max)
        return lo, hi


@dataclass(frozen=True)
class DayProfiles:
    """Day-ahead view, real-time view and the realised PV trace(s)."""
    predicted: tuple[EpochProfile, ...]
    actual: tuple[EpochProfile, ...]
    pv_actual: tuple[tuple[float, ...], ...]  # (T, D) MW, realised
    pv_actual_large: tuple[tuple[float, ...], ...] | None = None
    dt: float = 0.25

    def __post_init__(self):
        t = len(self.predicted)
        if len(self.actual) != t or len(self.pv_actual) != t:
            raise ProfileError("predicted, actual and realised views differ in length")
        for p, a in zip(self.predicted, self.actual):
            if p.pv_pred != a.pv_pred:
                raise ProfileError(f"epoch {p.t}: PV forecast differs between views")

    @property
    def horizon(self) -> int:
        return len(self.predicted)

    @property
    def n_der(self) -> int:
        return len(self.predicted[0].pv_pred)

    def pv_pred_array(self) -> np.ndarray:
        return np.array([p.pv_pred for p in self.predicted], dtype=float).reshape(self.horizon, -1)

    def pv_actual_array(self) -> np.ndarray:
        return np.array(self.pv_actual, dtype=float).reshape(self.horizon, -1)


def _check_header(path, rows, columns, text=None):
    if not rows:
        raise ProfileError(f"{path}: no data rows")
    header = list(rows[0].keys())
    missing = [c for c in columns if c not in header]
    if missing:
        raise ProfileError(f"{path}:1: malformed header, missing {missing}")


def _read_csv(path, columns, horizon, optional=()):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"profile file not found: {path}")
    text = path.read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    _check_header(path, rows, columns)
    if len(rows) != horizon:
        raise ProfileError(f"{path}: expected {horizon} rows, found {len(rows)}")
    out = []
    for n, r in enumerate(rows, start=2):
        try:
            rec = {c: float(r[c]) for c in columns}
            for c in optional:
                if r.get(c) not in (None, ""):
                    rec[c] = float(r[c])
        except (TypeError, ValueError):
            raise ProfileError(f"{path}:{n}: non-numeric value") from None
        if int(rec["t"]) != n - 2:
            raise ProfileError(f"{path}:{n}: expected t={n - 2}")
        out.append(rec)
    return out


def _nonneg(path, rows, columns):
    for n, r in enumerate(rows, start=2):
        for c in columns:
            if c in r and r[c] < 0:
                raise ProfileError(f"{path}:{n}: negative value in {c}")


def pv_files(directory) -> list[Path]:
    files = sorted(Path(directory).glob("pv_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no pv_<d>.csv files in {directory}")
    return files


def load_day_profiles(directory, prices: Prices | None = None, horizon: int = 96,
                      dt: float = 0.25, n_der: int | None = None) -> DayProfiles:
    """Read ``loads.csv``, ``pv_<d>.csv`` and ``tso.csv`` from ``directory``.

    Prices come from ``prices.csv`` when present, else ``prices`` (constant).
    Without flex columns in ``tso.csv`` there is no flexibility window.
    """
    d = Path(directory)
    loads = _read_csv(d / "loads.csv", ("t", "load_factor_pred", "load_factor_actual"), horizon)
    _nonneg(d / "loads.csv", loads, ("load_factor_pred", "load_factor_actual"))
    pv_paths = pv_files(d)
    if n_der is not None and len(pv_paths) != n_der:
        raise ProfileError(f"{d}: {len(pv_paths)} PV files for {n_der} DERs")
    pv_cols = ("t", "pred_MW", "actual_small_err_MW", "actual_large_err_MW")
    pv = []
    for p in pv_paths:
        rows = _read_csv(p, pv_cols, horizon)
        _nonneg(p, rows, pv_cols[1:])
        pv.append(rows)
    flex_cols = ("flex_flag", "flex_pmax", "flex_rate")
    tso = _read_csv(d / "tso.csv", ("t", "p_min", "p_max", "q_min", "q_max"), horizon, flex_cols)
    _nonneg(d / "tso.csv", tso, ("flex_pmax", "flex_rate"))
    if (d / "prices.csv").exists():
        pr = _read_csv(d / "prices.csv", ("t", "c_pv", "c_load", "c_grid", "c_der"), horizon)
        _nonneg(d / "prices.csv", pr, ("c_pv", "c_load", "c_grid", "c_der"))
        price_list = [Prices(r["c_pv"], r["c_load"], r["c_grid"], r["c_der"]) for r in pr]
    else:
        price_list = [prices or Prices()] * horizon

    predicted, actual = [], []
    for t in range(horizon):
        tr = tso[t]
        flex = None
        if tr.get("flex_flag", 0) > 0:
            flex = Flex(tr.get("flex_pmax", 1.0), tr.get("flex_rate", 100.0))
        common = dict(pv_pred=tuple(rows[t]["pred_MW"] for rows in pv), prices=price_list[t],
                      tso_p_limits=(tr["p_min"], tr["p_max"]),
                      tso_q_limits=(tr["q_min"], tr["q_max"]), flex=flex)
        try:
            predicted.append(EpochProfile(t, loads[t]["load_factor_pred"], **common))
            actual.append(EpochProfile(t, loads[t]["load_factor_actual"], **common))
        except ProfileError as e:
            raise ProfileError(f"{d / 'tso.csv'}:{t + 2}: {e}") from None
    small = tuple(tuple(rows[t]["actual_small_err_MW"] for rows in pv) for t in range(horizon))
    large = tuple(tuple(rows[t]["actual_large_err_MW"] for rows in pv) for t in range(horizon))
    return DayProfiles(tuple(predicted), tuple(actual), small, large, dt)


# ---------------------------------------------------------------------------
# study cases

CASES = {
    1: "default",
    2: "temporary shut-down of DER 2",
    3: "significantly lower PV than predicted",
    4: "lower PV and unpredicted load increase",
    5: "lower PV and unplanned flexibility demand",
}


@dataclass(frozen=True)
class CaseParams:
    shutdown_der: int = 1  # zero-based, i.e. DER 2
    shutdown_epochs: tuple[int, int] = (48, 56)  # 12:00-14:00
    load_bump: float = 0.2  # added to the actual load factor
    load_bump_epochs: tuple[int, int] = (40, 56)  # 10:00-14:00


def apply_case(case_id: int, base: DayProfiles, params: CaseParams = CaseParams()) -> DayProfiles:
    """Derive a study-case day from the default one (pure)."""
    if case_id not in CASES:
        raise ValueError(f"unknown case id {case_id}")
    if case_id == 1:
        return base
    if case_id == 2:
        lo, hi = params.shutdown_epochs
        pv = [list(r) for r in base.pv_actual]
        for t in range(lo, min(hi, base.horizon)):
            pv[t][params.shutdown_der] = 0.0
        return replace(base, pv_actual=tuple(tuple(r) for r in pv))
    if base.pv_actual_large is None:
        raise ProfileError("case needs the significant-error PV trace")
    day = replace(base, pv_actual=base.pv_actual_large)
    if case_id == 4:
        lo, hi = params.load_bump_epochs
        actual = tuple(replace(p, load_factor=p.load_factor + params.load_bump)
                       if lo <= p.t < hi else p for p in day.actual)
        day = replace(day, actual=actual)
    elif case_id == 5:
        day = replace(day, predicted=tuple(replace(p, flex=None) for p in day.predicted))
    return day
