"""Synthetic day profiles and PV history.

Shapes are invented: bell-shaped PV between sunrise and sunset, an
evening-peaked load factor, TSO transfer limits hugging the predicted
import, and a flexibility window in the late afternoon. The large-error
trace is a deep midday dip that recovers, so a forecast that extrapolates
the dip is too pessimistic. Everything is a
deterministic function of :class:`FixtureParams` (including the seed).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

# (hour, factor) knots of the load factor, linearly interpolated
LOAD_KNOTS = ((0, 0.50), (5, 0.45), (8, 0.62), (11, 0.66), (14, 0.62), (16, 0.70),
              (19, 0.88), (21, 0.80), (24, 0.52))


@dataclass(frozen=True)
class FixtureParams:
    seed: int = 0
    horizon: int = 96
    pv_peaks: tuple[float, ...] = (2.55, 1.16)  # MW
    sunrise: int = 22  # epoch
    sunset: int = 76
    small_err: float = 0.04  # std of the small forecast error
    large_drop_epoch: int = 44  # realised PV falls off from here on
    large_factor_early: float = 0.9
    large_factor_late: float = 0.3
    large_recover_epoch: int = 52  # and comes back from here on
    large_factor_recover: float = 1.0
    load_knots: tuple[tuple[float, float], ...] = LOAD_KNOTS
    nominal_p: float = 3.715  # MW, feeder total
    inverter_efficiency: float = 0.9
    margin_day: float = 1.5  # MW above the predicted import while PV is forecast
    margin_night: float = 2.0
    evening_support: float = 0.4  # MW the import must sit below the forecast in the flex window
    p_floor: float = -3.0  # MW, largest export allowed
    p_ceiling: float = 3.8
    q_limits: tuple[float, float] = (-1.0, 3.0)
    flex_window: tuple[int, int] = (64, 72)  # 16:00-18:00
    flex_extra: float = 0.2  # MW of further reduction asked by a flex request
    flex_rate: float = 100.0
    history_days: int = 120
    p_cloud: float = 0.015  # per-epoch chance a clear spell turns cloudy
    p_clear: float = 0.2


def pv_shape(horizon: int, sunrise: int, sunset: int) -> np.ndarray:
    """Per-unit bell between sunrise and sunset, zero at night."""
    t = np.arange(horizon) + 0.5
    x = (t - sunrise) / (sunset - sunrise)
    return np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)) ** 1.5, 0.0)


def load_factor(horizon: int, knots) -> np.ndarray:
    hours = (np.arange(horizon) + 0.5) * 24.0 / horizon
    h, f = zip(*knots)
    return np.interp(hours, h, f)


@dataclass(frozen=True)
class FixtureSet:
    loads: np.ndarray  # (T, 2) predicted, actual
    pv: np.ndarray  # (D, T, 3) pred, small-error actual, large-error actual
    tso: np.ndarray  # (T, 7)
    history: list[tuple[str, float, float]]


def generate(params: FixtureParams = FixtureParams()) -> FixtureSet:
    rng = np.random.default_rng(params.seed)
    T = params.horizon
    shape = pv_shape(T, params.sunrise, params.sunset)
    lf = load_factor(T, params.load_knots)
    loads = np.stack([lf, lf], axis=1)

    pv = []
    for peak in params.pv_peaks:
        pred = peak * shape
        # AR(1) multiplicative error keeps the small trace smooth
        e = np.zeros(T)
        for t in range(1, T):
            e[t] = 0.8 * e[t - 1] + rng.normal(0.0, params.small_err * 0.6)
        small = pred * np.clip(1.0 + e, 0.0, None)
        t = np.arange(T)
        factor = np.select([t < params.large_drop_epoch, t < params.large_recover_epoch],
                           [params.large_factor_early, params.large_factor_late],
                           params.large_factor_recover)
        large = pred * factor
        pv.append(np.stack([pred, small, large], axis=1))
    pv = np.round(np.array(pv), 6)

    pred_import = params.nominal_p * lf - params.inverter_efficiency * pv[:, :, 0].sum(axis=0)
    margin = np.where(pv[:, :, 0].sum(axis=0) > 0, params.margin_day, params.margin_night)
    flag = np.zeros(T)
    lo, hi = params.flex_window
    flag[lo:hi] = 1.0
    # the evening window is tight with or without a flex request
    margin = np.where(flag > 0, -params.evening_support, margin)
    p_max = np.minimum(pred_import + margin, params.p_ceiling)
    p_min = np.full(T, params.p_floor)
    tso = np.column_stack([np.arange(T), p_min, p_max, np.full(T, params.q_limits[0]),
                           np.full(T, params.q_limits[1]), flag,
                           np.where(flag > 0, p_max - params.flex_extra, 0.0),
                           np.where(flag > 0, params.flex_rate, 0.0)])
    tso[:, [1, 2, 6]] = np.round(tso[:, [1, 2, 6]], 6)
    return FixtureSet(np.round(loads, 6), pv, tso, _history(params, rng, shape))


def _history(params: FixtureParams, rng, shape) -> list[tuple[str, float, float]]:
    """Clear/cloudy regime switching on top of a scaled forecast."""
    start = datetime(2023, 1, 1)
    step = timedelta(minutes=15)
    out = []
    cloudy = False
    for day in range(params.history_days):
        scale = rng.uniform(0.55, 1.0)
        pred = scale * shape
        for t in range(params.horizon):
            if pred[t] > 0:
                if cloudy:
                    cloudy = rng.random() >= params.p_clear
                else:
                    cloudy = rng.random() < params.p_cloud
                f = rng.uniform(0.25, 0.6) if cloudy else 1.0 + rng.normal(0.0, params.small_err)
                actual = float(np.clip(pred[t] * f, 0.0, 1.0))
            else:
                actual = 0.0
            stamp = (start + (day * params.horizon + t) * step).isoformat()
            out.append((stamp, round(float(pred[t]), 6), round(actual, 6)))
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write(out_dir, params: FixtureParams = FixtureParams()) -> list[Path]:
    """Write the profile CSV set plus ``history.csv``; returns the paths."""
    fx = generate(params)
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    T = params.horizon

    def table(header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()

    files["loads.csv"] = table(["t", "load_factor_pred", "load_factor_actual"],
                               [[t, _fmt(fx.loads[t, 0]), _fmt(fx.loads[t, 1])] for t in range(T)])
    for k, series in enumerate(fx.pv, start=1):
        files[f"pv_{k}.csv"] = table(
            ["t", "pred_MW", "actual_small_err_MW", "actual_large_err_MW"],
            [[t, *(_fmt(x) for x in series[t])] for t in range(T)])
    files["tso.csv"] = table(
        ["t", "p_min", "p_max", "q_min", "q_max", "flex_flag", "flex_pmax", "flex_rate"],
        [[int(r[0]), *(_fmt(x) for x in r[1:5]), int(r[5]), _fmt(r[6]), _fmt(r[7])]
         for r in fx.tso])
    files["history.csv"] = table(["timestamp", "pred_pu", "actual_pu"],
                                 [[s, _fmt(p), _fmt(a)] for s, p, a in fx.history])
    paths = []
    for name, text in files.items():
        p = d / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
