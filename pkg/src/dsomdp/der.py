"""PV + battery units behind a single inverter.

Sign conventions: ``p_injection``/``q_injection`` are AC power delivered to
the feeder. Battery converter power is positive when it draws from the DC
link (charging) and negative when it delivers to it (discharging).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-9


class InfeasibleTransition(ValueError):
    """Battery action breaks the SoC band or the converter rating."""


class InfeasibleDispatch(ValueError):
    """Inverter cannot carry the requested active power."""


@dataclass(frozen=True)
class BessUnit:
    capacity: float  # MWh
    e_min: float = 0.0  # MWh
    converter_p_max: float = 3.0  # MW, symmetric
    converter_efficiency: float = 0.95

    def __post_init__(self):
        if not 0 <= self.e_min < self.capacity:
            raise ValueError("need 0 <= e_min < capacity")
        if self.converter_p_max <= 0:
            raise ValueError("converter_p_max must be positive")
        if not 0 < self.converter_efficiency <= 1:
            raise ValueError("converter_efficiency must be in (0, 1]")

    @property
    def soc_min(self) -> float:
        """Lowest admissible SoC in %."""
        return 100.0 * self.e_min / self.capacity


@dataclass(frozen=True)
class DerUnit:
    bus: int
    pv_rating: float  # MW
    inverter_s_max: float  # MVA
    inverter_efficiency: float = 0.9
    bess: BessUnit | None = None

    def __post_init__(self):
        if self.pv_rating <= 0 or self.inverter_s_max <= 0:
            raise ValueError("pv_rating and inverter_s_max must be positive")
        if not 0 < self.inverter_efficiency <= 1:
            raise ValueError("inverter_efficiency must be in (0, 1]")


@dataclass(frozen=True)
class DerDispatch:
    p_injection: float  # MW
    q_injection: float  # MVAr
    der_loss: float  # MW, inverter + converter
    pv_curtailed: float  # MW
    soc_next: float | None  # %
    pv_available: float = 0.0
    battery_power: float = 0.0  # converter draw from the DC link, MW


def actual_pv_power(p_pred, delta, pv_rating=math.inf):
    """PV output whose relative prediction error against ``p_pred`` is ``delta``.

    Inverts ``(P - p_pred) / max(P, p_pred)``: below the prediction the
    denominator is ``p_pred``, above it the denominator is ``P`` itself.
    Works elementwise on arrays.
    """
    p_pred = np.asarray(p_pred, dtype=float)
    delta = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(delta < 1, p_pred / (1 - delta), np.inf)
    p = np.where(delta <= 0, p_pred * (1 + delta), up)
    p = np.where(p_pred > 0, np.minimum(p, pv_rating), 0.0)
    return p if p.ndim else float(p)


def battery_power(a_bes, bess: BessUnit, dt: float):
    """Converter draw and loss for a SoC change of ``a_bes`` % in one epoch.

    Returns ``(p_conv, conv_loss, feasible)``; elementwise on arrays. The
    SoC band is not checked here.
    """
    a_bes = np.asarray(a_bes, dtype=float)
    stored = a_bes / 100.0 * bess.capacity / dt  # MW into storage
    eta = bess.converter_efficiency
    p_conv = np.where(stored > 0, stored / eta, stored * eta)
    loss = np.abs(p_conv - stored)
    feasible = np.abs(p_conv) <= bess.converter_p_max + EPS
    return p_conv, loss, feasible


def battery_transition(soc: float, a_bes: float, bess: BessUnit, dt: float):
    """Apply a SoC change; returns ``(soc_next, p_grid_side, conv_loss)``.

    ``p_grid_side`` is the converter draw from the DC link (negative while
    discharging).
    """
    soc_next = soc + a_bes
    if soc_next < bess.soc_min - EPS or soc_next > 100.0 + EPS:
        raise InfeasibleTransition(f"SoC {soc}% {a_bes:+}% leaves the admissible band")
    p, loss, ok = battery_power(a_bes, bess, dt)
    if not ok:
        raise InfeasibleTransition(
            f"converter power {float(p):.4f} MW exceeds {bess.converter_p_max} MW")
    return soc_next, float(p), float(loss)


def inverter_flows(der: DerUnit, available, a_pv, a_q, p_conv, conv_loss,
                   allow_grid_charging: bool = True):
    """Vectorised inverter model.

    ``available`` is PV output before curtailment, ``a_pv`` the curtailed
    fraction, ``a_q`` the fraction of remaining apparent-power headroom used
    for reactive power. Efficiency is applied on the input side of the
    inverter in either direction. Returns a dict of arrays including a
    ``feasible`` mask.
    """
    available = np.asarray(available, dtype=float)
    curtailed = np.asarray(a_pv, dtype=float) * available
    dc = available - curtailed - p_conv
    eta = der.inverter_efficiency
    p = np.where(dc >= 0, dc * eta, dc / eta)
    inv_loss = np.abs(p - dc)
    s2 = der.inverter_s_max ** 2
    q = np.asarray(a_q, dtype=float) * np.sqrt(np.maximum(0.0, s2 - p * p))
    feasible = np.abs(p) <= der.inverter_s_max + EPS
    if not allow_grid_charging:
        feasible = feasible & (dc >= -EPS)
    return {"p": p, "q": q, "der_loss": inv_loss + conv_loss, "curtailed": curtailed,
            "feasible": feasible}


def dispatch_der(der: DerUnit, p_pred: float, pv_state: float, a_pv: float, a_q: float,
                 a_bes: float | None = None, dt: float = 0.25, soc: float | None = None,
                 allow_grid_charging: bool = True) -> DerDispatch:
    """Dispatch one DER for one epoch.

    ``pv_state`` is the relative prediction error (as a fraction, -1..1);
    ``a_bes`` the SoC change in %. Raises :class:`InfeasibleTransition` or
    :class:`InfeasibleDispatch`. When ``soc`` is omitted the SoC band is not
    checked.
    """
    if not 0 <= a_pv <= 1:
        raise ValueError("a_pv must be in [0, 1]")
    if not -1 <= a_q <= 1:
        raise ValueError("a_q must be in [-1, 1]")
    available = actual_pv_power(p_pred, pv_state, der.pv_rating)
    p_conv = conv_loss = 0.0
    soc_next = soc
    if der.bess is not None and a_bes:
        if soc is not None:
            soc_next, p_conv, conv_loss = battery_transition(soc, a_bes, der.bess, dt)
        else:
            p, loss, ok = battery_power(a_bes, der.bess, dt)
            if not ok:
                raise InfeasibleTransition("converter rating exceeded")
            p_conv, conv_loss = float(p), float(loss)
    elif a_bes and der.bess is None:
        raise ValueError("a_bes given for a DER without storage")
    f = inverter_flows(der, available, a_pv, a_q, p_conv, conv_loss, allow_grid_charging)
    if not f["feasible"]:
        raise InfeasibleDispatch(f"inverter at bus {der.bus} over its rating")
    return DerDispatch(float(f["p"]), float(f["q"]), float(f["der_loss"]),
                       float(f["curtailed"]), soc_next, float(available), p_conv)
