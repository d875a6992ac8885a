"""A three-bus feeder with one PV + battery unit, small enough to brute force."""
from __future__ import annotations

import numpy as np

from dsomdp.der import BessUnit, DerUnit
from dsomdp.grid import Bus, Line, NetworkModel
from dsomdp.mdp.costs import System
from dsomdp.mdp.spaces import ActionSpace, LoadGroup, StateSpace
from dsomdp.profiles import DayProfiles, EpochProfile, TransitionMatrix, error_bins
from dsomdp.simulate import Setup

PV_PRED = (0.0, 0.6, 0.8, 0.0)
LOAD = (0.5, 0.7, 0.9, 0.6)
KERNEL = ((0.6, 0.4, 0.0), (0.2, 0.6, 0.2), (0.0, 0.3, 0.7))


def network(load=(0.5, 0.3)):
    buses = (Bus(1, 0.0, 0.0), Bus(2, load[0], 0.4 * load[0]), Bus(3, load[1], 0.4 * load[1]))
    lines = (Line(1, 1, 2, 0.5, 0.3, 300.0), Line(2, 2, 3, 0.4, 0.2, 300.0))
    return NetworkModel(buses, lines, slack_voltage=1.0, s_slack_max=4.0)


def system(load=(0.5, 0.3)):
    der = DerUnit(3, 1.0, 1.2, 0.9, BessUnit(0.4, 0.0, 2.5, 0.95))
    return System(network(load), (der,), 0.25)


def spaces(online_q=(-1.0, 0.0, 1.0)):
    states = StateSpace((error_bins(3),), ((0.0, 50.0, 100.0),))
    actions = ActionSpace(1, 1, (0.0, 1.0), (0.0,), tuple(online_q), (-50.0, 0.0, 50.0),
                          (LoadGroup.parse("none"), LoadGroup.parse("2-3")))
    return states, actions


def setup(kernel=KERNEL, online_q=(-1.0, 0.0, 1.0), load=(0.5, 0.3)):
    states, actions = spaces(online_q)
    mats = (TransitionMatrix.from_array(error_bins(3), kernel),)
    return Setup(system(load), states, actions, mats)


def day(pv_pred=PV_PRED, load=LOAD, pv_actual=None, load_actual=None, flex=None,
        p_limits=(-5.0, 5.0)):
    """Predicted and actual views; ``flex`` maps epoch to a Flex request."""
    flex = flex or {}
    load_actual = load if load_actual is None else load_actual
    pred = tuple(EpochProfile(t, load[t], (pv_pred[t],), tso_p_limits=p_limits,
                              flex=flex.get(t)) for t in range(len(pv_pred)))
    act = tuple(EpochProfile(t, load_actual[t], (pv_pred[t],), tso_p_limits=p_limits,
                             flex=flex.get(t)) for t in range(len(pv_pred)))
    pv_actual = pv_pred if pv_actual is None else pv_actual
    return DayProfiles(pred, act, tuple((float(x),) for x in pv_actual))


def identity_kernel(n=3):
    return tuple(tuple(float(x) for x in r) for r in np.eye(n))
