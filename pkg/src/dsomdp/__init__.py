"""Day-ahead MDP control of a radial feeder with PV and battery storage.

Modules: ``grid`` (feeder model and power flow), ``der`` (PV, inverter and
battery physics), ``profiles`` (time series, error kernels, study cases),
``mdp`` (spaces, costs, backward induction, online selection),
``reference`` (persistence re-planning and hindsight oracle), ``cli``.
"""
__version__ = "0.1.0"
