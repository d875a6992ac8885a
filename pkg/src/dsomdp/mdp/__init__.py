"""Factored MDP: spaces, costs, offline solve and online selection."""
from ..profiles import TransitionMatrix
from .costs import (BIG_M, CostBreakdown, CostModel, CostTable, Infeasible, System,
                    epoch_cost, pv_availability, tso_reward)
from .solver import (OfflineProblem, Selection, TableMismatch, UtilityTable,
                     backward_induction, composite_transition, discount_factor,
                     epoch_kernels, online_select, q_values, solve_offline)
from .spaces import (DESK_LOAD_GROUPS, FULL_LOAD_GROUPS, Action, ActionGrid, ActionSpace,
                     LoadGroup, State, StateSpace, soc_successors)

__all__ = [
    "BIG_M", "Action", "ActionGrid", "ActionSpace", "CostBreakdown", "CostModel", "CostTable",
    "DESK_LOAD_GROUPS", "Infeasible", "LoadGroup", "OfflineProblem", "FULL_LOAD_GROUPS",
    "Selection", "State", "StateSpace", "System", "TableMismatch", "TransitionMatrix",
    "UtilityTable", "backward_induction", "composite_transition", "discount_factor",
    "epoch_cost", "epoch_kernels", "online_select", "pv_availability", "q_values",
    "soc_successors", "solve_offline", "tso_reward",
]
