"""Koopman model predictive control and controllability analysis."""

from .controllability import koopman_controllability, lie_bracket_controllability, pbh_test
from .model import History, LiftedLinearModel, Relinearizing, from_dmdc, from_edmdc, linearize_local
from .mpc import (
    ClosedLoopResult,
    MpcController,
    MpcProblem,
    Reference,
    build_condensed_qp,
    mpc_step,
    realized_cost,
    run_closed_loop,
)

__all__ = [
    "ClosedLoopResult",
    "History",
    "LiftedLinearModel",
    "MpcController",
    "MpcProblem",
    "Reference",
    "Relinearizing",
    "build_condensed_qp",
    "from_dmdc",
    "from_edmdc",
    "koopman_controllability",
    "lie_bracket_controllability",
    "linearize_local",
    "mpc_step",
    "pbh_test",
    "realized_cost",
    "run_closed_loop",
]
