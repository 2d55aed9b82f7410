from .brute import MAX_STATES, OracleSizeError, brute_force_minimize
from .expansion import ExpansionMove, MoveRecord, SolveReport, alpha_expansion, build_expansion, expansion_order
from .maxflow import FlowNetwork
from .qpbo import UNLABELED, BinaryProblem, qpbo_solve

__all__ = [
    "MAX_STATES", "OracleSizeError", "brute_force_minimize", "ExpansionMove", "MoveRecord",
    "SolveReport", "alpha_expansion", "build_expansion", "expansion_order", "FlowNetwork",
    "UNLABELED", "BinaryProblem", "qpbo_solve",
]
