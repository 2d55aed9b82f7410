"""Alpha-expansion over a compiled pairwise MRF with QPBO binary moves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from ..core import OCCLUDED
from ..energy import EnergyModel, PairwiseMRF
from .qpbo import UNLABELED, BinaryProblem, qpbo_solve

logger = logging.getLogger(__name__)


def _as_mrf(model: Union[EnergyModel, PairwiseMRF]) -> PairwiseMRF:
    return model.mrf if isinstance(model, EnergyModel) else model


@dataclass(frozen=True)
class ExpansionMove:
    """Binary subproblem "keep current label (0) or switch to alpha (1)".

    Node i of ``problem`` is pixel ``nodes[i]``; pixels already labeled alpha
    are not variables.  For every assignment b,
    ``problem.energy(b) == energy(apply(b)) + problem.constant``.
    """

    alpha: int
    labeling: np.ndarray
    nodes: np.ndarray
    problem: BinaryProblem

    @property
    def constant(self) -> float:
        return self.problem.constant

    def apply(self, b) -> np.ndarray:
        b = np.asarray(b)
        out = self.labeling.copy().ravel()
        out[self.nodes[b == 1]] = self.alpha
        return out.reshape(self.labeling.shape)


def build_expansion(labeling, alpha: int, model: Union[EnergyModel, PairwiseMRF]) -> ExpansionMove:
    mrf = _as_mrf(model)
    lab = np.asarray(labeling, dtype=np.int64)
    if not 0 <= alpha < mrf.n_labels:
        raise ValueError(f"alpha {alpha} outside the label set")
    x = lab.ravel()
    free = x != alpha
    nodes = np.flatnonzero(free)
    node_of = np.full(len(x), -1, dtype=np.int64)
    node_of[nodes] = np.arange(len(nodes))
    u = mrf.unary
    cost0 = u[nodes, x[nodes]].copy()
    cost1 = u[nodes, alpha].copy()
    fixed = float(u[~free, alpha].sum())

    pi, pj, t = mrf.pi, mrf.pj, mrf.tables
    fi, fj = free[pi], free[pj]
    xi, xj = x[pi], x[pj]

    both = np.flatnonzero(fi & fj)
    pair = np.column_stack([
        t[both, xi[both], xj[both]],
        t[both, xi[both], alpha],
        t[both, alpha, xj[both]],
        t[both, alpha, alpha],
    ]) if len(both) else np.zeros((0, 4))

    only_i = np.flatnonzero(fi & ~fj)
    np.add.at(cost0, node_of[pi[only_i]], t[only_i, xi[only_i], alpha])
    np.add.at(cost1, node_of[pi[only_i]], t[only_i, alpha, alpha])
    only_j = np.flatnonzero(~fi & fj)
    np.add.at(cost0, node_of[pj[only_j]], t[only_j, alpha, xj[only_j]])
    np.add.at(cost1, node_of[pj[only_j]], t[only_j, alpha, alpha])
    neither = np.flatnonzero(~fi & ~fj)
    fixed += float(t[neither, alpha, alpha].sum())

    problem = BinaryProblem(
        cost0, cost1, node_of[pi[both]], node_of[pj[both]], pair.reshape(-1, 4), constant=-fixed
    )
    return ExpansionMove(alpha, lab.copy(), nodes, problem)


@dataclass(frozen=True)
class MoveRecord:
    alpha: int
    changed: int
    unlabeled: int
    accepted: bool
    energy: float


@dataclass(frozen=True)
class SolveReport:
    labeling: np.ndarray
    energy: float
    trace: List[float]
    moves: List[MoveRecord]
    iterations: int
    converged: bool

    def as_dict(self) -> dict:
        return {
            "energy": self.energy,
            "trace": list(self.trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "moves": [
                {"alpha": m.alpha, "changed": m.changed, "unlabeled": m.unlabeled,
                 "accepted": m.accepted, "energy": m.energy}
                for m in self.moves
            ],
        }


def expansion_order(n_labels: int) -> List[int]:
    """Image labels by index, then the occlusion label."""
    return list(range(1, n_labels)) + [OCCLUDED]


def alpha_expansion(
    model: Union[EnergyModel, PairwiseMRF],
    init: Optional[np.ndarray] = None,
    max_cycles: int = 50,
    order: Optional[Sequence[int]] = None,
    improve: bool = True,
) -> SolveReport:
    """Minimise the model energy by expansion moves.

    A move is applied only when it strictly lowers the exact energy; QPBO
    unlabeled pixels keep their current label.  Stops after a cycle with no
    accepted move (converged) or after ``max_cycles`` cycles.
    """
    mrf = _as_mrf(model)
    if init is None:
        if not isinstance(model, EnergyModel):
            raise ValueError("an initial labeling is required for a bare MRF")
        init = model.initial_labeling()
    x = np.asarray(init, dtype=np.int64).reshape(mrf.shape).copy()
    if x.min() < 0 or x.max() >= mrf.n_labels:
        raise ValueError("initial labeling contains labels outside the label set")
    order = list(order) if order is not None else expansion_order(mrf.n_labels)

    energy = mrf.energy(x)
    trace = [energy]
    moves: List[MoveRecord] = []
    converged = False
    cycles = 0
    while cycles < max_cycles:
        cycles += 1
        improved = False
        for alpha in order:
            move = build_expansion(x, alpha, mrf)
            if move.problem.n == 0:
                moves.append(MoveRecord(alpha, 0, 0, False, energy))
                continue
            b = qpbo_solve(move.problem, improve=improve)
            unl = int(np.count_nonzero(b == UNLABELED))
            b = np.where(b == UNLABELED, 0, b)
            changed = int(np.count_nonzero(b))
            accepted = False
            if changed:
                cand = move.apply(b)
                e_new = mrf.energy(cand)
                if e_new < energy:
                    x, energy = cand, e_new
                    trace.append(energy)
                    accepted = improved = True
            moves.append(MoveRecord(alpha, changed if accepted else 0, unl, accepted, energy))
            logger.debug("cycle %d alpha %d: changed %d unlabeled %d energy %.6g", cycles, alpha, changed, unl, energy)
        if not improved:
            converged = True
            break
    return SolveReport(x, energy, trace, moves, cycles, converged)
