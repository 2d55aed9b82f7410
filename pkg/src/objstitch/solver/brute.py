"""Exhaustive minimisation of small pairwise MRFs (correctness oracle)."""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np
from numba import njit

from ..energy import EnergyModel, PairwiseMRF

MAX_STATES = 10 ** 8


class OracleSizeError(ValueError):
    pass


@njit(cache=True)
def _search(unary, back_first, back_edge, back_other, back_flip, tables, suffix):
    n, L = unary.shape
    lab = np.full(n, -1, dtype=np.int64)
    best_lab = np.zeros(n, dtype=np.int64)
    acc = np.zeros(n + 1)
    best = np.inf
    i = 0
    while i >= 0:
        lab[i] += 1
        if lab[i] >= L:
            lab[i] = -1
            i -= 1
            continue
        li = lab[i]
        c = acc[i] + unary[i, li]
        for k in range(back_first[i], back_first[i + 1]):
            e = back_edge[k]
            lj = lab[back_other[k]]
            if back_flip[k]:
                c += tables[e, lj, li]
            else:
                c += tables[e, li, lj]
        if c + suffix[i + 1] >= best:
            continue
        if i == n - 1:
            best = c
            best_lab[:] = lab
            continue
        acc[i + 1] = c
        i += 1
    return best_lab, best


def brute_force_minimize(model: Union[EnergyModel, PairwiseMRF]) -> Tuple[np.ndarray, float]:
    """Exact global minimum by depth-first enumeration with bound pruning.

    Ties resolve to the lexicographically smallest labeling (row-major pixel
    order).  Refuses instances with more than MAX_STATES labelings.
    """
    mrf = model.mrf if isinstance(model, EnergyModel) else model
    n, L = mrf.unary.shape
    if n * np.log10(max(L, 1)) > np.log10(MAX_STATES) + 1e-12:
        raise OracleSizeError(f"{L}^{n} labelings exceeds the oracle bound of {MAX_STATES}")
    pi, pj = mrf.pi, mrf.pj
    if np.any(pi == pj):
        raise ValueError("self-loop edges are not supported")
    later = np.maximum(pi, pj)
    earlier = np.minimum(pi, pj)
    order = np.argsort(later, kind="stable")
    back_first = np.zeros(n + 1, dtype=np.int64)
    np.add.at(back_first, later + 1, 1)
    back_first = np.cumsum(back_first)
    back_edge = order.astype(np.int64)
    back_other = earlier[order].astype(np.int64)
    back_flip = pj[order] > pi[order]  # later node is pj: table[x_earlier, x_later]
    tmin = mrf.tables.reshape(len(pi), -1).min(axis=1) if len(pi) else np.zeros(0)
    suffix = np.zeros(n + 1)
    umin = mrf.unary.min(axis=1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + umin[i] + tmin[later == i].sum()
    lab, best = _search(
        np.ascontiguousarray(mrf.unary), back_first, back_edge, back_other,
        back_flip, np.ascontiguousarray(mrf.tables), suffix,
    )
    lab = lab.reshape(mrf.shape)
    return lab, mrf.energy(lab)
