"""
Roof-duality (QPBO) solver for binary pairwise energies.

Each variable p gets two network nodes, p and its mirror p + n; p on the
source side means x_p = 0, the mirror on the source side means x_p = 1.
Non-submodular terms become arcs between a node and a mirror node.  After
a maximum flow, the symmetrised residual graph yields a partial labeling
with the persistence (autarky) property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .maxflow import build_csr, dinic

UNLABELED = -1


@dataclass(frozen=True)
class BinaryProblem:
    """E(b) = sum_i cost[i, b_i] + sum_e pair[e, b_ei, b_ej].

    ``pair`` rows are (E00, E01, E10, E11) with E01 meaning b_ei = 0, b_ej = 1.
    """

    cost0: np.ndarray
    cost1: np.ndarray
    ei: np.ndarray
    ej: np.ndarray
    pair: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        n = len(self.cost0)
        if len(self.cost1) != n:
            raise ValueError("cost0 and cost1 differ in length")
        if self.pair.shape != (len(self.ei), 4) or len(self.ej) != len(self.ei):
            raise ValueError("pairwise table must be (m, 4) matching the edge list")
        if len(self.ei) and (min(self.ei.min(), self.ej.min()) < 0 or max(self.ei.max(), self.ej.max()) >= n):
            raise ValueError("edge endpoint out of range")
        if not (np.all(np.isfinite(self.cost0)) and np.all(np.isfinite(self.cost1)) and np.all(np.isfinite(self.pair))):
            raise ValueError("costs must be finite")

    @property
    def n(self) -> int:
        return len(self.cost0)

    def energy(self, b) -> float:
        b = np.asarray(b, dtype=np.int64)
        u = np.where(b == 1, self.cost1, self.cost0).sum()
        if len(self.ei):
            u += self.pair[np.arange(len(self.ei)), 2 * b[self.ei] + b[self.ej]].sum()
        return float(u)

    def is_submodular(self) -> np.ndarray:
        a, b, c, d = self.pair.T
        return a + d <= b + c


@njit(cache=True)
def _build_network(n, cost0, cost1, ei, ej, pair):
    """Arcs of the doubled network, in mirror pairs; returns (head, cap)."""
    a = cost1 - cost0
    m = ei.shape[0]
    arcs_u = np.empty(2 * m + 2 * n, dtype=np.int64)
    arcs_v = np.empty(2 * m + 2 * n, dtype=np.int64)
    arcs_c = np.empty(2 * m + 2 * n, dtype=np.float64)
    na = 0
    for e in range(m):
        p, q = ei[e], ej[e]
        A, B, C, D = pair[e, 0], pair[e, 1], pair[e, 2], pair[e, 3]
        if A + D <= B + C:
            a[p] += C - A
            a[q] += D - C
            w = B + C - A - D
            if w > 0:
                arcs_u[na], arcs_v[na], arcs_c[na] = p, q, 0.5 * w
                arcs_u[na + 1], arcs_v[na + 1], arcs_c[na + 1] = q + n, p + n, 0.5 * w
                na += 2
        else:
            a[p] += C - A
            a[q] += B - A
            k = A + D - B - C
            arcs_u[na], arcs_v[na], arcs_c[na] = q + n, p, 0.5 * k
            arcs_u[na + 1], arcs_v[na + 1], arcs_c[na + 1] = p + n, q, 0.5 * k
            na += 2
    s, t = 2 * n, 2 * n + 1
    for p in range(n):
        if a[p] > 0:
            arcs_u[na], arcs_v[na], arcs_c[na] = s, p, 0.5 * a[p]
            arcs_u[na + 1], arcs_v[na + 1], arcs_c[na + 1] = p + n, t, 0.5 * a[p]
            na += 2
        elif a[p] < 0:
            arcs_u[na], arcs_v[na], arcs_c[na] = p, t, -0.5 * a[p]
            arcs_u[na + 1], arcs_v[na + 1], arcs_c[na + 1] = s, p + n, -0.5 * a[p]
            na += 2
    head = np.empty(2 * na, dtype=np.int64)
    cap = np.zeros(2 * na, dtype=np.float64)
    for i in range(na):
        head[2 * i] = arcs_v[i]
        head[2 * i + 1] = arcs_u[i]
        cap[2 * i] = arcs_c[i]
    return head, cap


@njit(cache=True)
def _mirror_arc(e):
    return 2 * ((e >> 1) ^ 1) + (e & 1)


@njit(cache=True)
def _live(res, e, eps):
    return res[e] > eps or res[_mirror_arc(e)] > eps


@njit(cache=True)
def _mirror_node(v, n):
    if v < n:
        return v + n
    if v < 2 * n:
        return v - n
    return 2 * n + (1 - (v - 2 * n))


@njit(cache=True)
def _label(n, first, adj, head, res, eps, improve):
    nn = 2 * n + 2
    s = 2 * n
    reach = np.zeros(nn, dtype=np.bool_)
    stack = np.empty(nn, dtype=np.int64)
    reach[s] = True
    stack[0] = s
    sp = 1
    while sp > 0:
        sp -= 1
        v = stack[sp]
        for k in range(first[v], first[v + 1]):
            e = adj[k]
            w = head[e]
            if not reach[w] and _live(res, e, eps):
                reach[w] = True
                stack[sp] = w
                sp += 1
    x = np.full(n, -1, dtype=np.int64)
    n_un = 0
    for p in range(n):
        if reach[p]:
            x[p] = 0
        elif reach[p + n]:
            x[p] = 1
        else:
            n_un += 1
    if not improve or n_un == 0:
        return x

    # Strongly connected components (Tarjan) over the unlabeled nodes.
    rest = np.zeros(nn, dtype=np.bool_)
    for p in range(n):
        if x[p] < 0:
            rest[p] = True
            rest[p + n] = True
    comp = np.full(nn, -1, dtype=np.int64)
    index = np.full(nn, -1, dtype=np.int64)
    low = np.zeros(nn, dtype=np.int64)
    onstack = np.zeros(nn, dtype=np.bool_)
    tstack = np.empty(nn, dtype=np.int64)
    tsp = 0
    cstack_v = np.empty(nn, dtype=np.int64)
    cstack_k = np.empty(nn, dtype=np.int64)
    counter = 0
    ncomp = 0
    for root in range(2 * n):
        if not rest[root] or index[root] >= 0:
            continue
        csp = 0
        cstack_v[0] = root
        cstack_k[0] = first[root]
        csp = 1
        index[root] = counter
        low[root] = counter
        counter += 1
        tstack[tsp] = root
        tsp += 1
        onstack[root] = True
        while csp > 0:
            v = cstack_v[csp - 1]
            k = cstack_k[csp - 1]
            pushed = False
            while k < first[v + 1]:
                e = adj[k]
                w = head[e]
                k += 1
                if not rest[w] or not _live(res, e, eps):
                    continue
                if index[w] < 0:
                    cstack_k[csp - 1] = k
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    tstack[tsp] = w
                    tsp += 1
                    onstack[w] = True
                    cstack_v[csp] = w
                    cstack_k[csp] = first[w]
                    csp += 1
                    pushed = True
                    break
                elif onstack[w]:
                    if index[w] < low[v]:
                        low[v] = index[w]
            if pushed:
                continue
            cstack_k[csp - 1] = k
            if low[v] == index[v]:
                while True:
                    tsp -= 1
                    w = tstack[tsp]
                    onstack[w] = False
                    comp[w] = ncomp
                    if w == v:
                        break
                ncomp += 1
            csp -= 1
            if csp > 0:
                u = cstack_v[csp - 1]
                if low[v] < low[u]:
                    low[u] = low[v]

    # Mirror component of each component, and component successor lists.
    cmirror = np.full(ncomp, -1, dtype=np.int64)
    for v in range(2 * n):
        if comp[v] >= 0:
            cmirror[comp[v]] = comp[_mirror_node(v, n)]
    # Tarjan emits components in reverse topological order (sinks first).
    members_first = np.zeros(ncomp + 1, dtype=np.int64)
    for v in range(2 * n):
        if comp[v] >= 0:
            members_first[comp[v] + 1] += 1
    for c in range(ncomp):
        members_first[c + 1] += members_first[c]
    fill = members_first[:-1].copy()
    members = np.empty(members_first[-1], dtype=np.int64)
    for v in range(2 * n):
        c = comp[v]
        if c >= 0:
            members[fill[c]] = v
            fill[c] += 1

    side = np.zeros(ncomp, dtype=np.int64)  # 0 unassigned, 1 source side, 2 sink side
    for c in range(ncomp):
        if side[c] != 0:
            continue
        succ_sink = False
        mirror_src = False
        for mi in range(members_first[c], members_first[c + 1]):
            v = members[mi]
            for k in range(first[v], first[v + 1]):
                e = adj[k]
                w = head[e]
                if not rest[w] or comp[w] == c or not _live(res, e, eps):
                    continue
                d = comp[w]
                if side[d] == 2:
                    succ_sink = True
                if side[cmirror[d]] == 1:
                    mirror_src = True
        if succ_sink or cmirror[c] == c:
            side[c] = 2
            continue
        side[c] = 1
        mc = cmirror[c]
        if side[mc] == 0 and not mirror_src:
            side[mc] = 2

    for p in range(n):
        if x[p] >= 0:
            continue
        a = side[comp[p]]
        b = side[comp[p + n]]
        if a == 1 and b == 2:
            x[p] = 0
        elif a == 2 and b == 1:
            x[p] = 1
    return x


def qpbo_solve(problem: BinaryProblem, improve: bool = True) -> np.ndarray:
    """Partial minimiser of a binary problem: 0, 1 or UNLABELED (-1) per node.

    Labeled nodes are persistent: overwriting any assignment with them never
    raises the energy.  Submodular problems come back fully labeled and
    optimal.  ``improve`` enables the strongly-connected-component pass that
    labels additional nodes beyond the source-reachable set.
    """
    n = problem.n
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    ei = np.ascontiguousarray(problem.ei, dtype=np.int64)
    ej = np.ascontiguousarray(problem.ej, dtype=np.int64)
    pair = np.ascontiguousarray(problem.pair, dtype=np.float64).reshape(-1, 4)
    head, cap = _build_network(
        n, np.ascontiguousarray(problem.cost0, dtype=np.float64),
        np.ascontiguousarray(problem.cost1, dtype=np.float64), ei, ej, pair,
    )
    scale = max(1.0, float(np.abs(cap).max()) if len(cap) else 1.0)
    eps = 1e-11 * scale
    first, adj = build_csr(2 * n + 2, head)
    dinic(2 * n + 2, 2 * n, 2 * n + 1, first, adj, head, cap, eps)
    return _label(n, first, adj, head, cap, eps, improve)
