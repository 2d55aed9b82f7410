"""
Dinic max-flow on a residual network stored as paired arcs.

Residual arc ``e`` and ``e ^ 1`` are reverses of each other; ``head[e]`` is
the arc's target, so its tail is ``head[e ^ 1]``.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def build_csr(n_nodes, head):
    """Adjacency (by tail) of the residual arcs: returns (first, adj)."""
    m = head.shape[0]
    deg = np.zeros(n_nodes + 1, dtype=np.int64)
    for e in range(m):
        deg[head[e ^ 1] + 1] += 1
    for v in range(n_nodes):
        deg[v + 1] += deg[v]
    first = deg.copy()
    fill = deg[:-1].copy()
    adj = np.empty(m, dtype=np.int64)
    for e in range(m):
        u = head[e ^ 1]
        adj[fill[u]] = e
        fill[u] += 1
    return first, adj


@njit(cache=True)
def dinic(n_nodes, s, t, first, adj, head, res, eps):
    """Push a maximum flow from s to t; ``res`` is updated in place.

    Arcs with residual <= eps count as saturated.  Returns the flow value.
    """
    flow = 0.0
    level = np.empty(n_nodes, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    it = np.empty(n_nodes, dtype=np.int64)
    path = np.empty(n_nodes, dtype=np.int64)
    while True:
        level[:] = -1
        level[s] = 0
        queue[0] = s
        qh, qt = 0, 1
        while qh < qt:
            v = queue[qh]
            qh += 1
            for k in range(first[v], first[v + 1]):
                e = adj[k]
                w = head[e]
                if level[w] < 0 and res[e] > eps:
                    level[w] = level[v] + 1
                    queue[qt] = w
                    qt += 1
        if level[t] < 0:
            break
        for v in range(n_nodes):
            it[v] = first[v]
        depth = 0
        v = s
        while True:
            if v == t:
                f = np.inf
                for i in range(depth):
                    if res[path[i]] < f:
                        f = res[path[i]]
                for i in range(depth):
                    e = path[i]
                    res[e] -= f
                    res[e ^ 1] += f
                flow += f
                cut = 0
                for i in range(depth):
                    if res[path[i]] <= eps:
                        cut = i
                        break
                depth = cut
                v = s if depth == 0 else head[path[depth - 1]]
                continue
            advanced = False
            while it[v] < first[v + 1]:
                e = adj[it[v]]
                w = head[e]
                if res[e] > eps and level[w] == level[v] + 1:
                    path[depth] = e
                    depth += 1
                    v = w
                    advanced = True
                    break
                it[v] += 1
            if not advanced:
                if v == s:
                    break
                level[v] = -1
                depth -= 1
                v = head[path[depth] ^ 1]
                it[v] += 1
    return flow


class FlowNetwork:
    """Small Python front end used by tests and simple callers."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self._heads = []
        self._caps = []

    def add_edge(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> int:
        e = len(self._heads)
        self._heads += [v, u]
        self._caps += [float(cap), float(rev_cap)]
        return e

    def max_flow(self, s: int, t: int, eps: float = 1e-12):
        head = np.array(self._heads, dtype=np.int64)
        res = np.array(self._caps, dtype=np.float64)
        first, adj = build_csr(self.n, head)
        flow = dinic(self.n, s, t, first, adj, head, res, eps)
        self.residual = res
        self.head = head
        self.first, self.adj = first, adj
        return flow

    def source_side(self, s: int, eps: float = 1e-12) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        stack = [s]
        while stack:
            v = stack.pop()
            for k in range(self.first[v], self.first[v + 1]):
                e = self.adj[k]
                w = self.head[e]
                if not seen[w] and self.residual[e] > eps:
                    seen[w] = True
                    stack.append(w)
        return seen
