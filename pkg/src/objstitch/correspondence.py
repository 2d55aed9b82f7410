"""
Cross-image object correspondence by match density, closed into
equivalence classes over any number of images.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import DetectedObject, PointMatchSet, in_mask

logger = logging.getLogger(__name__)

RAISE_STEP = 1.25


@dataclass(frozen=True)
class DensityConfig:
    threshold: float = 0.05
    category_strict: bool = True

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("density threshold must be > 0")


@dataclass(frozen=True)
class ObjectPair:
    a: DetectedObject
    b: DetectedObject
    score: float


def correspondence_density(o1: DetectedObject, o2: DetectedObject, matches: PointMatchSet) -> float:
    """Matches with p inside o1 and q inside o2, per pixel of o1.

    ``o1`` lives in the frame of ``matches.p`` and ``o2`` in that of ``matches.q``.
    """
    area = o1.area
    if area == 0:
        raise ValueError("object has an empty mask")
    if len(matches) == 0:
        return 0.0
    hit = in_mask(o1.mask, matches.p) & in_mask(o2.mask, matches.q)
    return float(np.count_nonzero(hit)) / area


def feature_coherence_score(o1: DetectedObject, o2: DetectedObject, matches: PointMatchSet) -> Optional[float]:
    """Experimental alternative metric, not used by the pipeline.

    Mean distance between the displacement vectors of all pairs of matches
    that start inside o1 and land inside o2; small values mean spatially
    coherent matches.  None when fewer than two such matches exist.
    """
    hit = in_mask(o1.mask, matches.p) & in_mask(o2.mask, matches.q)
    d = (np.asarray(matches.q) - np.asarray(matches.p))[hit]
    if len(d) < 2:
        return None
    diff = np.sqrt(((d[:, None, :] - d[None, :, :]) ** 2).sum(axis=-1))
    n = len(d)
    return float(diff.sum() / (n * (n - 1)))


def score_pairs(
    objs_a: Sequence[DetectedObject],
    objs_b: Sequence[DetectedObject],
    matches: PointMatchSet,
    cfg: DensityConfig = DensityConfig(),
) -> List[ObjectPair]:
    """All admissible candidate pairs with their densities."""
    out = []
    for a in objs_a:
        for b in objs_b:
            if cfg.category_strict and a.category != b.category:
                continue
            out.append(ObjectPair(a, b, correspondence_density(a, b, matches)))
    return out


def greedy_assign(cands: Sequence[ObjectPair], threshold: float) -> List[ObjectPair]:
    """Best-score-first one-to-one assignment of pairs scoring above ``threshold``.

    Ties go to the lexicographically smaller (source, index) keys.
    """
    order = sorted(
        (c for c in cands if c.score > threshold),
        key=lambda c: (-c.score, c.a.key, c.b.key),
    )
    used_a, used_b, out = set(), set(), []
    for c in order:
        if c.a.key in used_a or c.b.key in used_b:
            continue
        used_a.add(c.a.key)
        used_b.add(c.b.key)
        out.append(c)
    return out


def match_objects(
    objs_a: Sequence[DetectedObject],
    objs_b: Sequence[DetectedObject],
    matches: PointMatchSet,
    cfg: DensityConfig = DensityConfig(),
) -> List[ObjectPair]:
    return greedy_assign(score_pairs(objs_a, objs_b, matches, cfg), cfg.threshold)


class _UnionFind:
    def __init__(self, keys):
        self.parent = {k: k for k in keys}

    def find(self, k):
        while self.parent[k] != k:
            self.parent[k] = self.parent[self.parent[k]]
            k = self.parent[k]
        return k

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass(frozen=True)
class ObjectMatchSet:
    """Equivalence classes of detections (singletons included).

    Members of each class are ordered by (source, index); classes by their
    first member.
    """

    classes: Tuple[Tuple[DetectedObject, ...], ...]
    scores: Dict[Tuple[Tuple[int, int], Tuple[int, int]], float] = field(default_factory=dict)
    threshold: float = 0.0

    def pairs(self) -> List[Tuple[DetectedObject, DetectedObject]]:
        """All member pairs of every non-trivial class, lower source first."""
        out = []
        for cls in self.classes:
            for a, b in itertools.combinations(cls, 2):
                out.append((a, b))
        return out

    def matched_classes(self) -> List[Tuple[DetectedObject, ...]]:
        return [c for c in self.classes if len(c) > 1]

    def counts_by_category(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for cls in self.classes:
            out[cls[0].category] = out.get(cls[0].category, 0) + 1
        return dict(sorted(out.items()))

    def class_of(self, o: DetectedObject) -> int:
        for i, cls in enumerate(self.classes):
            if any(m.key == o.key for m in cls):
                return i
        raise KeyError(o.key)


def _classes(objects: Sequence[Sequence[DetectedObject]], matched: Sequence[ObjectPair]):
    allobj = {o.key: o for objs in objects for o in objs}
    uf = _UnionFind(sorted(allobj))
    for pr in matched:
        uf.union(pr.a.key, pr.b.key)
    groups: Dict[Tuple[int, int], List[DetectedObject]] = {}
    for key in sorted(allobj):
        groups.setdefault(uf.find(key), []).append(allobj[key])
    return sorted((tuple(g) for g in groups.values()), key=lambda g: g[0].key)


def _consistent(classes) -> bool:
    for cls in classes:
        srcs = [o.source_id for o in cls]
        if len(set(srcs)) != len(srcs):
            return False
    return True


def build_equivalence(
    objects: Sequence[Sequence[DetectedObject]],
    matches: Mapping[Tuple[int, int], PointMatchSet],
    cfg: DensityConfig = DensityConfig(),
) -> ObjectMatchSet:
    """Close pairwise object matches over all image pairs into classes.

    ``objects[i]`` holds the detections of image i; ``matches[(i, j)]``
    (i < j) relates image i (``p``) to image j (``q``).  When a class would
    contain two detections of one image, the density threshold is raised by
    a factor RAISE_STEP and all pairs are re-matched.
    """
    k = len(objects)
    if k < 1:
        raise ValueError("need at least one image")
    for i, objs in enumerate(objects):
        for o in objs:
            if o.source_id != i:
                raise ValueError(f"detection {o!r} listed under image {i}")
    cands: Dict[Tuple[int, int], List[ObjectPair]] = {}
    for i, j in itertools.combinations(range(k), 2):
        ms = matches.get((i, j))
        if ms is None and (j, i) in matches:
            ms = matches[(j, i)].swapped()
        if ms is None:
            continue
        cands[(i, j)] = score_pairs(objects[i], objects[j], ms, cfg)
    scores = {(c.a.key, c.b.key): c.score for cl in cands.values() for c in cl}
    finite = [s for s in scores.values()]
    tau = cfg.threshold
    while True:
        matched = [pr for key in sorted(cands) for pr in greedy_assign(cands[key], tau)]
        classes = _classes(objects, matched)
        if _consistent(classes):
            return ObjectMatchSet(tuple(classes), scores, tau)
        if not matched or tau > max(finite):
            # cannot happen: with no matches every class is a singleton
            raise RuntimeError("equivalence closure failed to become consistent")
        logger.info("object classes inconsistent at threshold %.4g; raising", tau)
        tau *= RAISE_STEP
