"""
Object-aware seam energy over the label set {OCCLUDED, 1, ..., k}.

Label ``l >= 1`` selects warped source ``l - 1`` (source 0 is the
reference).  Every term is available both as a direct reduction over a
labeling and compiled into a :class:`PairwiseMRF` for the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import OCCLUDED, DetectedObject, Raster


DENSE_CROP_MAX_PIXELS = 12


@dataclass(frozen=True)
class EnergyParams:
    lambda_d: float = 50.0
    lambda_s: float = 1.0
    lambda_c: float = 4.0
    lambda_r: float = 4.0
    lambda_o: Optional[float] = None  # None -> same as lambda_d
    delta: float = 0.5
    radius: int = 1

    def __post_init__(self):
        for name in ("lambda_d", "lambda_s", "lambda_c", "lambda_r"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.lambda_o is not None and (not np.isfinite(self.lambda_o) or self.lambda_o < 0):
            raise ValueError(f"lambda_o must be finite and >= 0, got {self.lambda_o}")
        if not np.isfinite(self.delta) or self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if int(self.radius) != self.radius or self.radius < 0:
            raise ValueError(f"radius must be a non-negative integer, got {self.radius}")

    @property
    def occlusion_weight(self) -> float:
        return self.lambda_d if self.lambda_o is None else self.lambda_o

    def resolved(self) -> "EnergyParams":
        return replace(self, lambda_o=self.occlusion_weight)


@dataclass(frozen=True)
class EnergyTerms:
    """Weighted per-term energies of one labeling."""

    data: float
    smoothness: float
    crop: float
    duplication: float
    occlusion: float

    @property
    def total(self) -> float:
        return self.data + self.smoothness + self.crop + self.duplication + self.occlusion

    def as_dict(self) -> Dict[str, float]:
        return {
            "data": self.data,
            "smoothness": self.smoothness,
            "crop": self.crop,
            "duplication": self.duplication,
            "occlusion": self.occlusion,
            "total": self.total,
        }


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

def grid_edges(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """4-connected edges as flat index pairs: all horizontal edges row-major,
    then all vertical edges row-major."""
    idx = np.arange(height * width).reshape(height, width)
    hi, hj = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    vi, vj = idx[:-1, :].ravel(), idx[1:, :].ravel()
    return np.concatenate([hi, vi]), np.concatenate([hj, vj])


def diamond_offsets(r: int) -> List[Tuple[int, int]]:
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if abs(dy) + abs(dx) <= r]


def patch_offsets(r: int, horizontal: bool) -> List[Tuple[int, int]]:
    """Offsets (relative to p) of the union of the radius-r L1 balls around p and q,
    where q is p's right (horizontal) or lower neighbour."""
    q = (0, 1) if horizontal else (1, 0)
    ball = diamond_offsets(r)
    union = set(ball) | {(dy + q[0], dx + q[1]) for dy, dx in ball}
    return sorted(union)


def bbox_bilinear_map(p, bbox1, bbox2) -> np.ndarray:
    """Map points through the affine map taking box 1 onto box 2.

    ``p`` is (x, y) or an (n, 2) array; boxes are (x, y, w, h).
    """
    x1, y1, w1, h1 = map(float, bbox1)
    x2, y2, w2, h2 = map(float, bbox2)
    if w1 <= 0 or h1 <= 0 or w2 <= 0 or h2 <= 0:
        raise ValueError(f"degenerate bounding box: {bbox1} -> {bbox2}")
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    out[..., 0] = x2 + (p[..., 0] - x1) / w1 * w2
    out[..., 1] = y2 + (p[..., 1] - y1) / h1 * h2
    return out


def object_bbox(o: DetectedObject) -> Tuple[float, float, float, float]:
    """Pixel-extent box of an object's mask: (x0, y0, x1 - x0 + 1, y1 - y0 + 1)."""
    ys, xs = np.nonzero(o.mask)
    x0, y0 = xs.min(), ys.min()
    return float(x0), float(y0), float(xs.max() - x0 + 1), float(ys.max() - y0 + 1)


def duplication_links(o1: DetectedObject, o2: DetectedObject, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Flat (p, m_b(p)) index pairs for p in o1 whose image lands in the canvas
    and differs from p."""
    h, w = shape
    ys, xs = np.nonzero(o1.mask)
    pts = np.column_stack([xs, ys]).astype(np.float64)
    q = np.floor(bbox_bilinear_map(pts, object_bbox(o1), object_bbox(o2)) + 0.5).astype(np.int64)
    ok = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
    p_flat = ys * w + xs
    q_flat = q[:, 1] * w + q[:, 0]
    ok &= p_flat != q_flat
    return p_flat[ok], q_flat[ok]


# ---------------------------------------------------------------------------
# Compiled pairwise MRF
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairwiseMRF:
    """Generic pairwise energy: sum_p unary[p, x_p] + sum_e tables[e, x_pi, x_pj].

    Parallel edges are allowed.
    """

    shape: Tuple[int, int]
    unary: np.ndarray
    pi: np.ndarray
    pj: np.ndarray
    tables: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]

    def energy(self, labels) -> float:
        x = np.asarray(labels).ravel()
        u = self.unary[np.arange(len(x)), x].sum()
        if len(self.pi):
            u += self.tables[np.arange(len(self.pi)), x[self.pi], x[self.pj]].sum()
        return float(u)


# ---------------------------------------------------------------------------
# Energy model
# ---------------------------------------------------------------------------

class EnergyModel:
    """Immutable seam-energy instance on a canvas.

    ``images`` are the warped sources on a common canvas (index 0 is the
    reference, label 1).  ``objects`` are detections in canvas coordinates
    with ``source_id`` equal to the image index.  ``pairs`` lists matched
    object pairs ``(o1, o2)`` from distinct sources.
    """

    def __init__(
        self,
        images: Sequence[Raster],
        objects: Sequence[DetectedObject] = (),
        pairs: Sequence[Tuple[DetectedObject, DetectedObject]] = (),
        params: EnergyParams = EnergyParams(),
        crop_mode: str = "local",
    ):
        if not images:
            raise ValueError("need at least one image")
        shape = images[0].shape
        for im in images:
            if im.shape != shape or im.channels != images[0].channels:
                raise ValueError("all warped images must share canvas shape and channel count")
        if crop_mode not in ("local", "dense"):
            raise ValueError(f"unknown crop mode {crop_mode!r}")
        self.shape = shape
        self.k = len(images)
        self.n_labels = self.k + 1
        self.params = params
        self.crop_mode = crop_mode
        self.images = np.stack([im.data for im in images])
        self.masks = np.stack([im.mask for im in images])
        for a in (self.images, self.masks):
            a.flags.writeable = False

        self.objects: List[DetectedObject] = []
        for o in objects:
            self._check_object(o)
            self.objects.append(o)
        self.pairs: List[Tuple[DetectedObject, DetectedObject]] = []
        for o1, o2 in pairs:
            self._check_object(o1)
            self._check_object(o2)
            if o1.source_id == o2.source_id:
                raise ValueError("matched objects must come from distinct sources")
            self.pairs.append((o1, o2))
        if crop_mode == "dense":
            for o in self.objects:
                if o.area > DENSE_CROP_MAX_PIXELS:
                    raise ValueError(f"dense crop term limited to {DENSE_CROP_MAX_PIXELS}-pixel objects")

        self.pi, self.pj = grid_edges(*shape)
        self.n_h = shape[0] * (shape[1] - 1)
        self.patch = self._patch_costs()
        self.i_max = float(self.patch.max()) if self.patch.size else 0.0
        self._mrf: Optional[PairwiseMRF] = None

    def _check_object(self, o: DetectedObject):
        if o.mask.shape != self.shape:
            raise ValueError(f"object mask {o.mask.shape} does not match canvas {self.shape}")
        if not 0 <= o.source_id < self.k:
            raise ValueError(f"object source {o.source_id} out of range for {self.k} images")

    @staticmethod
    def label_of(o: DetectedObject) -> int:
        return o.source_id + 1

    @property
    def n_pixels(self) -> int:
        return self.shape[0] * self.shape[1]

    # -- smoothness support -------------------------------------------------

    def pair_difference(self, a: int, b: int) -> np.ndarray:
        """Per-pixel L1 colour difference of sources a, b (0-based), zero where
        either is outside its mask."""
        d = np.abs(self.images[a] - self.images[b]).sum(axis=-1)
        return np.where(self.masks[a] & self.masks[b], d, 0.0)

    def _patch_costs(self) -> np.ndarray:
        """patch[a, b, e]: patch difference sum of sources a, b over edge e."""
        h, w = self.shape
        r = int(self.params.radius)
        m = len(self.pi)
        out = np.zeros((self.k, self.k, m))
        for a in range(self.k):
            for b in range(a + 1, self.k):
                d = np.pad(self.pair_difference(a, b), r + 1)
                hs = np.zeros((h, max(w - 1, 0)))
                vs = np.zeros((max(h - 1, 0), w))
                for dy, dx in patch_offsets(r, True):
                    hs += d[r + 1 + dy: r + 1 + dy + h, r + 1 + dx: r + 1 + dx + w - 1]
                for dy, dx in patch_offsets(r, False):
                    vs += d[r + 1 + dy: r + 1 + dy + h - 1, r + 1 + dx: r + 1 + dx + w]
                s = np.concatenate([hs.ravel(), vs.ravel()])
                out[a, b] = s
                out[b, a] = s
        return out

    def edge_index(self, p: Tuple[int, int], q: Tuple[int, int]) -> int:
        """Index of the 4-neighbour edge joining pixels p, q given as (x, y)."""
        (x1, y1), (x2, y2) = p, q
        h, w = self.shape
        if abs(x1 - x2) + abs(y1 - y2) != 1:
            raise ValueError(f"pixels {p} and {q} are not 4-adjacent")
        if y1 == y2:
            x = min(x1, x2)
            return y1 * (w - 1) + x
        y = min(y1, y2)
        return self.n_h + y * w + x1

    # -- compile ------------------------------------------------------------

    @property
    def mrf(self) -> PairwiseMRF:
        if self._mrf is None:
            self._mrf = self._compile()
        return self._mrf

    def data_unary(self) -> np.ndarray:
        """Unweighted data cost per (pixel, label)."""
        n = self.n_pixels
        u = np.empty((n, self.n_labels))
        u[:, OCCLUDED] = 1.0 + self.params.delta
        u[:, 1:] = np.where(self.masks.reshape(self.k, n).T, 0.0, 1.0)
        return u

    def occlusion_unary(self) -> np.ndarray:
        """Unweighted occlusion cost per (pixel, label)."""
        n = self.n_pixels
        u = np.zeros((n, self.n_labels))
        for o1, o2 in self.pairs:
            for o in (o1, o2):
                lab = self.label_of(o)
                hit = (o.mask & ~self.masks[o.source_id]).ravel()
                u[hit, lab] += 2.0 * self.params.delta
        return u

    def _compile(self) -> PairwiseMRF:
        p = self.params
        L = self.n_labels
        unary = p.lambda_d * self.data_unary() + p.occlusion_weight * self.occlusion_unary()

        m = len(self.pi)
        tables = np.zeros((m, L, L))
        img = slice(1, L)
        tables[:, img, img] = p.lambda_s * np.transpose(self.patch, (2, 0, 1))
        tables[:, 0, img] = p.lambda_s * self.i_max
        tables[:, img, 0] = p.lambda_s * self.i_max
        diag = np.arange(L)
        tables[:, diag, diag] = 0.0

        ex_pi, ex_pj, ex_t = [], [], []
        if self.crop_mode == "local":
            for o in self.objects:
                lab = self.label_of(o)
                inside = o.mask.ravel()
                ind = np.zeros((L, L))
                ind[lab, :] = 1.0
                ind[lab, lab] = 0.0  # [a == lab and b != lab]
                sel = inside[self.pi] | inside[self.pj]
                for e in np.flatnonzero(sel):
                    if inside[self.pi[e]]:
                        tables[e] += p.lambda_c * ind
                    if inside[self.pj[e]]:
                        tables[e] += p.lambda_c * ind.T
        else:
            for o in self.objects:
                lab = self.label_of(o)
                ind = np.zeros((L, L))
                ind[lab, :] = 1.0
                ind[lab, lab] = 0.0
                pix = np.flatnonzero(o.mask.ravel())
                for i in range(len(pix)):
                    for j in range(i + 1, len(pix)):
                        ex_pi.append(pix[i])
                        ex_pj.append(pix[j])
                        ex_t.append(p.lambda_c * (ind + ind.T))

        for o1, o2 in self.pairs:
            l1, l2 = self.label_of(o1), self.label_of(o2)
            a, b = duplication_links(o1, o2, self.shape)
            t = np.zeros((L, L))
            t[l1, l2] = p.lambda_r
            for u, v in zip(a, b):
                ex_pi.append(u)
                ex_pj.append(v)
                ex_t.append(t)

        if ex_pi:
            pi = np.concatenate([self.pi, np.array(ex_pi, dtype=np.int64)])
            pj = np.concatenate([self.pj, np.array(ex_pj, dtype=np.int64)])
            tables = np.concatenate([tables, np.stack(ex_t)])
        else:
            pi, pj = self.pi.copy(), self.pj.copy()
        for a in (unary, pi, pj, tables):
            a.flags.writeable = False
        return PairwiseMRF(self.shape, unary, pi, pj, tables)

    # -- initial labeling ---------------------------------------------------

    def initial_labeling(self) -> np.ndarray:
        """Lowest-index in-mask label per pixel; OCCLUDED where no source is valid."""
        lab = np.zeros(self.shape, dtype=np.int64)
        for i in range(self.k - 1, -1, -1):
            lab[self.masks[i]] = i + 1
        return lab


# ---------------------------------------------------------------------------
# Direct term evaluation
# ---------------------------------------------------------------------------

def _check_labeling(labeling, model: EnergyModel) -> np.ndarray:
    x = np.asarray(labeling)
    if x.shape != model.shape:
        raise ValueError(f"labeling shape {x.shape} does not match canvas {model.shape}")
    if x.size and (x.min() < 0 or x.max() >= model.n_labels):
        raise ValueError("labeling contains labels outside the label set")
    return x.astype(np.int64)


def data_cost(p, label: int, model: EnergyModel) -> float:
    """Unweighted data cost of giving pixel p = (x, y) the given label."""
    x, y = p
    if label == OCCLUDED:
        return 1.0 + model.params.delta
    return 0.0 if model.masks[label - 1, y, x] else 1.0


def smoothness_cost(p, q, lp: int, lq: int, model: EnergyModel) -> float:
    """Unweighted smoothness cost of adjacent pixels p, q = (x, y) with labels lp, lq.

    Evaluated directly from the patch definition (not from the cached sums).
    """
    (x1, y1), (x2, y2) = p, q
    if abs(x1 - x2) + abs(y1 - y2) != 1:
        raise ValueError(f"pixels {p} and {q} are not 4-adjacent")
    if lp == lq:
        return 0.0
    if (lp == OCCLUDED) != (lq == OCCLUDED):
        return model.i_max
    a, b = lp - 1, lq - 1
    h, w = model.shape
    r = int(model.params.radius)
    cells = set()
    for cx, cy in ((x1, y1), (x2, y2)):
        for dy, dx in diamond_offsets(r):
            cells.add((cx + dx, cy + dy))
    total = 0.0
    for kx, ky in sorted(cells):
        if not (0 <= kx < w and 0 <= ky < h):
            continue
        if not (model.masks[a, ky, kx] and model.masks[b, ky, kx]):
            continue
        total += float(np.abs(model.images[a, ky, kx] - model.images[b, ky, kx]).sum())
    return total


def _neighbour_violations(x: np.ndarray, inside: np.ndarray, label: int) -> int:
    """Count ordered (p in region, q 4-neighbour of p) with x_p = label != x_q."""
    is_l = x == label
    src = inside & is_l
    total = 0
    total += np.count_nonzero(src[:, :-1] & ~is_l[:, 1:])
    total += np.count_nonzero(src[:, 1:] & ~is_l[:, :-1])
    total += np.count_nonzero(src[:-1, :] & ~is_l[1:, :])
    total += np.count_nonzero(src[1:, :] & ~is_l[:-1, :])
    return int(total)


def crop_cost(labeling, o: DetectedObject, label: int, model: EnergyModel) -> float:
    """Unweighted local crop cost of object o with respect to a label."""
    x = _check_labeling(labeling, model)
    return float(_neighbour_violations(x, o.mask, label))


def dense_crop_cost(labeling, o: DetectedObject, label: int, model: EnergyModel) -> float:
    """Unweighted all-pairs crop cost: ordered (p, q) in o x o with x_p = label != x_q."""
    x = _check_labeling(labeling, model)
    if o.area > DENSE_CROP_MAX_PIXELS:
        raise ValueError(f"dense crop term limited to {DENSE_CROP_MAX_PIXELS}-pixel objects")
    vals = x[o.mask]
    n_in = int(np.count_nonzero(vals == label))
    return float(n_in * (len(vals) - n_in))


def duplication_cost(labeling, pair, model: EnergyModel) -> float:
    """Unweighted duplication cost of a matched pair (o1, o2)."""
    x = _check_labeling(labeling, model).ravel()
    o1, o2 = pair
    l1, l2 = EnergyModel.label_of(o1), EnergyModel.label_of(o2)
    a, b = duplication_links(o1, o2, model.shape)
    return float(np.count_nonzero((x[a] == l1) & (x[b] == l2)))


def occlusion_cost(labeling, pair, model: EnergyModel) -> float:
    """Unweighted occlusion cost of a matched pair (o1, o2)."""
    x = _check_labeling(labeling, model)
    total = 0
    for o in pair:
        lab = EnergyModel.label_of(o)
        total += int(np.count_nonzero(o.mask & ~model.masks[o.source_id] & (x == lab)))
    return 2.0 * model.params.delta * total


def total_energy(labeling, model: EnergyModel) -> EnergyTerms:
    """Weighted energy terms of a labeling, reduced directly from the definitions."""
    x = _check_labeling(labeling, model)
    p = model.params
    flat = x.ravel()
    n = flat.size
    valid = model.masks.reshape(model.k, n)
    img = flat > 0
    data = np.count_nonzero(img & ~valid[np.maximum(flat - 1, 0), np.arange(n)]) * 1.0
    data += np.count_nonzero(~img) * (1.0 + p.delta)

    a, b = flat[model.pi], flat[model.pj]
    diff = a != b
    one_occ = (a == OCCLUDED) != (b == OCCLUDED)
    both = diff & ~one_occ
    e = np.flatnonzero(both)
    smooth = float(model.patch[a[e] - 1, b[e] - 1, e].sum()) + np.count_nonzero(one_occ) * model.i_max

    if model.crop_mode == "local":
        crop = sum(crop_cost(x, o, EnergyModel.label_of(o), model) for o in model.objects)
    else:
        crop = sum(dense_crop_cost(x, o, EnergyModel.label_of(o), model) for o in model.objects)
    dup = sum(duplication_cost(x, pr, model) for pr in model.pairs)
    occ = sum(occlusion_cost(x, pr, model) for pr in model.pairs)
    return EnergyTerms(
        data=p.lambda_d * data,
        smoothness=p.lambda_s * smooth,
        crop=p.lambda_c * crop,
        duplication=p.lambda_r * dup,
        occlusion=p.occlusion_weight * occ,
    )


def classical_model(model: EnergyModel) -> EnergyModel:
    """The same instance with only the data and smoothness terms."""
    images = [Raster(model.images[i], model.masks[i]) for i in range(model.k)]
    return EnergyModel(images, (), (), model.params)
