"""
Registration: RANSAC homography candidates, similarity filtering,
content-preserving mesh refinement and inverse-mapped resampling.

All homographies map candidate-image coordinates into the reference (or
mosaic) frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import PointMatchSet, Raster

logger = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


class NoRegistrationError(RuntimeError):
    pass


class IllPosedError(RuntimeError):
    pass


class DegenerateWarpError(ValueError):
    pass


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    inlier_threshold: float = 3.0
    min_inliers: int = 12
    max_similarity_deviation: float = 0.15
    min_distinctness: float = 10.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0 or self.max_similarity_deviation <= 0 or self.min_distinctness <= 0:
            raise ValueError("RANSAC thresholds must be positive")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be >= 4")


class Homography:
    """3x3 projective transform, scaled so the bottom-right entry is 1."""

    __slots__ = ("matrix", "inliers")

    def __init__(self, matrix, inliers: int = 0):
        m = np.array(matrix, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) < 1e-12:
            raise DegenerateWarpError("homography is not invertible")
        m.flags.writeable = False
        self.matrix = m
        self.inliers = int(inliers)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def similarity(cls, scale=1.0, angle=0.0, tx=0.0, ty=0.0) -> "Homography":
        c, s = scale * np.cos(angle), scale * np.sin(angle)
        return cls([[c, -s, tx], [s, c, ty], [0, 0, 1]])

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        hom = flat @ self.matrix[:, :2].T + self.matrix[:, 2]
        w = hom[:, 2:3]
        if np.any(np.abs(w) < 1e-12):
            raise DegenerateWarpError("point maps to infinity")
        return (hom[:, :2] / w).reshape(pts.shape)

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __repr__(self):
        return f"Homography({np.array2string(self.matrix, precision=4)})"


def image_corners(width: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


# ---------------------------------------------------------------------------
# DLT and RANSAC
# ---------------------------------------------------------------------------

def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def fit_homography(src: np.ndarray, dst: np.ndarray) -> Optional[np.ndarray]:
    """Normalised DLT; returns None for degenerate configurations."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4:
        return None
    ts, td = _normalizer(src), _normalizer(dst)
    s = src @ ts[:2, :2].T + ts[:2, 2]
    d = dst @ td[:2, :2].T + td[:2, 2]
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    a[0::2, 0], a[0::2, 1], a[0::2, 2] = -x, -y, -1
    a[0::2, 6], a[0::2, 7], a[0::2, 8] = u * x, u * y, u
    a[1::2, 3], a[1::2, 4], a[1::2, 5] = -x, -y, -1
    a[1::2, 6], a[1::2, 7], a[1::2, 8] = v * x, v * y, v
    if len(a) < 9:
        a = np.vstack([a, np.zeros((9 - len(a), 9))])  # keep the null vector in the reduced SVD
    _, sv, vt = np.linalg.svd(a, full_matrices=False)
    if n == 4 and sv[-2] < 1e-8 * sv[0]:
        return None
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) < 1e-12 or abs(np.linalg.det(h)) < 1e-12 * abs(h[2, 2]) ** 3:
        return None
    return h / h[2, 2]


def reprojection_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    hom = src @ h[:, :2].T + h[:, 2]
    w = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = hom[:, :2] / w[:, None]
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    err[~np.isfinite(err) | (w <= 0)] = np.inf
    return err


def _canonical_order(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.lexsort((dst[:, 1], dst[:, 0], src[:, 1], src[:, 0]))


def refit_inliers(h: np.ndarray, src: np.ndarray, dst: np.ndarray, threshold: float, rounds: int = 5):
    """Alternate inlier selection and DLT refits until the inlier set is stable."""
    inl = reprojection_error(h, src, dst) < threshold
    for _ in range(rounds):
        if inl.sum() < 4:
            return None, inl
        idx = np.flatnonzero(inl)
        idx = idx[_canonical_order(src[idx], dst[idx])]
        h_new = fit_homography(src[idx], dst[idx])
        if h_new is None:
            return None, inl
        h = h_new
        new_inl = reprojection_error(h, src, dst) < threshold
        if np.array_equal(new_inl, inl):
            break
        inl = new_inl
    return h, inl


def estimate_homography(
    matches: PointMatchSet,
    cfg: RansacConfig = RansacConfig(),
    canvas: Optional[Tuple[float, float]] = None,
    seed: int = 0,
) -> List[Homography]:
    """RANSAC candidate homographies mapping ``matches.q`` onto ``matches.p``.

    ``canvas`` is the ``(width, height)`` of the candidate image, used by the
    similarity and distinctness filters; it defaults to the bounding box of
    the candidate points.
    """
    src = np.asarray(matches.q, dtype=np.float64)
    dst = np.asarray(matches.p, dtype=np.float64)
    n = len(src)
    if n < 4:
        raise InsufficientDataError(f"need at least 4 matches, got {n}")
    if canvas is None:
        canvas = (float(src[:, 0].max() + 1), float(src[:, 1].max() + 1))

    rng = np.random.default_rng(seed)
    seen = {}
    for _ in range(cfg.iterations):
        sample = rng.choice(n, 4, replace=False)
        h = fit_homography(src[sample], dst[sample])
        if h is None:
            continue
        inl = reprojection_error(h, src, dst) < cfg.inlier_threshold
        if inl.sum() < cfg.min_inliers:
            continue
        key = np.packbits(inl).tobytes()
        if key in seen:
            continue
        h_ref, inl_ref = refit_inliers(h, src, dst, cfg.inlier_threshold)
        seen[key] = None
        if h_ref is None or inl_ref.sum() < cfg.min_inliers:
            continue
        ref_key = np.packbits(inl_ref).tobytes()
        if ref_key in seen and seen[ref_key] is not None:
            continue
        seen[ref_key] = (int(inl_ref.sum()), len(seen), h_ref)

    found = sorted((v for v in seen.values() if v is not None), key=lambda t: (-t[0], t[1]))
    cands = []
    for count, _, h in found:
        try:
            cands.append(Homography(h, inliers=count))
        except DegenerateWarpError:
            continue
    kept = filter_candidates(cands, cfg, canvas)
    if not kept:
        raise NoRegistrationError(
            f"no homography with >= {cfg.min_inliers} inliers survived filtering ({len(cands)} raw candidates)"
        )
    logger.debug("RANSAC: %d raw candidates, %d after filtering", len(cands), len(kept))
    return kept


def inlier_mask(h: Homography, matches: PointMatchSet, threshold: float) -> np.ndarray:
    return reprojection_error(h.matrix, np.asarray(matches.q), np.asarray(matches.p)) < threshold


# ---------------------------------------------------------------------------
# Candidate filters
# ---------------------------------------------------------------------------

def similarity_deviation(h: Homography, canvas: Tuple[float, float]) -> float:
    """RMS residual of the best similarity fit to the warped canvas corners,
    divided by the canvas diagonal."""
    w, hgt = canvas
    src = image_corners(w, hgt)
    dst = h(src)
    a = np.zeros((8, 4))
    a[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(4), np.zeros(4)])
    a[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(4), np.ones(4)])
    b = dst.reshape(-1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = a @ sol - b
    rms = np.sqrt((resid ** 2).sum() / 4.0)
    return float(rms / np.hypot(w, hgt))


def corner_displacement(h1: Homography, h2: Homography, canvas: Tuple[float, float]) -> float:
    c = image_corners(*canvas)
    return float(np.sqrt(((h1(c) - h2(c)) ** 2).sum(axis=1)).max())


def filter_candidates(hs: Sequence[Homography], cfg: RansacConfig, canvas: Tuple[float, float]) -> List[Homography]:
    kept: List[Homography] = []
    for h in hs:
        try:
            if similarity_deviation(h, canvas) > cfg.max_similarity_deviation:
                continue
            if any(corner_displacement(h, k, canvas) < cfg.min_distinctness for k in kept):
                continue
        except DegenerateWarpError:
            continue
        kept.append(h)
    return kept


# ---------------------------------------------------------------------------
# Content-preserving mesh warp
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeshWarp:
    """A homography plus a piecewise-bilinear displacement field.

    ``source`` holds the regular grid vertices in the candidate image and
    ``displacement`` the per-vertex offsets added after ``homography``;
    both are ``(rows + 1, cols + 1, 2)`` arrays of (x, y).  With zero
    displacement the warp is exactly the homography.
    """

    source: np.ndarray
    homography: Homography
    displacement: np.ndarray

    @property
    def rows(self) -> int:
        return self.source.shape[0] - 1

    @property
    def cols(self) -> int:
        return self.source.shape[1] - 1

    @property
    def deformed(self) -> np.ndarray:
        """Warped positions of the grid vertices."""
        return self.homography(self.source) + self.displacement

    @property
    def is_pure(self) -> bool:
        return not np.any(self.displacement)

    def _cell_coords(self, pts: np.ndarray):
        x0, y0 = self.source[0, 0]
        x1, y1 = self.source[-1, -1]
        cw = (x1 - x0) / self.cols
        ch = (y1 - y0) / self.rows
        gx = (pts[:, 0] - x0) / cw
        gy = (pts[:, 1] - y0) / ch
        ci = np.clip(np.floor(gx), 0, self.cols - 1).astype(np.int64)
        ri = np.clip(np.floor(gy), 0, self.rows - 1).astype(np.int64)
        return ri, ci, gx - ci, gy - ri, cw, ch

    def offset(self, pts) -> np.ndarray:
        """Bilinear displacement at source points (extrapolating beyond the grid)."""
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        ri, ci, fx, fy, _, _ = self._cell_coords(flat)
        d = self.displacement
        out = (
            ((1 - fx) * (1 - fy))[:, None] * d[ri, ci]
            + (fx * (1 - fy))[:, None] * d[ri, ci + 1]
            + ((1 - fx) * fy)[:, None] * d[ri + 1, ci]
            + (fx * fy)[:, None] * d[ri + 1, ci + 1]
        )
        return out.reshape(pts.shape)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.homography(pts) + self.offset(pts)

    def jacobian_at(self, pts: np.ndarray) -> np.ndarray:
        """Jacobians d(out)/d(in) at source points, shape (n, 2 out, 2 in)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        m = self.homography.matrix
        hom = pts @ m[:, :2].T + m[:, 2]
        w = hom[:, 2]
        img = hom[:, :2] / w[:, None]
        jh = (m[None, :2, :2] - img[:, :, None] * m[None, 2:3, :2]) / w[:, None, None]
        ri, ci, fx, fy, cw, ch = self._cell_coords(pts)
        d = self.displacement
        dfx = ((1 - fy)[:, None] * (d[ri, ci + 1] - d[ri, ci]) + fy[:, None] * (d[ri + 1, ci + 1] - d[ri + 1, ci])) / cw
        dfy = ((1 - fx)[:, None] * (d[ri + 1, ci] - d[ri, ci]) + fx[:, None] * (d[ri + 1, ci + 1] - d[ri, ci + 1])) / ch
        return jh + np.stack([dfx, dfy], axis=-1)

    def is_folded(self) -> bool:
        centers = 0.25 * (self.source[:-1, :-1] + self.source[1:, :-1] + self.source[:-1, 1:] + self.source[1:, 1:])
        jac = self.jacobian_at(centers.reshape(-1, 2))
        return bool(np.any(np.linalg.det(jac) <= 0))

    def inverse(self, pts: np.ndarray, guess: np.ndarray, iterations: int = 8) -> Tuple[np.ndarray, np.ndarray]:
        """Newton inversion of the forward map; returns (source points, converged)."""
        u = np.array(guess, dtype=np.float64).reshape(-1, 2)
        target = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        for _ in range(iterations):
            r = self(u) - target
            jac = self.jacobian_at(u)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            det = np.where(np.abs(det) < 1e-12, 1e-12, det)
            du_x = (jac[:, 1, 1] * r[:, 0] - jac[:, 0, 1] * r[:, 1]) / det
            du_y = (-jac[:, 1, 0] * r[:, 0] + jac[:, 0, 0] * r[:, 1]) / det
            u[:, 0] -= du_x
            u[:, 1] -= du_y
        ok = np.sqrt(((self(u) - target) ** 2).sum(axis=1)) < 1e-3
        return u, ok

    def then(self, h: Homography) -> "MeshWarp":
        """Compose with an affine map applied after the warp (e.g. a canvas shift)."""
        m = h.matrix
        if abs(m[2, 0]) > 0 or abs(m[2, 1]) > 0:
            raise ValueError("only affine maps can follow a mesh warp")
        return MeshWarp(self.source, h @ self.homography, self.displacement @ m[:2, :2].T)


def regular_grid(width: float, height: float, rows: int, cols: int) -> np.ndarray:
    xs = np.linspace(0.0, width, cols + 1)
    ys = np.linspace(0.0, height, rows + 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def cpw_refine(
    h: Homography,
    points: np.ndarray,
    flow: np.ndarray,
    image_size: Tuple[float, float],
    grid: Tuple[int, int] = (16, 16),
    lam: float = 1.0,
    anchor: float = 1e-8,
) -> MeshWarp:
    """Refine ``h`` with a content-preserving mesh warp.

    ``points`` are positions on the h-warped candidate (target frame) and
    ``flow`` the residual motion measured there.  Unknowns are per-vertex
    displacements ``D`` added to the h-mapped grid; the objective is

        sum_samples |bilinear(D) - flow|^2
        + lam * (sum_triangles |similarity residual(D)|^2 + anchor * |D|^2)

    whose minimiser is ``D = 0`` for zero flow and a uniform shift for a
    uniform flow (up to the ``anchor`` pull).
    """
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ValueError("mesh needs at least one cell per axis")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    width, height = image_size
    source = regular_grid(width, height, rows, cols)
    base = h(source)
    nv = (rows + 1) * (cols + 1)
    vid = np.arange(nv).reshape(rows + 1, cols + 1)

    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    if len(points) != len(flow):
        raise ValueError("points and flow differ in length")

    rows_i, cols_i, vals, rhs = [], [], [], []
    nrow = 0
    data_weight = np.zeros(nv)
    if len(points):
        src = h.inverse()(points)
        inside = (src[:, 0] >= 0) & (src[:, 0] <= width) & (src[:, 1] >= 0) & (src[:, 1] <= height)
        src, fl = src[inside], flow[inside]
        mesh0 = MeshWarp(source, h, np.zeros_like(source))
        ri, ci, fx, fy, _, _ = mesh0._cell_coords(src)
        corners = [(ri, ci, (1 - fx) * (1 - fy)), (ri, ci + 1, fx * (1 - fy)),
                   (ri + 1, ci, (1 - fx) * fy), (ri + 1, ci + 1, fx * fy)]
        m = len(src)
        for axis in (0, 1):
            r_ids = nrow + np.arange(m)
            for rr, cc, w in corners:
                rows_i.append(r_ids)
                cols_i.append(2 * vid[rr, cc] + axis)
                vals.append(w)
            rhs.append(fl[:, axis])
            nrow += m
        for rr, cc, w in corners:
            np.add.at(data_weight, vid[rr, cc], w * w)

    if lam == 0 and np.any(data_weight <= 0):
        raise IllPosedError(f"{int((data_weight <= 0).sum())} mesh vertices have no flow data and lam == 0")

    if lam > 0:
        sq = np.sqrt(lam)
        tris = []
        for r in range(rows):
            for c in range(cols):
                quad = [vid[r, c], vid[r, c + 1], vid[r + 1, c + 1], vid[r + 1, c]]
                for i in range(4):
                    tris.append((quad[i], quad[(i + 1) % 4], quad[(i - 1) % 4]))
        tris = np.array(tris)
        bflat = base.reshape(-1, 2)
        v1, v2, v3 = bflat[tris[:, 0]], bflat[tris[:, 1]], bflat[tris[:, 2]]
        a = v1 - v2
        e = v3 - v2
        re = np.column_stack([-e[:, 1], e[:, 0]])
        ee = (e ** 2).sum(axis=1)
        u = (a * e).sum(axis=1) / ee
        v = (a * re).sum(axis=1) / ee
        t = len(tris)
        one = np.ones(t)
        # x: D1x - (1-u) D2x - u D3x - v D2y + v D3y
        # y: D1y - (1-u) D2y - u D3y + v D2x - v D3x
        specs = [
            [(0, 0, one), (1, 0, -(1 - u)), (2, 0, -u), (1, 1, -v), (2, 1, v)],
            [(0, 1, one), (1, 1, -(1 - u)), (2, 1, -u), (1, 0, v), (2, 0, -v)],
        ]
        for spec in specs:
            r_ids = nrow + np.arange(t)
            for k, axis, coef in spec:
                rows_i.append(r_ids)
                cols_i.append(2 * tris[:, k] + axis)
                vals.append(sq * coef)
            rhs.append(np.zeros(t))
            nrow += t
        if anchor > 0:
            r_ids = nrow + np.arange(2 * nv)
            rows_i.append(r_ids)
            cols_i.append(np.arange(2 * nv))
            vals.append(np.full(2 * nv, np.sqrt(lam * anchor)))
            rhs.append(np.zeros(2 * nv))
            nrow += 2 * nv

    amat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))), shape=(nrow, 2 * nv)
    )
    b = np.concatenate(rhs)
    normal = (amat.T @ amat).tocsc()
    try:
        sol = spla.splu(normal).solve(amat.T @ b)
    except RuntimeError as exc:
        raise IllPosedError(f"mesh normal equations are singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise IllPosedError("mesh solve produced non-finite displacements")
    disp = sol.reshape(rows + 1, cols + 1, 2)
    return MeshWarp(source, h, disp)


def cpw_objective(mesh: MeshWarp, points, flow, lam: float, anchor: float = 1e-8) -> float:
    """Value of the cpw_refine objective at ``mesh`` (for diagnostics/tests)."""
    h = mesh.homography
    base = h(mesh.source)
    disp = mesh.displacement
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    total = 0.0
    if len(points):
        src = h.inverse()(points)
        width, height = mesh.source[-1, -1]
        inside = (src[:, 0] >= 0) & (src[:, 0] <= width) & (src[:, 1] >= 0) & (src[:, 1] <= height)
        total += float(((mesh.offset(src[inside]) - flow[inside]) ** 2).sum())
    rows, cols = mesh.rows, mesh.cols
    shape = 0.0
    for r in range(rows):
        for c in range(cols):
            quad = [(r, c), (r, c + 1), (r + 1, c + 1), (r + 1, c)]
            for i in range(4):
                p1, p2, p3 = quad[i], quad[(i + 1) % 4], quad[(i - 1) % 4]
                a = base[p1] - base[p2]
                e = base[p3] - base[p2]
                re = np.array([-e[1], e[0]])
                u = a @ e / (e @ e)
                v = a @ re / (e @ e)
                d1, d2, d3 = disp[p1], disp[p2], disp[p3]
                de = d3 - d2
                res = d1 - d2 - u * de - v * np.array([-de[1], de[0]])
                shape += float(res @ res)
    return total + lam * (shape + anchor * float((disp ** 2).sum()))


# ---------------------------------------------------------------------------
# Canvas and resampling
# ---------------------------------------------------------------------------

def warped_extent(size: Tuple[float, float], h: Homography, mesh: Optional[MeshWarp] = None) -> np.ndarray:
    """Warped positions of the outermost pixel centres of a ``(width, height)`` image."""
    w, hgt = size[0] - 1.0, size[1] - 1.0
    t = np.linspace(0.0, 1.0, 33)
    border = np.concatenate([
        np.column_stack([t * w, np.zeros_like(t)]),
        np.column_stack([np.full_like(t, w), t * hgt]),
        np.column_stack([t * w, np.full_like(t, hgt)]),
        np.column_stack([np.zeros_like(t), t * hgt]),
    ])
    return mesh(border) if mesh is not None else h(border)


def compute_canvas(ref_size: Tuple[int, int], warped: Sequence[np.ndarray]) -> Tuple[Tuple[int, int], Homography]:
    """Canvas ``(width, height)`` holding the reference and all warped extents,
    with the shift that moves everything to non-negative coordinates."""
    w, h = ref_size
    pts = [np.array([[0.0, 0.0], [w - 1.0, h - 1.0]])]
    for ext in warped:
        pts.append(np.asarray(ext).reshape(-1, 2))
    allp = np.concatenate(pts)
    lo = np.floor(allp.min(axis=0) + 1e-9)
    hi = np.ceil(allp.max(axis=0) - 1e-9)
    shift = Homography.translation(-lo[0], -lo[1])
    size = (int(hi[0] - lo[0]) + 1, int(hi[1] - lo[1]) + 1)
    return size, shift


def _snap(u: np.ndarray) -> np.ndarray:
    r = np.rint(u)
    return np.where(np.abs(u - r) < 1e-9, r, u)


def sample_bilinear(src: Raster, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample ``src`` at float (x, y) ``coords`` of shape (n, 2).

    A sample is valid only where every tap with non-zero weight lies inside
    the source and its mask.
    """
    h, w = src.shape
    u = _snap(coords[:, 0])
    v = _snap(coords[:, 1])
    finite = np.isfinite(u) & np.isfinite(v)
    u = np.where(finite, u, -10.0)
    v = np.where(finite, v, -10.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    need_x1 = fx > 0
    need_y1 = fy > 0
    x1 = x0 + need_x1
    y1 = y0 + need_y1

    def ok(xx, yy):
        inb = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        res = np.zeros(len(xx), dtype=bool)
        res[inb] = src.mask[yy[inb], xx[inb]]
        return res

    valid = finite & ok(x0, y0) & ok(x1, y0) & ok(x0, y1) & ok(x1, y1)
    out = np.zeros((len(u), src.channels))
    if valid.any():
        xa, xb, ya, yb = x0[valid], x1[valid], y0[valid], y1[valid]
        ax, ay = fx[valid][:, None], fy[valid][:, None]
        d = src.data
        out[valid] = (
            (1 - ax) * (1 - ay) * d[ya, xa] + ax * (1 - ay) * d[ya, xb]
            + (1 - ax) * ay * d[yb, xa] + ax * ay * d[yb, xb]
        )
    return out, valid


def inverse_coords(h: Homography, mesh: Optional[MeshWarp], canvas: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Source coordinates for every canvas pixel (row-major) under the warp.

    When a mesh is given its own homography replaces ``h``; a mesh without
    displacement is inverted in closed form."""
    if mesh is not None:
        h = mesh.homography
    cw, ch = canvas
    gx, gy = np.meshgrid(np.arange(cw, dtype=np.float64), np.arange(ch, dtype=np.float64))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    hinv = h.inverse()
    with np.errstate(all="ignore"):
        hom = pts @ hinv.matrix[:, :2].T + hinv.matrix[:, 2]
        w = hom[:, 2]
        src = hom[:, :2] / w[:, None]
    ok = np.isfinite(src).all(axis=1) & (w > 0)
    if mesh is not None and not mesh.is_pure:
        src_m, conv = mesh.inverse(pts, np.where(ok[:, None], src, 0.0))
        src = src_m
        ok = ok & conv
    src[~ok] = np.nan
    return src, ok


def warp_image(src: Raster, h: Homography, canvas: Tuple[int, int], mesh: Optional[MeshWarp] = None) -> Raster:
    """Inverse-mapped bilinear resampling of ``src`` onto a ``(width, height)`` canvas.

    ``h`` (and ``mesh`` when given) map source coordinates to canvas
    coordinates.  Output intensities are rounded to 8-bit levels.
    """
    try:
        np.linalg.inv(h.matrix)
    except np.linalg.LinAlgError as exc:
        raise DegenerateWarpError("warp is not invertible") from exc
    if mesh is not None and mesh.is_folded():
        raise DegenerateWarpError("mesh warp has inverted cells")
    cw, ch = canvas
    coords, ok = inverse_coords(h, mesh, canvas)
    vals, valid = sample_bilinear(src, np.where(ok[:, None], coords, -10.0))
    valid &= ok
    data = np.rint(vals).reshape(ch, cw, src.channels)
    data[~valid.reshape(ch, cw)] = 0.0
    return Raster(data, valid.reshape(ch, cw))


def warp_mask(mask: np.ndarray, h: Homography, canvas: Tuple[int, int], mesh: Optional[MeshWarp] = None) -> np.ndarray:
    """Nearest-neighbour warp of a boolean mask onto the canvas."""
    cw, ch = canvas
    coords, ok = inverse_coords(h, mesh, canvas)
    out = np.zeros(cw * ch, dtype=bool)
    if ok.any():
        pix = np.floor(coords[ok] + 0.5).astype(np.int64)
        hh, ww = mask.shape
        inb = (pix[:, 0] >= 0) & (pix[:, 0] < ww) & (pix[:, 1] >= 0) & (pix[:, 1] < hh)
        idx = np.flatnonzero(ok)[inb]
        out[idx] = mask[pix[inb, 1], pix[inb, 0]]
    return out.reshape(ch, cw)


@dataclass(frozen=True)
class Registration:
    """A candidate's warp into the reference frame."""

    homography: Homography
    mesh: Optional[MeshWarp]
    inliers: int

    def then(self, shift: Homography) -> "Registration":
        mesh = self.mesh.then(shift) if self.mesh is not None else None
        return Registration(shift @ self.homography, mesh, self.inliers)

    def extent(self, size: Tuple[float, float]) -> np.ndarray:
        return warped_extent(size, self.homography, self.mesh)

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        return self.mesh(pts) if self.mesh is not None else self.homography(pts)


def register(
    matches: PointMatchSet,
    image_size: Tuple[int, int],
    cfg: RansacConfig = RansacConfig(),
    grid: Tuple[int, int] = (16, 16),
    lam: float = 1.0,
    seed: int = 0,
    refine: bool = True,
    flow: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Registration:
    """Best homography for ``matches.q -> matches.p`` plus optional mesh refinement.

    The mesh is driven by ``flow`` (sample positions in the reference frame
    and the residual motion there) when given, else by the residual motion
    of the RANSAC inliers.
    """
    cands = estimate_homography(matches, cfg, canvas=image_size, seed=seed)
    h = cands[0]
    mesh = None
    if refine:
        if flow is None:
            inl = inlier_mask(h, matches, cfg.inlier_threshold)
            pts = h(np.asarray(matches.q)[inl])
            vec = np.asarray(matches.p)[inl] - pts
        else:
            pts, vec = flow
        try:
            mesh = cpw_refine(h, pts, vec, image_size, grid=grid, lam=lam)
            if mesh.is_folded():
                logger.warning("mesh refinement folded; falling back to the homography")
                mesh = None
        except IllPosedError as exc:
            logger.warning("mesh refinement skipped: %s", exc)
            mesh = None
    return Registration(h, mesh, h.inliers)
