"""
Compositing a labeling into a mosaic, gradient-domain seam blending and
rendering of occluded pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .core import OCCLUDED, Raster

logger = logging.getLogger(__name__)

MAGENTA = (255.0, 0.0, 255.0)
OCCLUSION_MODES = ("mark", "crop", "fill")


class BlendError(RuntimeError):
    pass


def _stack(images: Sequence[Raster]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([im.data for im in images]), np.stack([im.mask for im in images])


def composite(images: Sequence[Raster], labeling: np.ndarray) -> Raster:
    """Copy each pixel from the source its label selects; OCCLUDED pixels are
    zero with mask 0."""
    data, _ = _stack(images)
    lab = np.asarray(labeling)
    if lab.shape != data.shape[1:3]:
        raise ValueError("labeling does not match the canvas")
    out = np.zeros(data.shape[1:])
    for i in range(len(images)):
        sel = lab == i + 1
        out[sel] = data[i][sel]
    return Raster(out, lab != OCCLUDED)


def seam_pixels(labeling: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour carrying a different image label (OCCLUDED excluded)."""
    lab = np.asarray(labeling)
    seam = np.zeros(lab.shape, dtype=bool)
    h = (lab[:, :-1] != lab[:, 1:]) & (lab[:, :-1] != OCCLUDED) & (lab[:, 1:] != OCCLUDED)
    v = (lab[:-1, :] != lab[1:, :]) & (lab[:-1, :] != OCCLUDED) & (lab[1:, :] != OCCLUDED)
    seam[:, :-1] |= h
    seam[:, 1:] |= h
    seam[:-1, :] |= v
    seam[1:, :] |= v
    return seam


@dataclass(frozen=True)
class BlendResult:
    raster: Raster
    unknowns: int
    residual: float
    rhs_norm: float
    iterations: int


def _guidance(data, masks, lab, pa, pb):
    """Guidance differences f(pa) - f(pb) for 4-neighbour pixel pairs (flat ids)."""
    k, n = masks.shape[0], lab.size
    flat = data.reshape(k, n, -1)
    mflat = masks.reshape(k, n)
    la, lb = lab[pa], lab[pb]
    acc = np.zeros((len(pa), flat.shape[2]))
    cnt = np.zeros(len(pa))
    for src_of in (la, lb):
        s = src_of - 1
        ok = (src_of != OCCLUDED)
        ok[ok] &= mflat[s[ok], pa[ok]] & mflat[s[ok], pb[ok]]
        idx = np.flatnonzero(ok)
        acc[idx] += flat[s[idx], pa[idx]] - flat[s[idx], pb[idx]]
        cnt[idx] += 1
    # when both labels agree, each source is counted twice; averaging cancels it
    nz = cnt > 0
    acc[nz] /= cnt[nz][:, None]
    return acc


def poisson_blend(
    images: Sequence[Raster],
    labeling: np.ndarray,
    band: Optional[int] = 16,
    rtol: float = 1e-8,
) -> BlendResult:
    """Gradient-domain blend of the composite around its seams.

    Unknowns are the non-occluded pixels within Chebyshev distance ``band``
    of a seam (``band=None``: every non-occluded pixel).  Pixels just outside
    the band keep their composite value and act as boundary conditions;
    occluded pixels are excluded.  Guidance across a seam is the average of
    the two sources' gradients.
    """
    data, masks = _stack(images)
    lab = np.asarray(labeling, dtype=np.int64)
    comp = composite(images, lab)
    hgt, wid = lab.shape
    n = lab.size
    c = comp.channels
    valid = lab != OCCLUDED
    seam = seam_pixels(lab)
    if band is None:
        region = valid.copy()
    else:
        if band < 0:
            raise ValueError("band must be >= 0")
        if not seam.any():
            return BlendResult(comp, 0, 0.0, 0.0, 0)
        dist = ndimage.distance_transform_cdt(~seam, metric="chessboard")
        region = valid & (dist <= band)

    # pin one pixel in every unknown component that touches no fixed pixel
    fixed = valid & ~region
    lbl, ncomp = ndimage.label(region)
    if ncomp:
        touch = ndimage.binary_dilation(fixed) & region
        anchored = np.zeros(ncomp + 1, dtype=bool)
        anchored[np.unique(lbl[touch])] = True
        for cid in range(1, ncomp + 1):
            if not anchored[cid]:
                first = np.flatnonzero((lbl == cid).ravel())[0]
                region.flat[first] = False
    unk = np.flatnonzero(region.ravel())
    m = len(unk)
    if m == 0:
        return BlendResult(comp, 0, 0.0, 0.0, 0)
    uid = np.full(n, -1, dtype=np.int64)
    uid[unk] = np.arange(m)

    idx = np.arange(n).reshape(hgt, wid)
    pa = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    pb = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    vflat = valid.ravel()
    keep = vflat[pa] & vflat[pb] & ((uid[pa] >= 0) | (uid[pb] >= 0))
    pa, pb = pa[keep], pb[keep]
    g = _guidance(data, masks, lab.ravel(), pa, pb)
    cflat = comp.data.reshape(n, c)

    diag = np.zeros(m)
    rhs = np.zeros((m, c))
    rows, cols = [], []
    for u, v, sign in ((pa, pb, 1.0), (pb, pa, -1.0)):
        iu = uid[u]
        sel = iu >= 0
        np.add.at(diag, iu[sel], 1.0)
        np.add.at(rhs, iu[sel], sign * g[sel])
        iv = uid[v]
        both = sel & (iv >= 0)
        rows.append(iu[both])
        cols.append(iv[both])
        bnd = sel & (iv < 0)
        np.add.at(rhs, iu[bnd], cflat[v[bnd]])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    a = sp.csr_matrix((np.full(len(rows), -1.0), (rows, cols)), shape=(m, m)) + sp.diags(diag)
    precond = sp.diags(1.0 / diag)

    out = cflat.copy()
    worst_res, rhs_norm, iters = 0.0, 0.0, 0
    for ch in range(c):
        b = rhs[:, ch]
        count = [0]

        def cb(_xk):
            count[0] += 1

        x0 = cflat[unk, ch]
        sol, info = spla.cg(a, b, x0=x0, rtol=rtol, atol=0.0, maxiter=10 * m, M=precond, callback=cb)
        if info != 0:
            raise BlendError(f"blend solve did not converge (info={info}) on channel {ch}")
        bn = float(np.linalg.norm(b))
        res = float(np.linalg.norm(a @ sol - b))
        if bn > 0:
            worst_res = max(worst_res, res / bn)
        rhs_norm = max(rhs_norm, bn)
        iters = max(iters, count[0])
        out[unk, ch] = sol
    raster = Raster(out.reshape(hgt, wid, c), valid)
    return BlendResult(raster, m, worst_res, rhs_norm, iters)


# ---------------------------------------------------------------------------
# Occlusion rendering
# ---------------------------------------------------------------------------

def largest_rectangle(valid: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    """Largest-area axis-aligned rectangle of True pixels as (x, y, w, h).

    Ties go to the first rectangle found scanning bottom edges top-down and
    left edges left-to-right.  None when nothing is valid.
    """
    valid = np.asarray(valid, dtype=bool)
    hgt, wid = valid.shape
    heights = np.zeros(wid, dtype=np.int64)
    best = (0, None)
    for y in range(hgt):
        heights = np.where(valid[y], heights + 1, 0)
        stack = []
        for x in range(wid + 1):
            hx = heights[x] if x < wid else 0
            start = x
            while stack and stack[-1][1] >= hx:
                sx, sh = stack.pop()
                area = sh * (x - sx)
                if area > best[0]:
                    best = (area, (sx, y - sh + 1, x - sx, sh))
                start = sx
            if hx > 0 and (not stack or stack[-1][1] < hx):
                stack.append((start, hx))
    return best[1]


def harmonic_fill(raster: Raster, hole: np.ndarray) -> Raster:
    """Fill ``hole`` pixels with the harmonic interpolation of their surroundings."""
    hole = np.asarray(hole, dtype=bool)
    hgt, wid = hole.shape
    known = ~hole
    data = raster.data.copy()
    data[hole] = 0.0
    if not hole.any() or not known.any():
        return Raster(data, np.ones((hgt, wid), dtype=bool) if known.any() else known)
    n = hole.size
    unk = np.flatnonzero(hole.ravel())
    uid = np.full(n, -1, dtype=np.int64)
    uid[unk] = np.arange(len(unk))
    idx = np.arange(n).reshape(hgt, wid)
    pa = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    pb = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    flat = data.reshape(n, -1)

    # components of the hole with no known neighbour stay zero
    lbl, ncomp = ndimage.label(hole)
    touch = ndimage.binary_dilation(known) & hole
    reach = np.zeros(ncomp + 1, dtype=bool)
    reach[np.unique(lbl[touch])] = True
    solvable = reach[lbl.ravel()[unk]]

    m = len(unk)
    diag = np.zeros(m)
    rhs = np.zeros((m, flat.shape[1]))
    rows, cols = [], []
    for u, v in ((pa, pb), (pb, pa)):
        iu = uid[u]
        sel = iu >= 0
        np.add.at(diag, iu[sel], 1.0)
        iv = uid[v]
        both = sel & (iv >= 0)
        rows.append(iu[both])
        cols.append(iv[both])
        bnd = sel & (iv < 0)
        np.add.at(rhs, iu[bnd], flat[v[bnd]])
    a = sp.csr_matrix((np.full(sum(len(r) for r in rows), -1.0), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    a = a + sp.diags(diag)
    s_idx = np.flatnonzero(solvable)
    a = a[s_idx][:, s_idx].tocsc()
    sol = spla.splu(a).solve(rhs[s_idx])
    flat[unk[s_idx]] = sol.reshape(len(s_idx), -1)
    mask = np.ones(n, dtype=bool)
    mask[unk[~solvable]] = False
    return Raster(flat.reshape(data.shape), mask.reshape(hgt, wid))


def to_rgb(raster: Raster) -> Raster:
    if raster.channels == 3:
        return raster
    if raster.channels == 1:
        return Raster(np.repeat(raster.data, 3, axis=2), raster.mask)
    raise ValueError(f"cannot convert {raster.channels}-channel raster to RGB")


@dataclass(frozen=True)
class OcclusionResult:
    raster: Raster
    crop: Optional[Tuple[int, int, int, int]] = None


def render_occlusion(raster: Raster, labeling: np.ndarray, mode: str = "mark") -> OcclusionResult:
    """Render OCCLUDED pixels: paint magenta, crop them away, or inpaint them."""
    lab = np.asarray(labeling)
    occ = lab == OCCLUDED
    if mode == "mark":
        rgb = to_rgb(raster)
        data = rgb.data.copy()
        data[occ] = MAGENTA
        return OcclusionResult(Raster(data, np.ones(lab.shape, dtype=bool)))
    if mode == "crop":
        rect = largest_rectangle(~occ)
        if rect is None:
            raise BlendError("every pixel is occluded; nothing to crop to")
        x, y, w, h = rect
        return OcclusionResult(
            Raster(raster.data[y:y + h, x:x + w], raster.mask[y:y + h, x:x + w] | True), rect
        )
    if mode == "fill":
        return OcclusionResult(harmonic_fill(raster, occ))
    raise ValueError(f"unknown occlusion mode {mode!r}; expected one of {OCCLUSION_MODES}")
