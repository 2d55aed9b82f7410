"""
Synthetic scenes with known ground truth: a textured background seen by two
translated cameras and a distinctive object that moves between the shots.
Also a colour-key detector so outputs can be counted without a learned model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import DetectedObject, PointMatchSet, Raster, mask_bbox
from .registration import Homography

OBJECT_COLOR = (220.0, 30.0, 30.0)
CATEGORY = "person"


@dataclass(frozen=True)
class Scene:
    images: List[Raster]
    detections: List[List[DetectedObject]]
    matches: Dict[Tuple[int, int], PointMatchSet]
    truth: Homography  # candidate -> reference
    canvas_shape: Tuple[int, int]


def textured_background(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth random texture that never passes the colour key."""
    base = rng.uniform(0.0, 1.0, (height // 8 + 2, width // 8 + 2, 3))
    up = ndimage.zoom(base, (8, 8, 1), order=1)[:height, :width]
    noise = rng.integers(-6, 7, (height, width, 3))
    img = np.empty((height, width, 3))
    img[..., 0] = 50 + 60 * up[..., 0]
    img[..., 1] = 70 + 80 * up[..., 1]
    img[..., 2] = 70 + 80 * up[..., 2]
    return np.clip(np.rint(img) + noise, 0, 255)


def paint_object(img: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Paint an upright elliptical blob filling the box; returns its mask."""
    hh, ww = img.shape[:2]
    yy, xx = np.mgrid[0:hh, 0:ww]
    cx, cy = x + (w - 1) / 2.0, y + (h - 1) / 2.0
    mask = ((xx - cx) / (w / 2.0)) ** 2 + ((yy - cy) / (h / 2.0)) ** 2 <= 1.0
    img[mask] = OBJECT_COLOR
    return mask


def make_walking_scene(
    seed: int = 0,
    canvas: Tuple[int, int] = (320, 240),
    shift: int = 80,
    object_box: Tuple[int, int] = (30, 60),
    object_a: int = 95,
    object_b: int = 195,
    quiet_zone: Tuple[int, int] = (130, 190),
    bias: float = 1.0,
    spacing: int = 3,
) -> Scene:
    """Two views of a scene whose object walks between the shots.

    The reference covers canvas columns [0, W - shift) and the candidate
    [shift, W).  The object sits at canvas column ``object_a`` in the
    reference and ``object_b`` in the candidate, both inside the overlap.
    The candidate is brighter by ``bias`` in red except over the canvas
    columns ``quiet_zone``, so a photometric seam prefers to pass there,
    between the two copies.
    """
    cw, ch = canvas
    rng = np.random.default_rng(seed)
    world = textured_background(ch, cw, rng)
    iw = cw - shift
    ow, oh = object_box
    oy = (ch - oh) // 2

    ref = world[:, :iw].copy()
    cand = world[:, shift:].copy()
    zone = np.ones(cw, dtype=bool)
    zone[quiet_zone[0]:quiet_zone[1]] = False
    cand[:, zone[shift:], 0] = np.minimum(cand[:, zone[shift:], 0] + bias, 255)

    m_ref = paint_object(ref, object_a, oy, ow, oh)
    m_cand = paint_object(cand, object_b - shift, oy, ow, oh)

    det_ref = DetectedObject(0, CATEGORY, 0.99, mask_bbox(m_ref), m_ref, 0)
    det_cand = DetectedObject(1, CATEGORY, 0.98, mask_bbox(m_cand), m_cand, 0)

    # matches: background on a jittered grid (true motion), object to object
    p, q = [], []
    ys, xs = np.mgrid[1:ch - 1:spacing, 1:iw - 1:spacing]
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    pts += rng.uniform(-0.5, 0.5, pts.shape)
    pts = np.clip(pts, 0, [iw - 1, ch - 1])
    for x, y in pts:
        xr = int(np.floor(x + 0.5))
        yr = int(np.floor(y + 0.5))
        if m_cand[yr, xr]:
            continue
        xw = x + shift
        if xw > iw - 1:
            continue
        if m_ref[yr, int(np.floor(xw + 0.5))]:
            continue
        p.append((xw, y))
        q.append((x, y))
    d = object_b - object_a
    for x, y in pts:
        xr, yr = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        if m_ref[yr, xr]:
            xc = x + d - shift
            if 0 <= xc <= iw - 1:
                p.append((x, y))
                q.append((xc, y))
    matches = PointMatchSet(np.array(p), np.array(q))
    return Scene(
        [Raster(ref, np.ones(ref.shape[:2], bool)), Raster(cand, np.ones(cand.shape[:2], bool))],
        [[det_ref], [det_cand]],
        {(0, 1): matches},
        Homography.translation(shift, 0),
        (ch, cw),
    )


def color_key_detect(
    raster: Raster,
    source_id: int = 0,
    category: str = CATEGORY,
    color: Sequence[float] = OBJECT_COLOR,
    tolerance: float = 60.0,
    min_area: int = 50,
) -> List[DetectedObject]:
    """Connected regions whose colour lies within ``tolerance`` (L-inf) of ``color``."""
    data = raster.data
    if data.shape[2] == 1:
        return []
    key = np.all(np.abs(data[..., :3] - np.asarray(color)) <= tolerance, axis=-1) & raster.mask
    lbl, n = ndimage.label(key)
    out = []
    for i in range(1, n + 1):
        m = lbl == i
        if m.sum() < min_area:
            continue
        out.append(DetectedObject(source_id, category, 1.0, mask_bbox(m), m, len(out)))
    return out


def object_composite(height: int, width: int, boxes: Sequence[Tuple[int, int, int, int]], seed: int = 0) -> Raster:
    """Background with an object blob painted into each given box."""
    rng = np.random.default_rng(seed)
    img = textured_background(height, width, rng)
    for x, y, w, h in boxes:
        paint_object(img, x, y, w, h)
    return Raster(img, np.ones((height, width), dtype=bool))


def grid_matches(
    h: Homography,
    size: Tuple[int, int],
    target: Tuple[int, int],
    spacing: int = 8,
    frame_a: int = 0,
    frame_b: int = 1,
) -> PointMatchSet:
    """Exact matches ``p = h(q)`` for grid points ``q`` of an image of ``size``
    (width, height) whose image lands inside ``target`` (width, height)."""
    w, hh = size
    ys, xs = np.mgrid[0:hh:spacing, 0:w:spacing]
    q = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    p = h(q)
    keep = (p[:, 0] >= 0) & (p[:, 0] <= target[0] - 1) & (p[:, 1] >= 0) & (p[:, 1] <= target[1] - 1)
    return PointMatchSet(p[keep], q[keep], frame_a=frame_a, frame_b=frame_b)
