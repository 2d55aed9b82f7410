"""
Shared raster and geometry data model.

Label convention used throughout the package: ``OCCLUDED`` (0) is the
occlusion label, and source images are labelled ``1..k`` with label 1 the
reference image.  Pixel ``(x, y)`` sits at integer coordinates; boxes and
polygons rasterise half-open, i.e. a pixel belongs to a region when its
centre ``(x + 0.5, y + 0.5)`` lies inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

OCCLUDED = 0


class MaskDecodeError(ValueError):
    """Malformed RLE or polygon encoding."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Raster:
    """One image plane in some frame plus its validity mask.

    ``data`` is ``(H, W, C)`` float64 with C in {1, 3}; ``mask`` is ``(H, W)``
    bool.  Values under ``mask == 0`` carry no meaning.
    """

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"raster data must be HxW, HxWx1 or HxWx3, got {data.shape}")
        if data.shape[0] * data.shape[1] == 0:
            raise ValueError("raster must have positive area")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != data.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match data {data.shape[:2]}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def full(cls, data) -> "Raster":
        data = np.asarray(data)
        return cls(data, np.ones(data.shape[:2], dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def to_uint8(self) -> np.ndarray:
        out = np.clip(np.rint(self.data), 0, 255).astype(np.uint8)
        return out[:, :, 0] if self.channels == 1 else out


def overlap_mask(a: Raster, b: Raster) -> np.ndarray:
    """Pixels valid in both rasters."""
    if a.shape != b.shape:
        raise ValueError(f"canvas mismatch: {a.shape} vs {b.shape}")
    return a.mask & b.mask


# ---------------------------------------------------------------------------
# Masks: RLE and polygons
# ---------------------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> List[int]:
    """Column-major run lengths, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def rle_to_string(counts: Sequence[int]) -> str:
    """Compress run lengths into the common LEB128-style counts string."""
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_from_string(s: str) -> List[int]:
    counts: List[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            if p >= len(s):
                raise MaskDecodeError(f"RLE string truncated at byte {p}")
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise MaskDecodeError(f"invalid RLE character {s[p]!r} at byte {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rle_decode(counts: Union[str, Sequence[int]], height: int, width: int) -> np.ndarray:
    if isinstance(counts, str):
        counts = rle_from_string(counts)
    counts = [int(c) for c in counts]
    for i, c in enumerate(counts):
        if c < 0:
            raise MaskDecodeError(f"negative run length in counts[{i}]")
    total = height * width
    if sum(counts) != total:
        raise MaskDecodeError(f"RLE counts sum to {sum(counts)}, canvas has {total} pixels")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def rasterize_polygon(vertices: Sequence[float], height: int, width: int) -> np.ndarray:
    """Even-odd fill of a closed polygon given as flat ``[x0, y0, x1, y1, ...]``."""
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 1 or pts.size % 2:
        raise MaskDecodeError("polygon must be a flat list of x, y pairs")
    pts = pts.reshape(-1, 2)
    if len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    if len(pts) < 3:
        raise MaskDecodeError(f"polygon needs at least 3 vertices, got {len(pts)}")
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    mask = np.zeros((height, width), dtype=bool)
    xc = np.arange(width) + 0.5
    for row in range(height):
        yc = row + 0.5
        crosses = (y0 <= yc) != (y1 <= yc)
        if not crosses.any():
            continue
        xa, ya, xb, yb = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        inside = np.searchsorted(xs, xc, side="right") % 2 == 1
        mask[row] = inside
    return mask


def bbox_mask(bbox: Sequence[float], height: int, width: int) -> np.ndarray:
    x, y, w, h = bbox
    mask = np.zeros((height, width), dtype=bool)
    # half-open: pixel centres inside [x, x+w) x [y, y+h)
    xa = max(int(np.ceil(x - 0.5)), 0)
    xb = min(int(np.ceil(x + w - 0.5)), width)
    ya = max(int(np.ceil(y - 0.5)), 0)
    yb = min(int(np.ceil(y + h - 0.5)), height)
    if xa < xb and ya < yb:
        mask[ya:yb, xa:xb] = True
    return mask


def decode_object_mask(encoded: Any, canvas: Tuple[int, int]) -> np.ndarray:
    """Decode an RLE dict or a polygon list into a boolean ``(H, W)`` mask.

    ``canvas`` is ``(height, width)``.  RLE is accepted as
    ``{"size": [h, w], "counts": str | list}``; polygons as a flat vertex list
    or a list of such lists (union).
    """
    height, width = canvas
    if isinstance(encoded, dict):
        if "counts" not in encoded:
            raise MaskDecodeError("RLE segmentation is missing field 'counts'")
        size = encoded.get("size", [height, width])
        if list(size) != [height, width]:
            raise MaskDecodeError(f"RLE field 'size' {list(size)} does not match canvas {[height, width]}")
        return rle_decode(encoded["counts"], height, width)
    if isinstance(encoded, (list, tuple)):
        if len(encoded) == 0:
            raise MaskDecodeError("empty polygon list")
        if isinstance(encoded[0], (list, tuple, np.ndarray)):
            mask = np.zeros((height, width), dtype=bool)
            for poly in encoded:
                mask |= rasterize_polygon(poly, height, width)
            return mask
        return rasterize_polygon(encoded, height, width)
    raise MaskDecodeError(f"unsupported segmentation type {type(encoded).__name__}")


def mask_bbox(mask: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


# ---------------------------------------------------------------------------
# Detections and matches
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DetectedObject:
    """One detection in one image frame.

    ``bbox`` is ``(x, y, w, h)`` and ``mask`` a full-frame boolean array
    restricted to the bbox extent.  A detection without segmentation is a
    full-box mask.
    """

    source_id: int
    category: str
    score: float
    bbox: Tuple[int, int, int, int]
    mask: np.ndarray
    index: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("object mask must be 2-D")
        if not 0.0 <= float(self.score) <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        bbox = tuple(int(round(v)) for v in self.bbox)
        mask = mask & bbox_mask(bbox, *mask.shape)
        if not mask.any():
            raise ValueError(f"detection {self.category}#{self.index} in image {self.source_id} has an empty mask")
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "score", float(self.score))

    @classmethod
    def from_box(cls, source_id, category, bbox, frame_shape, score=1.0, index=0, segmentation=None, extra=None):
        h, w = frame_shape
        bbox = clamp_bbox(bbox, h, w)
        if segmentation is None:
            mask = bbox_mask(bbox, h, w)
        else:
            mask = decode_object_mask(segmentation, (h, w))
        return cls(source_id, category, score, bbox, mask, index, dict(extra or {}))

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def key(self) -> Tuple[int, int]:
        return (self.source_id, self.index)

    def pixels(self) -> np.ndarray:
        """Flat (row-major) indices of the mask pixels, ascending."""
        return np.flatnonzero(self.mask.ravel())

    def __repr__(self):
        return f"DetectedObject(src={self.source_id}, idx={self.index}, {self.category!r}, bbox={self.bbox})"


def clamp_bbox(bbox: Sequence[float], height: int, width: int) -> Tuple[int, int, int, int]:
    x, y, w, h = (float(v) for v in bbox)
    xa, ya = max(x, 0.0), max(y, 0.0)
    xb, yb = min(x + w, float(width)), min(y + h, float(height))
    if xb <= xa or yb <= ya:
        raise ValueError(f"bbox {list(bbox)} lies outside the {width}x{height} frame")
    xa_i, ya_i = int(np.floor(xa)), int(np.floor(ya))
    return xa_i, ya_i, max(int(np.ceil(xb)) - xa_i, 1), max(int(np.ceil(yb)) - ya_i, 1)


@dataclass(frozen=True)
class PointMatchSet:
    """Point pairs ``p`` (in image ``frame_a``) <-> ``q`` (in image ``frame_b``)."""

    p: np.ndarray
    q: np.ndarray
    score: Optional[np.ndarray] = None
    frame_a: int = 0
    frame_b: int = 1

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).reshape(-1, 2)
        q = np.asarray(self.q, dtype=np.float64).reshape(-1, 2)
        if p.shape != q.shape:
            raise ValueError(f"match arrays differ in length: {len(p)} vs {len(q)}")
        score = np.ones(len(p)) if self.score is None else np.asarray(self.score, dtype=np.float64)
        if score.shape != (len(p),):
            raise ValueError("score must have one entry per match")
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "score", _frozen(score))

    def __len__(self):
        return len(self.p)

    def swapped(self) -> "PointMatchSet":
        return PointMatchSet(self.q, self.p, self.score, self.frame_b, self.frame_a)

    def subset(self, keep: np.ndarray) -> "PointMatchSet":
        return PointMatchSet(self.p[keep], self.q[keep], self.score[keep], self.frame_a, self.frame_b)

    def check_bounds(self, shape_a: Tuple[int, int], shape_b: Tuple[int, int]) -> None:
        for name, pts, (h, w) in (("p", self.p, shape_a), ("q", self.q, shape_b)):
            bad = (pts[:, 0] < -0.5) | (pts[:, 1] < -0.5) | (pts[:, 0] > w - 0.5) | (pts[:, 1] > h - 0.5)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ValueError(f"match {i}: point {name}={pts[i].tolist()} outside {w}x{h} image")


def points_to_pixels(pts: np.ndarray) -> np.ndarray:
    """Nearest pixel (x, y) for continuous points."""
    return np.floor(np.asarray(pts, dtype=np.float64) + 0.5).astype(np.int64)


def in_mask(mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pix = points_to_pixels(pts)
    h, w = mask.shape
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    out = np.zeros(len(pix), dtype=bool)
    out[ok] = mask[pix[ok, 1], pix[ok, 0]]
    return out


def group_by_source(objects: Iterable[DetectedObject], k: int) -> List[List[DetectedObject]]:
    groups: List[List[DetectedObject]] = [[] for _ in range(k)]
    for o in objects:
        groups[o.source_id].append(o)
    return groups
