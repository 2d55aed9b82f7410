"""
File formats: images, detection and match JSON, label maps, tiny oracle
instances and reports.
"""

from __future__ import annotations

import json
import os
from collections import OrderedDict
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import OCCLUDED, DetectedObject, MaskDecodeError, PointMatchSet, Raster, mask_bbox
from .energy import EnergyModel, EnergyParams

REPORT_VERSION = "spec=1"

DETECTION_REQUIRED = ("image_id", "category", "score", "bbox")
DETECTION_KNOWN = DETECTION_REQUIRED + ("segmentation",)
MATCH_REQUIRED = ("image_a", "image_b", "x1", "y1", "x2", "y2")
MATCH_KNOWN = MATCH_REQUIRED + ("score",)


class InputError(ValueError):
    """Unreadable or malformed input file."""


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def read_image(path: str) -> Raster:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "F"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            elif im.mode in ("LA",):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return Raster.full(arr)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(data, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_image(path: str, raster_or_array) -> None:
    data = raster_or_array.data if isinstance(raster_or_array, Raster) else np.asarray(raster_or_array)
    arr = to_uint8(data)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


LABEL_COLORS = [
    (255, 0, 255),  # occluded
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
]


def label_palette(n_labels: int) -> List[int]:
    pal = []
    for i in range(256):
        if i < len(LABEL_COLORS):
            pal.extend(LABEL_COLORS[i])
        else:
            pal.extend(((37 * i) % 256, (91 * i) % 256, (173 * i) % 256))
    return pal


def write_label_map(path: str, labeling: np.ndarray) -> None:
    """Paletted PNG: pixel value = label, palette entry 0 (occluded) is magenta."""
    lab = np.asarray(labeling)
    if lab.min() < 0 or lab.max() > 255:
        raise ValueError("labels must fit in 8 bits")
    arr = np.ascontiguousarray(lab.astype(np.uint8))
    im = Image.frombytes("P", (arr.shape[1], arr.shape[0]), arr.tobytes())
    im.putpalette(label_palette(int(lab.max()) + 1))
    im.save(path, optimize=False)


def read_label_map(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int64)


# ---------------------------------------------------------------------------
# Image ids
# ---------------------------------------------------------------------------

class ImageIndex:
    """Resolves image ids (integer index, file name or stem) to input positions."""

    def __init__(self, paths: Sequence[str]):
        self.paths = list(paths)
        self._ids: Dict[str, int] = {}
        for i, p in enumerate(self.paths):
            base = os.path.basename(p)
            for key in (base, os.path.splitext(base)[0], p):
                self._ids.setdefault(key, i)

    def resolve(self, image_id: Any) -> int:
        if isinstance(image_id, bool):
            raise InputError(f"invalid image id {image_id!r}")
        if isinstance(image_id, int):
            if 0 <= image_id < len(self.paths):
                return image_id
            raise InputError(f"image index {image_id} out of range (have {len(self.paths)} inputs)")
        if isinstance(image_id, str):
            if image_id in self._ids:
                return self._ids[image_id]
            if image_id.isdigit() and int(image_id) < len(self.paths):
                return int(image_id)
        raise InputError(f"unknown image id {image_id!r}")


def _load_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _records(data: Any, key: str, path: str) -> List[dict]:
    if isinstance(data, dict) and key in data:
        data = data[key]
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a list of records")
    for i, rec in enumerate(data):
        if not isinstance(rec, dict):
            raise InputError(f"{path}: record {i} is not an object")
    return data


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------

def parse_detections(
    records: Sequence[dict], index: ImageIndex, shapes: Sequence[Tuple[int, int]], where: str = "detections"
) -> List[List[DetectedObject]]:
    """Detections grouped per input image, numbered in file order per image."""
    out: List[List[DetectedObject]] = [[] for _ in shapes]
    for i, rec in enumerate(records):
        missing = [k for k in DETECTION_REQUIRED if k not in rec]
        if missing:
            raise InputError(f"{where}: record {i} lacks required field(s) {missing}")
        src = index.resolve(rec["image_id"])
        bbox = rec["bbox"]
        if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
            raise InputError(f"{where}: record {i} bbox must be [x, y, w, h]")
        try:
            score = float(rec["score"])
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}: record {i} score is not a number") from exc
        extra = OrderedDict((k, rec[k]) for k in rec if k not in DETECTION_KNOWN)
        try:
            obj = DetectedObject.from_box(
                src, str(rec["category"]), bbox, shapes[src], score,
                index=len(out[src]), segmentation=rec.get("segmentation"), extra=extra,
            )
        except (ValueError, MaskDecodeError) as exc:
            raise InputError(f"{where}: record {i}: {exc}") from exc
        out[src].append(obj)
    return out


def read_detections(path: str, index: ImageIndex, shapes: Sequence[Tuple[int, int]]) -> List[List[DetectedObject]]:
    return parse_detections(_records(_load_json(path), "detections", path), index, shapes, path)


def detection_record(o: DetectedObject, image_id: Any) -> Dict[str, Any]:
    rec: Dict[str, Any] = OrderedDict()
    rec["image_id"] = image_id
    rec["category"] = o.category
    rec["score"] = o.score
    rec["bbox"] = [int(v) for v in o.bbox]
    rec.update(o.extra)
    return rec


# ---------------------------------------------------------------------------
# Matches
# ---------------------------------------------------------------------------

def parse_matches(
    records: Sequence[dict], index: ImageIndex, shapes: Sequence[Tuple[int, int]], where: str = "matches"
) -> Dict[Tuple[int, int], PointMatchSet]:
    """Point matches grouped by image pair (i, j) with i < j; ``p`` lies in image i."""
    groups: Dict[Tuple[int, int], List[Tuple[float, float, float, float, float]]] = {}
    for i, rec in enumerate(records):
        missing = [k for k in MATCH_REQUIRED if k not in rec]
        if missing:
            raise InputError(f"{where}: record {i} lacks required field(s) {missing}")
        a, b = index.resolve(rec["image_a"]), index.resolve(rec["image_b"])
        if a == b:
            raise InputError(f"{where}: record {i} matches an image to itself")
        try:
            x1, y1, x2, y2 = (float(rec[k]) for k in ("x1", "y1", "x2", "y2"))
            s = float(rec.get("score", 1.0))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}: record {i} has a non-numeric coordinate") from exc
        if a > b:
            a, b, x1, y1, x2, y2 = b, a, x2, y2, x1, y1
        groups.setdefault((a, b), []).append((x1, y1, x2, y2, s))
    out = {}
    for key in sorted(groups):
        arr = np.array(groups[key])
        ms = PointMatchSet(arr[:, 0:2], arr[:, 2:4], arr[:, 4], key[0], key[1])
        try:
            ms.check_bounds(shapes[key[0]], shapes[key[1]])
        except ValueError as exc:
            raise InputError(f"{where}: images {key}: {exc}") from exc
        out[key] = ms
    return out


def read_matches(path: str, index: ImageIndex, shapes: Sequence[Tuple[int, int]]) -> Dict[Tuple[int, int], PointMatchSet]:
    return parse_matches(_records(_load_json(path), "matches", path), index, shapes, path)


def match_records(matches: Mapping[Tuple[int, int], PointMatchSet], ids: Sequence[Any]) -> List[Dict[str, Any]]:
    out = []
    for (a, b), ms in sorted(matches.items()):
        for (x1, y1), (x2, y2), s in zip(ms.p, ms.q, ms.score):
            out.append(OrderedDict([
                ("image_a", ids[a]), ("image_b", ids[b]),
                ("x1", float(x1)), ("y1", float(y1)), ("x2", float(x2)), ("y2", float(y2)),
                ("score", float(s)),
            ]))
    return out


# ---------------------------------------------------------------------------
# Dense flow
# ---------------------------------------------------------------------------

def flow_samples(dx, dy, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Sample positions (x, y) and motion vectors from a per-pixel flow grid;
    null entries (NaN) are skipped."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    if dx.ndim != 2 or dx.shape != dy.shape:
        raise ValueError(f"dx and dy must be equally sized 2-D grids, got {dx.shape} and {dy.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys, xs = np.mgrid[0:dx.shape[0]:stride, 0:dx.shape[1]:stride]
    vec = np.column_stack([dx[ys, xs].ravel(), dy[ys, xs].ravel()])
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    ok = np.isfinite(vec).all(axis=1)
    return pts[ok], vec[ok]


def parse_flows(
    records: Sequence[dict], index: ImageIndex, shapes: Sequence[Tuple[int, int]], where: str = "flow"
) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """Dense flow fields keyed by candidate index.  Each grid lies on the
    reference pixel grid and holds the residual motion of the
    homography-warped candidate at that pixel."""
    out: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for i, rec in enumerate(records):
        missing = [k for k in ("image_id", "dx", "dy") if k not in rec]
        if missing:
            raise InputError(f"{where}: record {i} lacks required field(s) {missing}")
        j = index.resolve(rec["image_id"])
        if j == 0:
            raise InputError(f"{where}: record {i} gives flow for the reference image")
        if j in out:
            raise InputError(f"{where}: record {i} repeats the flow of image {rec['image_id']!r}")
        try:
            dx = np.array(rec["dx"], dtype=np.float64)
            dy = np.array(rec["dy"], dtype=np.float64)
            if dx.shape != tuple(shapes[0]):
                raise ValueError(f"grid {dx.shape} does not match the reference size {tuple(shapes[0])}")
            out[j] = flow_samples(dx, dy, int(rec.get("stride", 1)))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}: record {i}: {exc}") from exc
    return out


def read_flows(path: str, index: ImageIndex, shapes: Sequence[Tuple[int, int]]) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    return parse_flows(_records(_load_json(path), "flows", path), index, shapes, path)


# ---------------------------------------------------------------------------
# Tiny energy instances for the oracle command
# ---------------------------------------------------------------------------

def model_from_instance(data: Dict[str, Any], params: Optional[EnergyParams] = None) -> EnergyModel:
    """Build an EnergyModel from an instance dict.

    Keys: ``images`` (list of HxW or HxWxC nested lists), optional ``masks``
    (list of HxW 0/1), ``objects`` (``{"source", "category", "pixels": [[x, y], ...]}``),
    ``pairs`` (index pairs into ``objects``) and optional ``params``.
    """
    try:
        images = [np.asarray(im, dtype=np.float64) for im in data["images"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"instance: bad or missing 'images': {exc}") from exc
    if not images:
        raise InputError("instance: no images")
    shape = images[0].shape[:2]
    masks = data.get("masks")
    if masks is None:
        masks = [np.ones(shape, bool) for _ in images]
    else:
        masks = [np.asarray(m, dtype=bool) for m in masks]
    if len(masks) != len(images):
        raise InputError("instance: one mask per image required")
    try:
        rasters = [Raster(im, m) for im, m in zip(images, masks)]
    except ValueError as exc:
        raise InputError(f"instance: {exc}") from exc
    objects = []
    for i, rec in enumerate(data.get("objects", [])):
        m = np.zeros(shape, dtype=bool)
        for x, y in rec["pixels"]:
            if not (0 <= x < shape[1] and 0 <= y < shape[0]):
                raise InputError(f"instance: object {i} pixel {(x, y)} outside the canvas")
            m[y, x] = True
        try:
            objects.append(DetectedObject(int(rec["source"]), str(rec.get("category", "object")), 1.0, mask_bbox(m), m, i))
        except (ValueError, TypeError) as exc:
            raise InputError(f"instance: object {i}: {exc}") from exc
    pairs = []
    for a, b in data.get("pairs", []):
        pairs.append((objects[a], objects[b]))
    if params is None:
        params = EnergyParams(**data.get("params", {}))
    try:
        return EnergyModel(rasters, objects, pairs, params)
    except ValueError as exc:
        raise InputError(f"instance: {exc}") from exc


def read_instance(path: str) -> Dict[str, Any]:
    data = _load_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: instance must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return OrderedDict((str(k), _clean(v)) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_report(report: Mapping[str, Any]) -> str:
    body = OrderedDict([("version", REPORT_VERSION)])
    for k, v in report.items():
        if k != "version":
            body[k] = v
    return json.dumps(_clean(body), indent=2) + "\n"


def write_report(path: str, report: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))
