"""
Object-centred scoring of a stitched output: expected versus observed
object counts, and per-object crop scores by MS-SSIM and template matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal

from .core import DetectedObject, Raster, mask_bbox
from .correspondence import ObjectMatchSet

DEFAULT_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MsSsimConfig:
    weights: Tuple[float, ...] = DEFAULT_WEIGHTS
    filter_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    max_val: float = 255.0

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) < 1:
            raise ValueError("need at least one scale")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-3:
            raise ValueError(f"scale weights must be non-negative and sum to 1, got {w}")
        if self.filter_size < 1 or self.sigma <= 0 or self.max_val <= 0:
            raise ValueError("filter size, sigma and max_val must be positive")

    @property
    def scales(self) -> int:
        return len(self.weights)

    def fits(self, height: int, width: int) -> bool:
        """Whether the coarsest scale still holds a full window."""
        return coarsest_size(min(height, width), self.scales) >= self.filter_size

    def fitted(self, height: int, width: int) -> "MsSsimConfig":
        """Drop coarse scales (renormalising the remaining weights) and, if
        needed, shrink the window until an image of the given size fits."""
        cfg = self
        m = min(height, width)
        n = self.scales
        while n > 1 and coarsest_size(m, n) < self.filter_size:
            n -= 1
        w = np.array(self.weights[:n])
        w = tuple(w / w.sum())
        size = self.filter_size
        if m < size:
            size = max(1, m if m % 2 else m - 1)
        return replace(cfg, weights=w, filter_size=size)


def coarsest_size(n: int, scales: int) -> int:
    for _ in range(scales - 1):
        n = (n + 1) // 2
    return n


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    c = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    return signal.correlate(img, win[:, :, None], mode="valid", method="direct")


def _ssim_terms(x: np.ndarray, y: np.ndarray, cfg: MsSsimConfig):
    win = gaussian_window(cfg.filter_size, cfg.sigma)
    c1 = (cfg.k1 * cfg.max_val) ** 2
    c2 = (cfg.k2 * cfg.max_val) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    num0 = mx * my * 2.0
    den0 = mx * mx + my * my
    lum = (num0 + c1) / (den0 + c1)
    num1 = _filter_valid(x * y, win) * 2.0
    den1 = _filter_valid(x * x + y * y, win)
    cs = (num1 - num0 + c2) / (den1 - den0 + c2)
    return (lum * cs).mean(axis=(0, 1)), cs.mean(axis=(0, 1))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    img = np.pad(img, ((0, h % 2), (0, w % 2), (0, 0)), mode="symmetric")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _as_array(img) -> np.ndarray:
    a = img.data if isinstance(img, Raster) else np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return a.astype(np.float64)


def ms_ssim(a, b, cfg: MsSsimConfig = MsSsimConfig()) -> float:
    """Multi-scale structural similarity of two equally sized images.

    Per channel, the contrast-structure terms of the finer scales and the
    full SSIM of the coarsest scale are clipped at zero and combined as a
    weighted geometric mean; channels are then averaged.
    """
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if not cfg.fits(*x.shape[:2]):
        raise ValueError(
            f"images of size {x.shape[:2]} are too small for {cfg.scales} scales with an "
            f"{cfg.filter_size}-pixel window; use fewer scales"
        )
    terms = []
    for s in range(cfg.scales):
        if s > 0:
            x, y = _downsample(x), _downsample(y)
        ssim, cs = _ssim_terms(x, y, cfg)
        terms.append(np.maximum(cs, 0.0) if s < cfg.scales - 1 else np.maximum(ssim, 0.0))
    w = np.array(cfg.weights)[:, None]
    per_channel = np.prod(np.stack(terms) ** w, axis=0)
    return float(per_channel.mean())


def ms_ssim_fitted(a, b, cfg: MsSsimConfig = MsSsimConfig()) -> float:
    """ms_ssim with the configuration fitted to the image size."""
    x = _as_array(a)
    return ms_ssim(a, b, cfg.fitted(*x.shape[:2]))


# ---------------------------------------------------------------------------
# Template matching
# ---------------------------------------------------------------------------

def _gray(img) -> np.ndarray:
    a = _as_array(img)
    return a.mean(axis=2)


def normxcorr(template, image) -> np.ndarray:
    """Normalised cross-correlation at every placement of ``template`` fully
    inside ``image``; output shape (H - h + 1, W - w + 1).

    Placements where either window has zero variance score 0.
    """
    t = _gray(template)
    im = _gray(image)
    th, tw = t.shape
    ih, iw = im.shape
    if th > ih or tw > iw:
        raise ValueError(f"template {t.shape} larger than search image {im.shape}")
    n = th * tw
    t0 = t - t.mean()
    t_ss = float((t0 ** 2).sum())
    im0 = im - im.mean()
    num = signal.fftconvolve(im0, t0[::-1, ::-1], mode="valid")
    c1 = np.pad(np.cumsum(np.cumsum(im0, 0), 1), ((1, 0), (1, 0)))
    c2 = np.pad(np.cumsum(np.cumsum(im0 ** 2, 0), 1), ((1, 0), (1, 0)))

    def win(c):
        return c[th:, tw:] - c[:-th, tw:] - c[th:, :-tw] + c[:-th, :-tw]

    s1, s2 = win(c1), win(c2)
    var_i = np.maximum(s2 - s1 * s1 / n, 0.0)
    den = np.sqrt(var_i * t_ss)
    scale = max(1.0, float(np.abs(im0).max()) ** 2 * n)
    ok = (var_i > 1e-10 * scale) & (t_ss > 1e-10 * scale)
    out = np.zeros_like(num)
    out[ok] = num[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Counts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoryCount:
    category: str
    n_output: int
    n_expected: int
    max_input: int
    sum_input: int

    @property
    def delta(self) -> int:
        return self.n_output - self.n_expected

    @property
    def omission_flag(self) -> bool:
        return self.n_output < self.max_input

    @property
    def duplication_flag(self) -> bool:
        return self.n_output > self.sum_input

    @property
    def verdict(self) -> str:
        if self.delta < 0:
            return "omission suspected"
        if self.delta > 0:
            return "duplication suspected"
        return "consistent"

    def as_dict(self) -> dict:
        return {
            "category": self.category,
            "n_output": self.n_output,
            "n_expected": self.n_expected,
            "delta": self.delta,
            "omission_flag": self.omission_flag,
            "duplication_flag": self.duplication_flag,
            "verdict": self.verdict,
        }


def expected_count(match_set: ObjectMatchSet) -> Dict[str, int]:
    return match_set.counts_by_category()


def count_report(
    output_objects: Sequence[DetectedObject],
    input_objects: Sequence[Sequence[DetectedObject]],
    match_set: ObjectMatchSet,
) -> Dict[str, CategoryCount]:
    """Per-category counts, plus an ``"*"`` entry summing all categories."""
    expected = expected_count(match_set)
    cats = sorted(set(expected) | {o.category for o in output_objects}
                  | {o.category for objs in input_objects for o in objs})
    out: Dict[str, CategoryCount] = {}
    for c in cats:
        per_input = [sum(1 for o in objs if o.category == c) for objs in input_objects]
        out[c] = CategoryCount(
            c,
            sum(1 for o in output_objects if o.category == c),
            expected.get(c, 0),
            max(per_input, default=0),
            sum(per_input),
        )
    per_input_all = [len(objs) for objs in input_objects]
    out["*"] = CategoryCount(
        "*", len(output_objects), sum(expected.values()), max(per_input_all, default=0), sum(per_input_all)
    )
    return out


# ---------------------------------------------------------------------------
# Crop scores
# ---------------------------------------------------------------------------

def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def associate(
    output_objects: Sequence[DetectedObject],
    warped_inputs: Sequence[Sequence[DetectedObject]],
    min_iou: float = 0.3,
) -> Dict[Tuple[int, int], List[Tuple[int, DetectedObject]]]:
    """For every output object, the same-category input detections (already in
    the output frame) overlapping it with IoU >= ``min_iou``; at most one per input."""
    out = {}
    for o in output_objects:
        found = []
        for i, objs in enumerate(warped_inputs):
            best, best_iou = None, min_iou
            for cand in objs:
                if cand.category != o.category or cand.mask.shape != o.mask.shape:
                    continue
                iou = mask_iou(o.mask, cand.mask)
                if iou >= best_iou and (best is None or iou > best_iou):
                    best, best_iou = cand, iou
            if best is not None:
                found.append((i, best))
        out[o.key] = found
    return out


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = _as_array(img)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    gy, gx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(img[:, :, c], [gy, gx], order=1, mode="nearest") for c in range(img.shape[2])],
        axis=-1,
    )


def _crop(img: np.ndarray, bbox) -> np.ndarray:
    x, y, w, h = bbox
    return img[y:y + h, x:x + w]


@dataclass(frozen=True)
class CropScore:
    key: Tuple[int, int]
    category: str
    scores: Tuple[float, ...]
    template: Optional[float] = None

    @property
    def matched(self) -> bool:
        return len(self.scores) > 0

    @property
    def avg(self) -> Optional[float]:
        return float(np.mean(self.scores)) if self.scores else None

    @property
    def max(self) -> Optional[float]:
        return float(np.max(self.scores)) if self.scores else None

    def as_dict(self) -> dict:
        return {
            "object": list(self.key),
            "category": self.category,
            "matched": self.matched,
            "msssim_avg": self.avg,
            "msssim_max": self.max,
            "template": self.template,
        }


def region_pair_score(out_img, out_mask, in_img, in_mask, cfg: MsSsimConfig = MsSsimConfig()) -> float:
    """MS-SSIM between two object regions, each cropped to its own box and
    the smaller resized to the larger."""
    a = _crop(_as_array(out_img), mask_bbox(out_mask))
    b = _crop(_as_array(in_img), mask_bbox(in_mask))
    h = max(a.shape[0], b.shape[0])
    w = max(a.shape[1], b.shape[1])
    a = resize_bilinear(a, h, w)
    b = resize_bilinear(b, h, w)
    return ms_ssim_fitted(a, b, cfg)


def crop_score_direct(
    output: Raster,
    output_objects: Sequence[DetectedObject],
    warped_images: Sequence[Raster],
    warped_objects: Sequence[Sequence[DetectedObject]],
    cfg: MsSsimConfig = MsSsimConfig(),
    min_iou: float = 0.3,
) -> List[CropScore]:
    """Per output object, MS-SSIM against each associated input object region."""
    assoc = associate(output_objects, warped_objects, min_iou)
    res = []
    for o in output_objects:
        scores = tuple(
            region_pair_score(output, o.mask, warped_images[i], cand.mask, cfg) for i, cand in assoc[o.key]
        )
        res.append(CropScore(o.key, o.category, scores))
    return res


def crop_score_template(output: Raster, output_objects: Sequence[DetectedObject], searches: Sequence[Raster]) -> List[float]:
    """Per output object, the best NCC of its box region over all search images."""
    out = []
    for o in output_objects:
        tmpl = _crop(output.data, o.bbox)
        best = -1.0
        for s in searches:
            if tmpl.shape[0] > s.height or tmpl.shape[1] > s.width:
                continue
            best = max(best, float(normxcorr(tmpl, s.data).max()))
        out.append(best)
    return out
