"""
End-to-end stitching and evaluation on in-memory inputs.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .blending import composite, poisson_blend, render_occlusion
from .config import StitchConfig
from .core import OCCLUDED, DetectedObject, PointMatchSet, Raster, mask_bbox
from .correspondence import ObjectMatchSet, build_equivalence
from .energy import EnergyModel, total_energy
from .evaluation import count_report, crop_score_direct, crop_score_template
from .registration import (
    Homography,
    NoRegistrationError,
    Registration,
    compute_canvas,
    register,
    warp_image,
    warp_mask,
)
from .solver import SolveReport, alpha_expansion

logger = logging.getLogger(__name__)


@dataclass
class StitchResult:
    mosaic: Raster
    labeling: np.ndarray
    canvas_images: List[Raster]
    canvas_objects: List[DetectedObject]
    match_set: ObjectMatchSet
    solve: SolveReport
    registrations: List[Registration]
    report: Dict[str, Any]


def _warp_object(o: DetectedObject, reg: Registration, canvas: Tuple[int, int]) -> Optional[DetectedObject]:
    m = warp_mask(o.mask, reg.homography, canvas, reg.mesh)
    if not m.any():
        return None
    return DetectedObject(o.source_id, o.category, o.score, mask_bbox(m), m, o.index, dict(o.extra))


def register_all(
    images: Sequence[Raster],
    matches: Mapping[Tuple[int, int], PointMatchSet],
    cfg: StitchConfig,
    flows: Optional[Mapping[int, Tuple[np.ndarray, np.ndarray]]] = None,
) -> Tuple[List[Registration], Tuple[int, int]]:
    """Warps of every input into a shared non-negative canvas; input 0 is the
    reference.  Returns the registrations and the canvas (width, height).

    ``flows`` optionally maps a candidate index to dense flow samples
    (positions and residual motion in the reference frame) for its mesh."""
    flows = flows or {}
    regs = [Registration(Homography.identity(), None, 0)]
    for j in range(1, len(images)):
        ms = matches.get((0, j))
        if ms is None:
            raise NoRegistrationError(f"no matches between the reference and input {j}")
        size = (images[j].width, images[j].height)
        regs.append(register(
            ms, size, cfg.ransac, grid=(cfg.mesh.rows, cfg.mesh.cols), lam=cfg.mesh.lambda_reg,
            seed=cfg.seed, refine=cfg.mesh.enabled, flow=flows.get(j),
        ))
    extents = [r.extent((im.width, im.height)) for r, im in zip(regs[1:], images[1:])]
    canvas, shift = compute_canvas((images[0].width, images[0].height), extents)
    return [r.then(shift) for r in regs], canvas


def stitch(
    images: Sequence[Raster],
    detections: Sequence[Sequence[DetectedObject]],
    matches: Mapping[Tuple[int, int], PointMatchSet],
    cfg: StitchConfig = StitchConfig(),
    image_ids: Optional[Sequence[Any]] = None,
    flows: Optional[Mapping[int, Tuple[np.ndarray, np.ndarray]]] = None,
) -> StitchResult:
    if len(images) < 2:
        raise ValueError("need at least two input images")
    if len(detections) != len(images):
        raise ValueError("need one detection list per image")
    ids = list(image_ids) if image_ids is not None else list(range(len(images)))
    timings = OrderedDict()
    t0 = time.perf_counter()

    regs, canvas = register_all(images, matches, cfg, flows)
    timings["registration"] = time.perf_counter() - t0
    warped = [warp_image(im, r.homography, canvas, r.mesh) for im, r in zip(images, regs)]

    canvas_objs: List[DetectedObject] = []
    by_key: Dict[Tuple[int, int], DetectedObject] = {}
    for objs, r in zip(detections, regs):
        for o in objs:
            w = _warp_object(o, r, canvas)
            if w is None:
                logger.info("detection %r leaves the canvas; dropped", o)
                continue
            canvas_objs.append(w)
            by_key[w.key] = w

    match_set = build_equivalence(detections, matches, cfg.density)
    pairs = [(by_key[a.key], by_key[b.key]) for a, b in match_set.pairs() if a.key in by_key and b.key in by_key]

    t1 = time.perf_counter()
    model = EnergyModel(warped, canvas_objs, pairs, cfg.energy)
    solve = alpha_expansion(model, max_cycles=cfg.solver.max_cycles)
    timings["seam"] = time.perf_counter() - t1
    labeling = solve.labeling
    terms = total_energy(labeling, model)

    t2 = time.perf_counter()
    blend_info: Dict[str, Any] = OrderedDict()
    if cfg.blend.enabled:
        br = poisson_blend(warped, labeling, cfg.blend.band)
        blended = br.raster
        blend_info["unknowns"] = br.unknowns
        blend_info["relative_residual"] = br.residual
        blend_info["iterations"] = br.iterations
    else:
        blended = composite(warped, labeling)
        blend_info["unknowns"] = 0
    data = np.clip(np.rint(blended.data), 0, 255)
    data[labeling == OCCLUDED] = 0
    rendered = render_occlusion(Raster(data, labeling != OCCLUDED), labeling, cfg.occlusion_mode)
    timings["blend"] = time.perf_counter() - t2

    report: Dict[str, Any] = OrderedDict()
    report["inputs"] = [
        OrderedDict([("id", ids[i]), ("width", im.width), ("height", im.height), ("channels", im.channels)])
        for i, im in enumerate(images)
    ]
    report["config"] = cfg.to_dict()
    report["canvas"] = OrderedDict([("width", canvas[0]), ("height", canvas[1])])
    report["registration"] = [
        OrderedDict([
            ("id", ids[i]),
            ("homography", np.round(r.homography.matrix, 12).tolist()),
            ("inliers", r.inliers),
            ("mesh", r.mesh is not None),
        ])
        for i, r in enumerate(regs)
    ]
    report["detections"] = [
        OrderedDict([
            ("image_id", ids[o.source_id]), ("index", o.index), ("category", o.category), ("score", o.score),
            ("bbox", list(o.bbox)), ("canvas_bbox", list(by_key[o.key].bbox) if o.key in by_key else None),
            ("extra", OrderedDict(o.extra)),
        ])
        for objs in detections for o in objs
    ]
    report["classes"] = [
        [OrderedDict([("image_id", ids[o.source_id]), ("index", o.index), ("category", o.category)]) for o in cls]
        for cls in match_set.classes
    ]
    report["class_threshold"] = match_set.threshold
    report["energy"] = OrderedDict((k, float(v)) for k, v in terms.as_dict().items())
    report["solver"] = solve.as_dict()
    counts = np.bincount(labeling.ravel(), minlength=len(images) + 1)
    report["label_counts"] = OrderedDict((str(i), int(c)) for i, c in enumerate(counts))
    report["blend"] = blend_info
    report["occlusion"] = OrderedDict([
        ("mode", cfg.occlusion_mode),
        ("occluded_pixels", int(counts[OCCLUDED])),
        ("crop", list(rendered.crop) if rendered.crop is not None else None),
    ])
    logger.info("stitch timings: %s", dict(timings))
    return StitchResult(rendered.raster, labeling, warped, canvas_objs, match_set, solve, regs, report)


def evaluate(
    output: Raster,
    output_objects: Sequence[DetectedObject],
    inputs: Sequence[Raster],
    input_objects: Sequence[Sequence[DetectedObject]],
    matches: Mapping[Tuple[int, int], PointMatchSet],
    cfg: StitchConfig = StitchConfig(),
    input_ids: Optional[Sequence[Any]] = None,
) -> Dict[str, Any]:
    """Object-centred evaluation of any stitched output.

    ``matches`` use input indices 1..n for the inputs and 0 for the output;
    pairs (0, i) give plausible warps of each input onto the output, pairs
    among inputs feed the object equivalence classes.
    """
    n = len(inputs)
    ids = list(input_ids) if input_ids is not None else list(range(n))
    # inputs are numbered 0..n-1 from here on, whatever the caller used
    input_objects = [[replace(o, source_id=i) for o in objs] for i, objs in enumerate(input_objects)]
    canvas = (output.width, output.height)
    warped_imgs: List[Raster] = []
    warped_objs: List[List[DetectedObject]] = []
    regs_info = []
    for i in range(n):
        ms = matches.get((0, i + 1))
        if ms is None:
            raise NoRegistrationError(f"no matches between the output and input {ids[i]}")
        reg = register(ms, (inputs[i].width, inputs[i].height), cfg.ransac,
                       grid=(cfg.mesh.rows, cfg.mesh.cols), lam=cfg.mesh.lambda_reg,
                       seed=cfg.seed, refine=False)
        warped_imgs.append(warp_image(inputs[i], reg.homography, canvas))
        objs = []
        for o in input_objects[i]:
            w = _warp_object(o, reg, canvas)
            if w is not None:
                objs.append(w)
        warped_objs.append(objs)
        regs_info.append(OrderedDict([("id", ids[i]), ("homography", np.round(reg.homography.matrix, 12).tolist()),
                                      ("inliers", reg.inliers)]))

    # equivalence over the inputs only, re-indexed to 0..n-1
    in_matches = {(a - 1, b - 1): ms for (a, b), ms in matches.items() if a >= 1 and b >= 1}
    match_set = build_equivalence(input_objects, in_matches, cfg.density)
    counts = count_report(output_objects, input_objects, match_set)
    direct = crop_score_direct(output, output_objects, warped_imgs, warped_objs, cfg.msssim)
    template = crop_score_template(output, output_objects, list(inputs))
    report: Dict[str, Any] = OrderedDict()
    report["config"] = cfg.to_dict()
    report["registration"] = regs_info
    report["counts"] = [c.as_dict() for c in counts.values()]
    objs = []
    for cs, t in zip(direct, template):
        d = cs.as_dict()
        d["template"] = t
        objs.append(d)
    report["objects"] = objs
    report["classes"] = [
        [OrderedDict([("image_id", ids[o.source_id]), ("index", o.index), ("category", o.category)]) for o in cls]
        for cls in match_set.classes
    ]
    return report
