"""Command-line entry points: stitch, evaluate, oracle."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import OrderedDict
from importlib import resources
from typing import Dict, List, Optional, Sequence

from .blending import OCCLUSION_MODES
from .config import ConfigError, StitchConfig, load_config, merge, parse_assignments
from .io import (
    ImageIndex,
    InputError,
    dumps_report,
    model_from_instance,
    read_detections,
    read_flows,
    read_image,
    read_instance,
    read_matches,
    write_image,
    write_label_map,
    write_report,
)
from .registration import InsufficientDataError, NoRegistrationError

EXIT_INPUT = 2
EXIT_REGISTRATION = 3
EXIT_CONFIG = 4
EXIT_ORACLE_SIZE = 5

log = logging.getLogger("objstitch")


def _config(args) -> StitchConfig:
    over: Dict = {}
    for item in args.set or []:
        over = merge(over, parse_assignments(item))
    if getattr(args, "occlusion_mode", None) is not None:
        over["occlusion_mode"] = args.occlusion_mode
    if args.seed is not None:
        over["seed"] = args.seed
    return load_config(args.config, over)


def cmd_stitch(args) -> int:
    from .pipeline import stitch

    cfg = _config(args)
    paths = [args.ref] + list(args.candidates)
    if len(paths) < 2:
        raise InputError("need a reference and at least one candidate")
    images = [read_image(p) for p in paths]
    index = ImageIndex(paths)
    shapes = [im.shape for im in images]
    dets = read_detections(args.detections, index, shapes) if args.detections else [[] for _ in paths]
    matches = read_matches(args.matches, index, shapes)
    flows = read_flows(args.flow, index, shapes) if args.flow else None
    ids = [p for p in paths]
    res = stitch(images, dets, matches, cfg, image_ids=ids, flows=flows)
    write_image(args.out, res.mosaic)
    if args.label_map:
        write_label_map(args.label_map, res.labeling)
    if args.report:
        write_report(args.report, res.report)
    log.info("stitched %d images onto a %dx%d canvas (energy %.6g)", len(paths),
             res.labeling.shape[1], res.labeling.shape[0], res.solve.energy)
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    cfg = _config(args)
    inputs = [args.ref] + list(args.candidates)
    paths = [args.mosaic] + inputs
    images = [read_image(p) for p in paths]
    index = ImageIndex(paths)
    shapes = [im.shape for im in images]
    dets = read_detections(args.detections, index, shapes)
    matches = read_matches(args.matches, index, shapes)
    report = evaluate(images[0], dets[0], images[1:], dets[1:], matches, cfg, input_ids=inputs)
    text = dumps_report(report)
    if args.report:
        write_report(args.report, report)
    else:
        sys.stdout.write(text)
    return 0


def cmd_oracle(args) -> int:
    from .solver import alpha_expansion, brute_force_minimize

    cfg = _config(args)
    if args.instance:
        data = read_instance(args.instance)
    else:
        import json
        data = json.loads(resources.files("objstitch").joinpath("data/sample_instance.json").read_text())
    params = cfg.energy
    if "params" in data and not args.config and not args.set:
        params = None  # the instance's own parameters
    model = model_from_instance(data, params)
    lab_b, e_b = brute_force_minimize(model)
    rep = alpha_expansion(model, max_cycles=cfg.solver.max_cycles)
    report = OrderedDict()
    report["instance"] = OrderedDict([
        ("height", model.shape[0]), ("width", model.shape[1]), ("labels", model.n_labels),
    ])
    report["params"] = OrderedDict(vars(model.params.resolved()))
    report["oracle"] = OrderedDict([("energy", e_b), ("labeling", lab_b.tolist())])
    report["solver"] = OrderedDict([
        ("energy", rep.energy), ("labeling", rep.labeling.tolist()),
        ("iterations", rep.iterations), ("converged", rep.converged),
    ])
    report["ratio"] = (rep.energy / e_b) if e_b > 0 else (1.0 if rep.energy == e_b else None)
    text = dumps_report(report)
    if args.report:
        write_report(args.report, report)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="objstitch", description="Object-aware image stitching")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON or key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("stitch", help="stitch a reference and candidate images")
    common(s)
    s.add_argument("--ref", required=True)
    s.add_argument("--candidates", nargs="+", required=True)
    s.add_argument("--detections")
    s.add_argument("--matches", required=True)
    s.add_argument("--flow", help="dense flow fields for mesh refinement (JSON)")
    s.add_argument("--out", required=True)
    s.add_argument("--label-map")
    s.add_argument("--report")
    s.add_argument("--occlusion-mode", choices=OCCLUSION_MODES)
    s.set_defaults(func=cmd_stitch)

    e = sub.add_parser("evaluate", help="object-centred evaluation of a stitched image")
    common(e)
    e.add_argument("--mosaic", required=True, help="stitched output to evaluate")
    e.add_argument("--ref", required=True)
    e.add_argument("--candidates", nargs="+", required=True)
    e.add_argument("--detections", required=True, help="detections for the mosaic and all inputs")
    e.add_argument("--matches", required=True, help="matches mosaic<->inputs and among inputs")
    e.add_argument("--report")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="compare the solver with exhaustive search on a tiny instance")
    common(o)
    o.add_argument("instance", nargs="?", help="instance JSON (default: bundled sample)")
    o.add_argument("--report")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .solver import OracleSizeError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NoRegistrationError, InsufficientDataError) as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION
    except OracleSizeError as exc:
        print(f"instance too large: {exc}", file=sys.stderr)
        return EXIT_ORACLE_SIZE


if __name__ == "__main__":
    sys.exit(main())
