"""Command-line interface.

Exit codes: 0 success, 1 validation / format error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .annio import (
    SCHEMES,
    AnnotationError,
    SceneAnnotation,
    make_split_manifest,
    parse_annotation,
    write_annotation,
    write_manifest,
)
from .core import GridGraph, Kind
from .infer import InferParams, infer_adjacency, postprocess_detections
from .metrics import (
    DEFAULT_TAU_M,
    GraphCounts,
    ScoreReport,
    average_precision,
    dmap_labels,
    graph_counts,
    line_agreement_counts,
    map_iou_labels,
    segmentation_counts,
    tower_agreement_counts,
)
from .raster import RasterFormatError, load_raster, rasterize_gt_lines, save_png, save_raster
from .render import encode_png, render_overlay
from .synth import DetectionNoise, RasterNoise, SynthParams, synth_bundle

logger = logging.getLogger("gridtracer")

ANN_SUFFIX = ".ann"
RASTER_SUFFIXES = (".pgr", ".png")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # bad flags are validation errors (exit 1); argparse's own 2 means I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- file helpers -----------------------------------------------------------------


def read_scene(path) -> SceneAnnotation:
    return parse_annotation(Path(path).read_bytes())


def read_raster(path):
    return load_raster(Path(path).read_bytes())


def write_raster_file(path, raster) -> None:
    path = Path(path)
    data = save_png(raster) if path.suffix.lower() == ".png" else save_raster(raster)
    path.write_bytes(data)


def _expand(paths, suffixes) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in suffixes))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    return out


def load_scenes(paths) -> dict[str, SceneAnnotation]:
    scenes = {}
    for p in _expand(paths, (ANN_SUFFIX,)):
        s = read_scene(p)
        if s.tile_id in scenes:
            raise UsageError(f"duplicate tile id {s.tile_id!r} ({p})")
        scenes[s.tile_id] = s
    return scenes


def paired(pred: dict, gt: dict[str, SceneAnnotation]):
    """``(tile_id, pred, gt)`` triples ordered by tile id; tiles missing a prediction score as empty."""
    extra = sorted(set(pred) - set(gt))
    if extra:
        raise UsageError(f"predictions without ground truth: {extra}")
    return [(t, pred.get(t), gt[t]) for t in sorted(gt)]


def _regional(rows, compute, macro: bool) -> ScoreReport:
    """Aggregate per-tile results into per-region reports and their unweighted mean.

    ``compute(items) -> ScoreReport`` receives a region's list of tile items.
    """
    groups = defaultdict(list)
    for region, item in rows:
        groups[region].append(item)
    regions = {}
    for region, items in groups.items():
        if macro:
            subs = [compute([it]) for it in items]
            names = sorted(subs[0].metrics)
            rep = ScoreReport({k: float(np.mean([s.metrics[k] for s in subs])) for k in names})
            for s in subs:
                for k, v in s.counts.items():
                    rep.counts[k] = rep.counts.get(k, 0) + v
        else:
            rep = compute(items)
        regions[region] = rep
    return ScoreReport.averaged(regions)


def emit(report: ScoreReport, args) -> None:
    fmt = args.format
    text = {"text": report.to_text, "table": report.to_table, "json": report.to_json}[fmt]()
    sys.stdout.write(text)
    if args.report:
        path = Path(args.report)
        path.write_text(report.to_json() if path.suffix == ".json" else report.to_text())


# --- commands -------------------------------------------------------------------------


def _params(args) -> InferParams:
    return InferParams(
        gamma=args.gamma,
        max_span_m=args.max_span_m,
        path_width_px=args.path_width_px,
        conf_threshold=args.conf_threshold,
        nms_overlap=args.nms_overlap,
    )


def cmd_infer(args) -> int:
    dets_scene = read_scene(args.detections)
    raster = read_raster(args.raster)
    if raster.shape != dets_scene.raster_shape:
        raise UsageError(f"raster shape {raster.shape} != detections tile shape {dets_scene.raster_shape}")
    if raster.n_clamped:
        logger.warning("clamped %d raster values into [0, 1]", raster.n_clamped)
    params = _params(args)
    towers = [b for b in dets_scene.graph.boxes if b.kind is not Kind.EN]
    if args.no_postprocess:
        kept = towers
    else:
        missing = [b for b in towers if b.confidence is None]
        if missing:
            raise UsageError("detections need confidences (or pass --no-postprocess)")
        kept = postprocess_detections(towers, params)
    graph = infer_adjacency(kept, raster, params, n_jobs=args.n_jobs)
    out = SceneAnnotation(dets_scene.tile_id, dets_scene.region, dets_scene.raster_shape,
                          raster.scale, graph)
    Path(args.output).write_bytes(write_annotation(out))
    return 0


def _tower_report(items, tau_m) -> ScoreReport:
    labels = {"DmAP": [], "mAP_0.5": [], "mAP_0.75": []}
    n_gt = 0
    n_pred = 0
    for pred, gt in items:
        preds = [] if pred is None else [b for b in pred.graph.boxes if b.kind is not Kind.EN]
        gts = gt.graph.boxes
        lab, n = dmap_labels(preds, gts, tau_m, gt.scale)
        labels["DmAP"] += lab
        labels["mAP_0.5"] += map_iou_labels(preds, gts, 0.5)[0]
        labels["mAP_0.75"] += map_iou_labels(preds, gts, 0.75)[0]
        n_gt += n
        n_pred += len(preds)
    metrics = {k: average_precision(v, n_gt) for k, v in labels.items()}
    return ScoreReport(metrics, counts={"N_pred_towers": n_pred, "N_gt_towers": n_gt})


def cmd_score_towers(args) -> int:
    pred, gt = load_scenes(args.pred), load_scenes(args.gt)
    rows = [(g.region, (p, g)) for _, p, g in paired(pred, gt)]
    emit(_regional(rows, lambda it: _tower_report(it, args.tau_m), args.macro), args)
    return 0


def _graph_report(items, tau_m) -> ScoreReport:
    total = GraphCounts()
    for pred, gt in items:
        pg = GridGraph() if pred is None else pred.graph
        total = total + graph_counts(pg, gt.graph, tau_m, gt.scale)
    r, p, f1 = total.rates()
    return ScoreReport(
        {"R": r, "P": p, "F1": f1},
        counts={"C_T": total.correct_towers, "C_L": total.correct_lines,
                "N_pred": total.n_pred, "N_truth": total.n_truth},
    )


def cmd_score_graph(args) -> int:
    pred, gt = load_scenes(args.pred), load_scenes(args.gt)
    rows = [(g.region, (p, g)) for _, p, g in paired(pred, gt)]
    emit(_regional(rows, lambda it: _graph_report(it, args.tau_m), args.macro), args)
    return 0


def _lines_report(items, threshold, width) -> ScoreReport:
    inter = union = 0
    for raster, gt in items:
        if raster.shape != gt.raster_shape:
            raise UsageError(f"raster shape {raster.shape} != tile {gt.tile_id} shape {gt.raster_shape}")
        i, u = segmentation_counts(raster, gt.graph, threshold, width)
        inter += i
        union += u
    return ScoreReport({"IoU": 1.0 if union == 0 else inter / union},
                       counts={"intersection_px": inter, "union_px": union})


def cmd_score_lines(args) -> int:
    gt = load_scenes(args.gt)
    rasters = {}
    for p in _expand(args.pred, RASTER_SUFFIXES):
        rasters[p.stem] = read_raster(p)
    missing = sorted(set(gt) - set(rasters))
    if missing:
        raise UsageError(f"no prediction raster for tiles: {missing}")
    rows = [(gt[t].region, (rasters[t], gt[t])) for t in sorted(gt)]
    emit(_regional(rows, lambda it: _lines_report(it, args.threshold, args.width_px), args.macro), args)
    return 0


def _agreement_report(items, tau_m) -> ScoreReport:
    tm = td = lm = ld = 0
    for a, b in items:
        bg = GridGraph() if a is None else a.graph
        m, d = tower_agreement_counts(bg, b.graph, tau_m, b.scale)
        tm, td = tm + m, td + d
        m, d = line_agreement_counts(bg, b.graph, tau_m, b.scale)
        lm, ld = lm + m, ld + d
    return ScoreReport(
        {"tower_agreement_pct": 100.0 if td == 0 else 100.0 * tm / td,
         "line_agreement_pct": 100.0 if ld == 0 else 100.0 * lm / ld},
        counts={"towers_matched": tm, "towers_max": td, "lines_matched": lm, "lines_max": ld},
    )


def cmd_agreement(args) -> int:
    a, b = load_scenes(args.a), load_scenes(args.b)
    rows = [(g.region, (p, g)) for _, p, g in paired(a, b)]
    emit(_regional(rows, lambda it: _agreement_report(it, args.tau_m), args.macro), args)
    return 0


def cmd_split(args) -> int:
    scenes = list(load_scenes([args.scenes]).values())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    schemes = SCHEMES if args.scheme == "all" else (args.scheme,)
    for scheme in schemes:
        for m in make_split_manifest(scheme, scenes):
            path = out / f"{m.name}.txt"
            path.write_bytes(write_manifest(m))
            print(path)
    return 0


def cmd_rasterize(args) -> int:
    scene = read_scene(args.gt)
    mask = rasterize_gt_lines(scene.graph, scene.raster_shape, args.width_px, scene.scale)
    write_raster_file(args.output, mask)
    return 0


def cmd_synth(args) -> int:
    params = SynthParams(
        seed=args.seed,
        n_towers=args.n_towers,
        span_length_m=(args.span_min_m, args.span_max_m),
        degree_bias=args.degree_bias,
        raster_shape=(args.rows, args.cols),
        meters_per_pixel=args.meters_per_pixel,
        region=args.region,
        tile_id=args.tile_id,
        raster_noise=RasterNoise(args.flip_prob, args.blur_radius_px, args.dropout_prob),
        detection_noise=DetectionNoise(args.miss_prob, args.false_prob, args.jitter_sigma_m,
                                       args.conf_spread),
    )
    scene, raster, dets = synth_bundle(params)
    out = Path(args.output)
    for sub in ("gt", "dets", "raster"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    det_scene = SceneAnnotation(scene.tile_id, scene.region, scene.raster_shape, scene.scale,
                                GridGraph.from_boxes(dets))
    (out / "gt" / f"{scene.tile_id}{ANN_SUFFIX}").write_bytes(write_annotation(scene))
    (out / "dets" / f"{scene.tile_id}{ANN_SUFFIX}").write_bytes(write_annotation(det_scene))
    (out / "raster" / f"{scene.tile_id}.pgr").write_bytes(save_raster(raster))
    print(scene.tile_id)
    return 0


def cmd_render(args) -> int:
    gt = read_scene(args.gt)
    pred = read_scene(args.pred) if args.pred else None
    background = read_raster(args.background) if args.background else None
    img = render_overlay(gt.raster_shape, gt.graph, pred.graph if pred else None, background,
                         args.line_px)
    Path(args.output).write_bytes(encode_png(img))
    return 0


# --- argument parsing ----------------------------------------------------------------------


def _add_score_flags(p, tau=True):
    if tau:
        p.add_argument("--tau-m", type=float, default=DEFAULT_TAU_M,
                       help="centroid linking distance in meters (default 3)")
    p.add_argument("--macro", action="store_true",
                   help="average per tile within a region instead of pooling counts")
    p.add_argument("--format", choices=("text", "table", "json"), default="text")
    p.add_argument("--report", help="also write the report here (.json -> JSON, else text)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridtracer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = InferParams()
    p = sub.add_parser("infer", help="detections + line raster -> graph file")
    p.add_argument("detections", help="annotation file of detected towers (with confidences)")
    p.add_argument("raster", help="line-probability raster (.pgr or 8-bit .png)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--max-span-m", type=float, default=d.max_span_m)
    p.add_argument("--path-width-px", type=int, default=d.path_width_px)
    p.add_argument("--conf-threshold", type=float, default=d.conf_threshold)
    p.add_argument("--nms-overlap", type=float, default=d.nms_overlap)
    p.add_argument("--no-postprocess", action="store_true",
                   help="skip confidence filtering and NMS")
    p.add_argument("--n-jobs", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    for name, func, help_ in (
        ("score-towers", cmd_score_towers, "DmAP and IoU mAP of predicted towers"),
        ("score-graph", cmd_score_graph, "graph recall / precision / F1"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--pred", nargs="+", required=True, help="prediction files or directories")
        p.add_argument("--gt", nargs="+", required=True, help="ground-truth files or directories")
        _add_score_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("score-lines", help="segmentation IoU of line rasters")
    p.add_argument("--pred", nargs="+", required=True,
                   help="raster files or directories; file stem must equal the tile id")
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--width-px", type=float, default=30)
    _add_score_flags(p, tau=False)
    p.set_defaults(func=cmd_score_lines)

    p = sub.add_parser("agreement", help="tower / line agreement between two annotation sets")
    p.add_argument("--a", nargs="+", required=True)
    p.add_argument("--b", nargs="+", required=True)
    _add_score_flags(p)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("split", help="write train/test manifests")
    p.add_argument("scenes", help="directory of annotation files")
    p.add_argument("--scheme", choices=SCHEMES + ("all",), default="A_conventional")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("rasterize", help="ground-truth annotation -> binary line mask")
    p.add_argument("gt")
    p.add_argument("-o", "--output", required=True, help=".pgr or .png")
    p.add_argument("--width-px", type=float, default=30)
    p.set_defaults(func=cmd_rasterize)

    sp = SynthParams()
    p = sub.add_parser("synth", help="write a synthetic scene, raster and detections")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=sp.seed)
    p.add_argument("--n-towers", type=int, default=sp.n_towers)
    p.add_argument("--span-min-m", type=float, default=sp.span_length_m[0])
    p.add_argument("--span-max-m", type=float, default=sp.span_length_m[1])
    p.add_argument("--degree-bias", type=float, default=sp.degree_bias)
    p.add_argument("--rows", type=int, default=sp.raster_shape[0])
    p.add_argument("--cols", type=int, default=sp.raster_shape[1])
    p.add_argument("--meters-per-pixel", type=float, default=sp.meters_per_pixel)
    p.add_argument("--region", default=sp.region)
    p.add_argument("--tile-id", default=None)
    p.add_argument("--flip-prob", type=float, default=0.0)
    p.add_argument("--blur-radius-px", type=float, default=0.0)
    p.add_argument("--dropout-prob", type=float, default=0.0)
    p.add_argument("--miss-prob", type=float, default=0.0)
    p.add_argument("--false-prob", type=float, default=0.0)
    p.add_argument("--jitter-sigma-m", type=float, default=0.0)
    p.add_argument("--conf-spread", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="PNG overlay: ground truth green, prediction blue")
    p.add_argument("gt")
    p.add_argument("pred", nargs="?")
    p.add_argument("--background", help="raster drawn in grayscale underneath")
    p.add_argument("--line-px", type=int, default=3)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AnnotationError, RasterFormatError, UsageError, ValueError) as exc:
        print(f"gridtracer: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gridtracer: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
