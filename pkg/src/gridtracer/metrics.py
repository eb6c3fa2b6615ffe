"""Detection, graph, segmentation and annotator-agreement scoring.

Predictions link to ground truth one-to-one. Detections are processed by
descending confidence and take the nearest free ground-truth tower within
``tau_m`` meters (or the highest-IoU box above ``tau_iou``). Edge nodes never
take part in scoring; "OT" towers are excluded as described per function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import GeoScale, GridGraph, Kind, TowerBox, box_iou, centroids_array
from .raster import (
    GT_LINE_WIDTH_PX,
    ProbRaster,
    binarize,
    mask_overlap_counts,
    rasterize_gt_lines,
)

DEFAULT_TAU_M = 3.0
AP_IOU_THRESHOLDS = (0.5, 0.75)


@dataclass(frozen=True)
class MatchResult:
    """One-to-one links; ids are indices into the caller's pred / gt sequences."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]
    order: tuple[int, ...] = ()

    @property
    def n_tp(self) -> int:
        return len(self.pairs)

    def pred_to_gt(self) -> dict[int, int]:
        return {p: g for p, g, _ in self.pairs}

    def ranked_labels(self, preds: Sequence[TowerBox]) -> list[tuple[float, bool]]:
        """``(confidence, is_tp)`` in processing order, ready for :func:`average_precision`."""
        hit = self.pred_to_gt()
        return [(_confidence(preds[i]), i in hit) for i in self.order]


def _confidence(box: TowerBox) -> float:
    # human annotations used as predictions carry no score
    return 1.0 if box.confidence is None else box.confidence


def _pred_order(preds: Sequence[TowerBox]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-_confidence(preds[i]), preds[i].rchw, i))


def _greedy_link(
    preds: Sequence[TowerBox],
    gts: Sequence[TowerBox],
    gt_kinds: Iterable[Kind],
    affinity: Callable[[int, np.ndarray], np.ndarray],
    accept: Callable[[np.ndarray], np.ndarray],
    best_is_max: bool,
) -> MatchResult:
    kinds = {Kind(k) for k in gt_kinds}
    eligible = np.array([g.kind in kinds for g in gts], dtype=bool)
    free = eligible.copy()
    order = _pred_order(preds)
    pairs = []
    matched_pred = set()
    for i in order:
        if not free.any():
            continue
        vals = affinity(i, free)
        ok = free & accept(vals)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        pick = cand[np.argmax(vals[cand])] if best_is_max else cand[np.argmin(vals[cand])]
        free[pick] = False
        pairs.append((i, int(pick), float(vals[pick])))
        matched_pred.add(i)
    unmatched_pred = tuple(i for i in range(len(preds)) if i not in matched_pred)
    unmatched_gt = tuple(int(j) for j in np.flatnonzero(eligible & free))
    return MatchResult(tuple(pairs), unmatched_pred, unmatched_gt, tuple(order))


def link_by_distance(
    preds: Sequence[TowerBox],
    gts: Sequence[TowerBox],
    tau_m: float = DEFAULT_TAU_M,
    scale: GeoScale = GeoScale(),
    gt_kinds: Iterable[Kind] = (Kind.T,),
) -> MatchResult:
    """Greedy centroid-distance linking (distance <= ``tau_m``).

    Only ground-truth nodes whose kind is in ``gt_kinds`` can be matched.
    """
    pc = centroids_array(preds)
    gc = centroids_array(gts)
    mpp = scale.meters_per_pixel

    def affinity(i, _free):
        return np.hypot(*(gc - pc[i]).T) * mpp

    return _greedy_link(preds, gts, gt_kinds, affinity, lambda d: d <= tau_m, best_is_max=False)


def link_by_iou(
    preds: Sequence[TowerBox],
    gts: Sequence[TowerBox],
    tau_iou: float = 0.5,
    gt_kinds: Iterable[Kind] = (Kind.T,),
) -> MatchResult:
    """Greedy IoU linking (IoU strictly above ``tau_iou``)."""

    def affinity(i, free):
        out = np.zeros(len(gts))
        for j in np.flatnonzero(free):
            out[j] = box_iou(preds[i], gts[j])
        return out

    return _greedy_link(preds, gts, gt_kinds, affinity, lambda v: v > tau_iou, best_is_max=True)


def average_precision(labels: Sequence[tuple[float, bool]], n_gt: int) -> float:
    """All-points AP: area under the monotone precision envelope.

    ``labels`` are ``(confidence, is_tp)``; they are ranked by descending
    confidence (stable for ties). With ``n_gt == 0`` the result is 1.0 for an
    empty prediction list and 0.0 otherwise.
    """
    if n_gt < 0:
        raise ValueError("n_gt must be non-negative")
    if n_gt == 0:
        return 1.0 if len(labels) == 0 else 0.0
    if len(labels) == 0:
        return 0.0
    conf = np.array([c for c, _ in labels], dtype=float)
    tp = np.array([bool(t) for _, t in labels], dtype=float)
    idx = np.argsort(-conf, kind="stable")
    tp = tp[idx]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _n_eligible(gts: Sequence[TowerBox], kinds=(Kind.T,)) -> int:
    return sum(1 for g in gts if g.kind in kinds)


def dmap_labels(preds, gts, tau_m=DEFAULT_TAU_M, scale=GeoScale()):
    m = link_by_distance(preds, gts, tau_m, scale)
    return m.ranked_labels(preds), _n_eligible(gts)


def dmap(
    preds: Sequence[TowerBox],
    gts: Sequence[TowerBox],
    tau_m: float = DEFAULT_TAU_M,
    scale: GeoScale = GeoScale(),
) -> float:
    """Distance-linked average precision over "T" ground-truth towers."""
    labels, n_gt = dmap_labels(preds, gts, tau_m, scale)
    return average_precision(labels, n_gt)


def map_iou_labels(preds, gts, tau_iou=0.5):
    m = link_by_iou(preds, gts, tau_iou)
    return m.ranked_labels(preds), _n_eligible(gts)


def map_iou(preds: Sequence[TowerBox], gts: Sequence[TowerBox], tau_iou: float = 0.5) -> float:
    labels, n_gt = map_iou_labels(preds, gts, tau_iou)
    return average_precision(labels, n_gt)


# --- graph scoring --------------------------------------------------------------


@dataclass(frozen=True)
class GraphCounts:
    correct_towers: int = 0
    correct_lines: int = 0
    n_pred: int = 0
    n_truth: int = 0

    def __add__(self, other: GraphCounts) -> GraphCounts:
        return GraphCounts(
            self.correct_towers + other.correct_towers,
            self.correct_lines + other.correct_lines,
            self.n_pred + other.n_pred,
            self.n_truth + other.n_truth,
        )

    def rates(self) -> tuple[float, float, float]:
        """``(R, P, F1)``; a zero denominator gives 0 for that rate."""
        correct = self.correct_towers + self.correct_lines
        r = correct / self.n_truth if self.n_truth else 0.0
        p = correct / self.n_pred if self.n_pred else 0.0
        f1 = 2 * r * p / (r + p) if r + p > 0 else 0.0
        return r, p, f1


@dataclass(frozen=True)
class GraphScore:
    recall: float
    precision: float
    f1: float
    counts: GraphCounts

    def __iter__(self):
        yield self.recall
        yield self.precision
        yield self.f1


def graph_counts(
    pred: GridGraph, gt: GridGraph, tau_m: float = DEFAULT_TAU_M, scale: GeoScale = GeoScale()
) -> GraphCounts:
    gt_ids = [i for i, b in gt.nodes if b.kind in (Kind.T, Kind.OT)]
    gt_boxes = [gt.box(i) for i in gt_ids]
    gt_t = {i for i in gt_ids if gt.box(i).kind is Kind.T}
    pred_ids = [i for i, b in pred.nodes if b.kind is not Kind.EN]
    pred_boxes = [pred.box(i) for i in pred_ids]

    m = link_by_distance(pred_boxes, gt_boxes, tau_m, scale, gt_kinds=(Kind.T, Kind.OT))
    link = {pred_ids[p]: gt_ids[g] for p, g, _ in m.pairs}
    # towers linked to an OT node are neither credited nor penalised
    ignored = {p for p, g in link.items() if g not in gt_t}
    kept = [i for i in pred_ids if i not in ignored]
    kept_set = set(kept)
    pred_edges = [e for e in pred.edges if e[0] in kept_set and e[1] in kept_set]

    correct_towers = sum(1 for i in kept if i in link)
    credited = set()
    for a, b in pred_edges:
        ga, gb = link.get(a), link.get(b)
        if ga is None or gb is None or not gt.has_edge(ga, gb):
            continue
        key = (min(ga, gb), max(ga, gb))
        credited.add(key)
    gt_edges = sum(1 for a, b in gt.edges if a in gt_t and b in gt_t)
    return GraphCounts(
        correct_towers=correct_towers,
        correct_lines=len(credited),
        n_pred=len(kept) + len(pred_edges),
        n_truth=len(gt_t) + gt_edges,
    )


def graph_prf(
    pred: GridGraph, gt: GridGraph, tau_m: float = DEFAULT_TAU_M, scale: GeoScale = GeoScale()
) -> GraphScore:
    """Joint tower + line recall, precision and F1."""
    counts = graph_counts(pred, gt, tau_m, scale)
    return GraphScore(*counts.rates(), counts)


# --- annotator agreement --------------------------------------------------------


@dataclass(frozen=True)
class AgreementResult:
    percent: float
    pairs: tuple[tuple[str, str, float], ...]
    hist_counts: np.ndarray = field(compare=False)
    hist_edges: np.ndarray = field(compare=False)

    @property
    def distances(self) -> np.ndarray:
        return np.array([d for _, _, d in self.pairs])


def _mutual_pairs(a: GridGraph, b: GridGraph, tau_m: float, scale: GeoScale):
    ia = [i for i, x in a.nodes if x.kind is not Kind.EN]
    ib = [i for i, x in b.nodes if x.kind is not Kind.EN]
    if not ia or not ib:
        return ia, ib, []
    ca = centroids_array([a.box(i) for i in ia])
    cb = centroids_array([b.box(i) for i in ib])
    d = np.hypot(ca[:, None, 0] - cb[None, :, 0], ca[:, None, 1] - cb[None, :, 1])
    d *= scale.meters_per_pixel
    cand = [(d[x, y], x, y) for x, y in zip(*np.nonzero(d <= tau_m))]
    cand.sort()
    used_a, used_b, pairs = set(), set(), []
    for dist, x, y in cand:
        if x in used_a or y in used_b:
            continue
        used_a.add(x)
        used_b.add(y)
        pairs.append((ia[x], ib[y], float(dist)))
    return ia, ib, pairs


def tower_agreement(
    a: GridGraph,
    b: GridGraph,
    tau_m: float = DEFAULT_TAU_M,
    scale: GeoScale = GeoScale(),
    bin_width_m: float = 0.25,
) -> AgreementResult:
    """Share of towers two annotations agree on, with matched-distance histogram.

    Pairs are taken in ascending distance order, so the result does not
    depend on which annotation is passed first. The percentage is over the
    larger tower count (100 when both are empty).
    """
    ia, ib, pairs = _mutual_pairs(a, b, tau_m, scale)
    denom = max(len(ia), len(ib))
    pct = 100.0 if denom == 0 else 100.0 * len(pairs) / denom
    edges = np.arange(0.0, tau_m + bin_width_m, bin_width_m)
    counts, edges = np.histogram([p[2] for p in pairs], bins=edges)
    return AgreementResult(pct, tuple(pairs), counts, edges)


def tower_agreement_counts(a, b, tau_m=DEFAULT_TAU_M, scale=GeoScale()) -> tuple[int, int]:
    """``(matched, max(|a|, |b|))`` towers."""
    ia, ib, pairs = _mutual_pairs(a, b, tau_m, scale)
    return len(pairs), max(len(ia), len(ib))


def line_agreement(
    a: GridGraph, b: GridGraph, tau_m: float = DEFAULT_TAU_M, scale: GeoScale = GeoScale()
) -> float:
    """Percent of lines whose two endpoints both match adjacent towers in the other annotation."""
    hits, denom = line_agreement_counts(a, b, tau_m, scale)
    return 100.0 if denom == 0 else 100.0 * hits / denom


def line_agreement_counts(a, b, tau_m=DEFAULT_TAU_M, scale=GeoScale()) -> tuple[int, int]:
    """``(matched lines, max(|Ea|, |Eb|))``."""
    _, _, pairs = _mutual_pairs(a, b, tau_m, scale)
    m = {x: y for x, y, _ in pairs}
    real_a = {i for i, x in a.nodes if x.kind is not Kind.EN}
    real_b = {i for i, x in b.nodes if x.kind is not Kind.EN}
    ea = [e for e in a.edges if e[0] in real_a and e[1] in real_a]
    eb = [e for e in b.edges if e[0] in real_b and e[1] in real_b]
    hits = sum(1 for u, v in ea if u in m and v in m and b.has_edge(m[u], m[v]))
    return hits, max(len(ea), len(eb))


# --- segmentation ---------------------------------------------------------------


def segmentation_counts(pred: ProbRaster, gt_graph: GridGraph, threshold: float = 0.5,
                        width_px: float = GT_LINE_WIDTH_PX) -> tuple[int, int]:
    gt = rasterize_gt_lines(gt_graph, pred.shape, width_px)
    return mask_overlap_counts(binarize(pred, threshold), gt)


def score_segmentation(pred: ProbRaster, gt_graph: GridGraph, threshold: float = 0.5,
                       width_px: float = GT_LINE_WIDTH_PX) -> float:
    """IoU between the thresholded prediction and the rasterised ground-truth lines."""
    inter, union = segmentation_counts(pred, gt_graph, threshold, width_px)
    return 1.0 if union == 0 else inter / union


# --- reports --------------------------------------------------------------------


@dataclass
class ScoreReport:
    """Named metric values, optional per-region breakdown and raw counts.

    When regions are present the top-level metrics are their unweighted mean.
    """

    metrics: dict[str, float] = field(default_factory=dict)
    regions: dict[str, ScoreReport] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def averaged(cls, regions: dict[str, ScoreReport]) -> ScoreReport:
        names = sorted({k for r in regions.values() for k in r.metrics})
        avg = {
            k: float(np.mean([r.metrics[k] for r in regions.values() if k in r.metrics]))
            for k in names
        }
        counts: dict[str, int] = {}
        for r in regions.values():
            for k, v in r.counts.items():
                counts[k] = counts.get(k, 0) + v
        return cls(avg, dict(sorted(regions.items())), counts)

    def to_text(self) -> str:
        lines = [f"{k} {_num(v)}" for k, v in sorted(self.metrics.items())]
        lines += [f"{k} {v}" for k, v in sorted(self.counts.items())]
        for name, sub in sorted(self.regions.items()):
            lines += [f"{name}.{k} {_num(v)}" for k, v in sorted(sub.metrics.items())]
            lines += [f"{name}.{k} {v}" for k, v in sorted(sub.counts.items())]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Metrics as rows; regions then ``Average`` as columns."""
        cols = sorted(self.regions) + ["Average"]
        width = max(10, *(len(c) for c in cols))
        names = sorted(self.metrics)
        key_w = max([6] + [len(n) for n in names])
        out = ["metric".ljust(key_w) + "".join(c.rjust(width + 1) for c in cols)]
        for n in names:
            vals = [self.regions[c].metrics.get(n, float("nan")) for c in cols[:-1]]
            vals.append(self.metrics[n])
            out.append(n.ljust(key_w) + "".join(_num(v).rjust(width + 1) for v in vals))
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
            "counts": {k: self.counts[k] for k in sorted(self.counts)},
            "regions": {k: self.regions[k].to_dict() for k in sorted(self.regions)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"
