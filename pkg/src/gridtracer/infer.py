"""Detection post-processing and straight-path graph inference."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GridGraph, PixelPoint, TowerBox, box_iou, centroid, centroids_array
from .raster import ProbRaster, band_pixel_indices

logger = logging.getLogger(__name__)

DetectionSet = Sequence[TowerBox]


@dataclass(frozen=True)
class InferParams:
    """Gates for graph inference and detection clean-up.

    ``max_span_m`` is in meters and converted to pixels through the raster's
    scale (600 m = 2000 px at 0.3 m/px).
    """

    gamma: float = 0.2
    max_span_m: float = 600.0
    path_width_px: int = 9
    conf_threshold: float = 0.5
    nms_overlap: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.max_span_m > 0:
            raise ValueError(f"max_span_m must be positive, got {self.max_span_m}")
        w = self.path_width_px
        if int(w) != w or w < 1 or int(w) % 2 == 0:
            raise ValueError(f"path_width_px must be an odd integer >= 1, got {w}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError(f"conf_threshold must lie in [0, 1], got {self.conf_threshold}")
        if not 0.0 <= self.nms_overlap <= 1.0:
            raise ValueError(f"nms_overlap must lie in [0, 1], got {self.nms_overlap}")
        object.__setattr__(self, "path_width_px", int(w))


def _conf(box: TowerBox) -> float:
    if box.confidence is None:
        raise ValueError("detections must carry a confidence")
    return box.confidence


def filter_by_confidence(dets: DetectionSet, threshold: float = 0.5) -> list[TowerBox]:
    """Keep detections whose confidence is strictly above ``threshold``."""
    return [d for d in dets if _conf(d) > threshold]


def nms(dets: DetectionSet, overlap_threshold: float = 0.5) -> list[TowerBox]:
    """Greedy non-maximum suppression.

    Boxes are visited by descending confidence, ties broken by lexicographic
    ``(r, c, h, w)``; a box is dropped when its IoU with an already kept box
    exceeds ``overlap_threshold``. Survivors keep their input order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-_conf(dets[i]), dets[i].rchw, i))
    kept: list[int] = []
    for i in order:
        if all(box_iou(dets[i], dets[k]) <= overlap_threshold for k in kept):
            kept.append(i)
    return [dets[i] for i in sorted(kept)]


def postprocess_detections(dets: DetectionSet, params: InferParams = InferParams()) -> list[TowerBox]:
    return nms(filter_by_confidence(dets, params.conf_threshold), params.nms_overlap)


def _band_mean(C: ProbRaster, p: PixelPoint, q: PixelPoint, width_px: int) -> float | None:
    rr, cc = band_pixel_indices(p, q, width_px, C.shape)
    if rr.size == 0:
        return None
    return float(C.values[rr, cc].sum(dtype=np.float64) / rr.size)


def path_score(C: ProbRaster, p: PixelPoint, q: PixelPoint, width_px: int = 9) -> float:
    """Mean of ``C`` over the width-``width_px`` band between ``p`` and ``q``.

    A band lying completely off the raster scores 0.
    """
    m = _band_mean(C, p, q, width_px)
    if m is None:
        logger.warning("path %s -> %s lies outside the raster; scoring 0", tuple(p), tuple(q))
        return 0.0
    return m


def candidate_pairs(towers: Sequence[TowerBox], max_span_px: float) -> list[tuple[int, int]]:
    """Index pairs ``i < j`` whose centroid distance is strictly below ``max_span_px``."""
    n = len(towers)
    if n < 2:
        return []
    cen = centroids_array(towers)
    out = []
    for i in range(n - 1):
        d = np.hypot(*(cen[i + 1:] - cen[i]).T)
        out.extend((i, i + 1 + int(k)) for k in np.flatnonzero(d < max_span_px))
    return out


def score_pairs(
    towers: Sequence[TowerBox],
    C: ProbRaster,
    pairs: Sequence[tuple[int, int]],
    width_px: int,
    n_jobs: int | None = None,
) -> np.ndarray:
    """Path scores for each pair, NaN where the band misses the raster; identical for any ``n_jobs``."""
    cents = [centroid(t) for t in towers]

    def one(pair):
        i, j = pair
        m = _band_mean(C, cents[i], cents[j], width_px)
        return math.nan if m is None else m

    if n_jobs is not None and n_jobs != 1 and len(pairs) > 1:
        workers = None if n_jobs < 0 else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, pairs))
    else:
        scores = [one(p) for p in pairs]
    return np.asarray(scores, dtype=np.float64)


def _connects(score: float, gamma: float) -> bool:
    # no evidence, no edge: off-raster paths never connect, even at gamma = 0
    return not math.isnan(score) and score >= gamma


def infer_adjacency(
    towers: Sequence[TowerBox],
    C: ProbRaster,
    params: InferParams = InferParams(),
    n_jobs: int | None = None,
) -> GridGraph:
    """Connect two towers iff they are closer than ``max_span_m`` and their path score is >= ``gamma``.

    Nodes are the input towers, in order, with ids ``"0" .. "n-1"``.
    """
    max_span_px = C.scale.to_pixels(params.max_span_m)
    pairs = candidate_pairs(towers, max_span_px)
    scores = score_pairs(towers, C, pairs, params.path_width_px, n_jobs)
    n_off = int(np.isnan(scores).sum())
    if n_off:
        logger.warning("%d candidate paths lie outside the raster and were not connected", n_off)
    edges = [pair for pair, s in zip(pairs, scores) if _connects(s, params.gamma)]
    return GridGraph.from_boxes(towers, edges)


def infer_adjacency_dense(towers: Sequence[TowerBox], C: ProbRaster, params: InferParams = InferParams()):
    """Reference variant that scores every pair before applying the distance gate."""
    max_span_px = C.scale.to_pixels(params.max_span_m)
    cents = [centroid(t) for t in towers]
    edges = []
    for i in range(len(towers)):
        for j in range(i + 1, len(towers)):
            m = _band_mean(C, cents[i], cents[j], params.path_width_px)
            s = math.nan if m is None else m
            d = math.hypot(cents[i].row - cents[j].row, cents[i].col - cents[j].col)
            if d < max_span_px and _connects(s, params.gamma):
                edges.append((i, j))
    return GridGraph.from_boxes(towers, edges)
