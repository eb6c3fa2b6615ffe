"""Seeded synthetic scenes, raster / detection corruption, and a matching oracle.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` so a seed
reproduces the same scene on every platform.

Generated scenes are "clean": no two unconnected towers within
``clean_span_m`` have a straight path that runs along drawn lines for more
than ``max_spurious_cover`` of its length. On such scenes a thresholded path
score separates true from false connections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .annio import SceneAnnotation
from .core import GeoScale, GridGraph, Kind, PixelPoint, TowerBox, centroid, centroids_array
from .raster import GT_LINE_WIDTH_PX, ProbRaster, rasterize_gt_lines


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class RasterNoise:
    flip_prob: float = 0.0
    blur_radius_px: float = 0.0
    dropout_prob: float = 0.0
    dropout_cell_px: int = 64

    def __post_init__(self):
        _check_prob(flip_prob=self.flip_prob, dropout_prob=self.dropout_prob)
        if self.blur_radius_px < 0 or self.dropout_cell_px < 1:
            raise ValueError("blur radius must be >= 0 and dropout cell >= 1 px")


@dataclass(frozen=True)
class DetectionNoise:
    """``conf_spread`` widens confidences away from 1.0: true boxes draw from
    ``1 - spread * Beta(2, 5)``, false boxes from ``1 - spread * Beta(5, 2)``."""

    miss_prob: float = 0.0
    false_prob: float = 0.0
    jitter_sigma_m: float = 0.0
    conf_spread: float = 0.0
    false_cell_px: int = 256

    def __post_init__(self):
        _check_prob(miss_prob=self.miss_prob, false_prob=self.false_prob, conf_spread=self.conf_spread)
        if self.jitter_sigma_m < 0 or self.false_cell_px < 1:
            raise ValueError("jitter must be >= 0 and false_cell_px >= 1")


def _check_prob(**kw):
    for k, v in kw.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{k} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    n_towers: int = 8
    span_length_m: tuple[float, float] = (75.0, 180.0)
    degree_bias: float = 0.9
    tower_size_px: tuple[int, int] = (8, 24)
    raster_shape: tuple[int, int] = (2000, 2000)
    meters_per_pixel: float = 0.3
    region: str = "Other"
    tile_id: str | None = None
    min_separation_m: float = 20.0
    max_degree: int = 4
    clean_span_m: float = 1000.0
    max_spurious_cover: float = 0.17
    raster_noise: RasterNoise = field(default_factory=RasterNoise)
    detection_noise: DetectionNoise = field(default_factory=DetectionNoise)

    def __post_init__(self):
        lo, hi = self.span_length_m
        if not 0 < lo <= hi:
            raise ValueError(f"span_length_m must be a non-empty positive range, got {self.span_length_m}")
        slo, shi = self.tower_size_px
        if not 1 <= slo <= shi:
            raise ValueError(f"tower_size_px must be a non-empty range >= 1, got {self.tower_size_px}")
        if self.n_towers < 0:
            raise ValueError("n_towers must be >= 0")
        _check_prob(degree_bias=self.degree_bias, max_spurious_cover=self.max_spurious_cover)
        GeoScale(self.meters_per_pixel)

    @property
    def scale(self) -> GeoScale:
        return GeoScale(self.meters_per_pixel)


_LINE_HALF_PX = GT_LINE_WIDTH_PX / 2.0
_PATH_HALF_PX = 4.5
_SAMPLE_STEP_PX = 2.0
_ACROSS = np.linspace(-_PATH_HALF_PX, _PATH_HALF_PX, 5)


def _band_samples(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Grid of points covering the 9 px path band between ``a`` and ``b`` (flat caps)."""
    d = b - a
    L = float(np.hypot(*d))
    u = d / L
    n = np.array([-u[1], u[0]])
    along = np.linspace(-_PATH_HALF_PX, L + _PATH_HALF_PX,
                        max(8, int(math.ceil((L + 2 * _PATH_HALF_PX) / _SAMPLE_STEP_PX))))
    pts = a + along[:, None, None] * u + _ACROSS[None, :, None] * n
    return pts.reshape(-1, 2)


def _in_line_band(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Membership in the 30 px line rectangle drawn between ``a`` and ``b``."""
    d = b - a
    L = float(np.hypot(*d))
    rel = pts - a
    if L == 0.0:
        return np.hypot(*rel.T) <= _LINE_HALF_PX
    u = d / L
    along = rel @ u
    across = rel @ np.array([-u[1], u[0]])
    return (np.abs(across) <= _LINE_HALF_PX) & (along >= -_LINE_HALF_PX) & (along <= L + _LINE_HALF_PX)


def _line_bbox(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    pad = _LINE_HALF_PX * math.sqrt(2)
    return np.array([min(a[0], b[0]) - pad, min(a[1], b[1]) - pad,
                     max(a[0], b[0]) + pad, max(a[1], b[1]) + pad])


def _bbox_overlap(p: np.ndarray, q: np.ndarray) -> bool:
    return p[0] <= q[2] and q[0] <= p[2] and p[1] <= q[3] and q[1] <= p[3]


class _CleanTracker:
    """Tracks, for each unconnected tower pair, which parts of its path band lie on drawn lines."""

    def __init__(self, span_px: float, limit: float):
        self.span_px = span_px
        self.limit = limit
        self.pts: list[np.ndarray] = []
        self.edges: list[tuple[int, int]] = []
        self.edge_boxes: list[np.ndarray] = []
        self.cover: dict[tuple[int, int], np.ndarray] = {}
        self.samples: dict[tuple[int, int], np.ndarray] = {}
        self.sample_boxes: dict[tuple[int, int], np.ndarray] = {}

    def trial(self, x: np.ndarray, parent: int):
        """State update for adding tower ``x`` linked to ``parent``, or None if it spoils the scene."""
        new_id = len(self.pts)
        a = self.pts[parent]
        new_box = _line_bbox(a, x)
        segs = [(self.pts[i], self.pts[j], bb) for (i, j), bb in zip(self.edges, self.edge_boxes)]
        segs.append((a, x, new_box))
        # pairs through the parent's neighbours fail most often; test them first
        near = sorted(range(new_id), key=lambda k: float(np.hypot(*(self.pts[k] - x))))
        new_pairs = {}
        for k in near:
            p = self.pts[k]
            if k == parent or np.hypot(*(p - x)) >= self.span_px:
                continue
            smp = _band_samples(p, x)
            sbox = np.array([*smp.min(axis=0), *smp.max(axis=0)])
            cov = np.zeros(len(smp), dtype=bool)
            for s0, s1, bb in segs:
                if _bbox_overlap(sbox, bb):
                    cov |= _in_line_band(smp, s0, s1)
            if cov.mean() > self.limit:
                return None
            new_pairs[(k, new_id)] = (smp, cov, sbox)
        updates = {}
        # existing unconnected pairs gain coverage from the new line
        for key, cov in self.cover.items():
            if not _bbox_overlap(self.sample_boxes[key], new_box):
                continue
            fresh = _in_line_band(self.samples[key], a, x)
            if not fresh.any():
                continue
            merged = cov | fresh
            if merged.mean() > self.limit:
                return None
            updates[key] = merged
        return updates, new_pairs

    def commit(self, x: np.ndarray, parent: int | None, state) -> None:
        new_id = len(self.pts)
        self.pts.append(x)
        if parent is None:
            return
        self.edges.append((parent, new_id))
        self.edge_boxes.append(_line_bbox(self.pts[parent], x))
        updates, new_pairs = state
        self.cover.update(updates)
        for key, (smp, cov, sbox) in new_pairs.items():
            self.samples[key] = smp
            self.cover[key] = cov
            self.sample_boxes[key] = sbox


def _make_box(rng: np.random.Generator, c: np.ndarray, size_range) -> TowerBox:
    h, w = rng.integers(size_range[0], size_range[1] + 1, size=2)
    r0 = float(np.floor(c[0] - h / 2.0))
    c0 = float(np.floor(c[1] - w / 2.0))
    return TowerBox.from_rchw(r0, c0, int(h), int(w))


_TURN_RANGE = (math.radians(35.0), math.radians(110.0))
_RESTARTS = 25
_TRIALS_PER_TOWER = 120


def _grow(params: SynthParams, rng: np.random.Generator):
    rows, cols = params.raster_shape
    scale = params.scale
    lo_px, hi_px = (scale.to_pixels(v) for v in params.span_length_m)
    sep_px = scale.to_pixels(params.min_separation_m)
    margin = params.tower_size_px[1] + 1.0
    tracker = _CleanTracker(scale.to_pixels(params.clean_span_m), params.max_spurious_cover)
    boxes: list[TowerBox] = []
    centres: list[np.ndarray] = []
    nbrs: list[list[int]] = []

    def inside(c):
        return margin <= c[0] <= rows - margin and margin <= c[1] <= cols - margin

    def separated(c):
        return all(np.hypot(*(p - c)) >= sep_px for p in centres)

    def heading(parent):
        # chain tips keep turning by a bounded angle; branches pick any direction
        if len(nbrs[parent]) == 1:
            d = centres[parent] - centres[nbrs[parent][0]]
            base = math.atan2(d[0], d[1])
            turn = rng.uniform(*_TURN_RANGE) * (1 if rng.random() < 0.5 else -1)
            return base + turn
        return rng.uniform(0.0, 2.0 * math.pi)

    for _ in range(params.n_towers):
        placed = None
        if not boxes:
            lo = np.array([rows, cols]) * 0.25
            box = _make_box(rng, rng.uniform(lo, 3 * lo), params.tower_size_px)
            c = np.array(tuple(centroid(box)))
            if inside(c):
                tracker.commit(c, None, None)
                placed = (box, c, None)
        else:
            tips = [k for k, nb in enumerate(nbrs) if len(nb) <= 1]
            inner = [k for k, nb in enumerate(nbrs) if 1 < len(nb) < params.max_degree]
            first, second = (tips, inner) if rng.random() < params.degree_bias else (inner, tips)
            cands = [int(k) for k in rng.permutation(first)] + [int(k) for k in rng.permutation(second)]
            budget = _TRIALS_PER_TOWER
            for parent in cands:
                if budget <= 0:
                    break
                for _attempt in range(12):
                    budget -= 1
                    ang = heading(parent)
                    span = rng.uniform(lo_px, hi_px)
                    target = centres[parent] + span * np.array([math.sin(ang), math.cos(ang)])
                    box = _make_box(rng, target, params.tower_size_px)
                    c = np.array(tuple(centroid(box)))
                    d = float(np.hypot(*(c - centres[parent])))
                    if not (lo_px <= d <= hi_px and inside(c) and separated(c)):
                        continue
                    state = tracker.trial(c, parent)
                    if state is not None:
                        tracker.commit(c, parent, state)
                        placed = (box, c, parent)
                        break
                if placed:
                    break
        if placed is None:
            return None
        box, c, parent = placed
        boxes.append(box)
        centres.append(c)
        nbrs.append([] if parent is None else [parent])
        if parent is not None:
            nbrs[parent].append(len(boxes) - 1)
    return boxes, tracker.edges


def gen_scene(params: SynthParams = SynthParams()) -> SceneAnnotation:
    """Random tower tree: mostly chains, occasional branches, spans within ``span_length_m``.

    Growth restarts (drawing from the same seeded stream) when it paints
    itself into a corner; ``ValueError`` after repeated failure.
    """
    rng = make_rng(params.seed)
    for _ in range(_RESTARTS):
        grown = _grow(params, rng)
        if grown is not None:
            break
    else:
        rows, cols = params.raster_shape
        raise ValueError(f"cannot place {params.n_towers} clean towers in a {rows}x{cols} tile")
    boxes, edges = grown
    graph = GridGraph.from_boxes(boxes, edges)
    tile_id = params.tile_id or f"synth{params.seed:06d}"
    return SceneAnnotation(tile_id, params.region, params.raster_shape, params.scale, graph)


def render_clean_raster(scene: SceneAnnotation, width_px: float = GT_LINE_WIDTH_PX) -> ProbRaster:
    mask = rasterize_gt_lines(scene.graph, scene.raster_shape, width_px, scene.scale)
    return ProbRaster(mask.values, scene.scale)


def corrupt_raster(raster: ProbRaster, noise: RasterNoise, seed: int) -> ProbRaster:
    """Drop line content in whole cells, flip background pixels, then blur."""
    rng = make_rng(seed)
    vals = raster.values.astype(np.float64)
    rows, cols = vals.shape
    if noise.dropout_prob > 0:
        cell = noise.dropout_cell_px
        gr, gc = -(-rows // cell), -(-cols // cell)
        drop = rng.random((gr, gc)) < noise.dropout_prob
        full = np.repeat(np.repeat(drop, cell, axis=0), cell, axis=1)[:rows, :cols]
        vals = np.where(full, 0.0, vals)
    if noise.flip_prob > 0:
        flip = rng.random(vals.shape) < noise.flip_prob
        vals = np.where(flip, 1.0 - vals, vals)
    if noise.blur_radius_px > 0:
        vals = ndimage.gaussian_filter(vals, sigma=noise.blur_radius_px, mode="constant")
    return ProbRaster(np.clip(vals, 0.0, 1.0), raster.scale)


def corrupt_detections(
    gt_towers, noise: DetectionNoise, seed: int, raster_shape, scale: GeoScale = GeoScale(),
    size_range=(8, 24),
) -> list[TowerBox]:
    """Detector-like output from ground truth: misses, false alarms, jitter, confidences.

    Only "T" towers produce true detections. False boxes are added with
    probability ``false_prob`` per ``false_cell_px`` grid cell.
    """
    rng = make_rng(seed)
    rows, cols = raster_shape
    spread = noise.conf_spread
    sigma_px = scale.to_pixels(noise.jitter_sigma_m)
    out = []
    for box in gt_towers:
        if box.kind is not Kind.T:
            continue
        miss = rng.random() < noise.miss_prob
        jitter = rng.normal(0.0, 1.0, size=2) * sigma_px
        u = rng.beta(2.0, 5.0)
        if miss:
            continue
        c = centroid(box)
        cr = float(np.clip(c.row + jitter[0], 0.0, rows))
        cc = float(np.clip(c.col + jitter[1], 0.0, cols))
        conf = float(1.0 - spread * u)
        out.append(TowerBox.from_rchw(cr - box.height_px / 2, cc - box.width_px / 2,
                                      box.height_px, box.width_px, confidence=conf))
    if noise.false_prob > 0:
        cell = noise.false_cell_px
        for r0 in range(0, rows, cell):
            for c0 in range(0, cols, cell):
                hit = rng.random() < noise.false_prob
                pos = rng.uniform((r0, c0), (min(r0 + cell, rows), min(c0 + cell, cols)))
                h, w = rng.integers(size_range[0], size_range[1] + 1, size=2)
                u = rng.beta(5.0, 2.0)
                if hit:
                    out.append(TowerBox.from_rchw(pos[0] - h / 2, pos[1] - w / 2, int(h), int(w),
                                                  confidence=float(1.0 - spread * u)))
    return out


def synth_bundle(params: SynthParams):
    """``(scene, raster, detections)`` from one parameter set."""
    scene = gen_scene(params)
    clean = render_clean_raster(scene)
    raster = corrupt_raster(clean, params.raster_noise, params.seed + 1)
    dets = corrupt_detections(
        scene.graph.boxes, params.detection_noise, params.seed + 2,
        scene.raster_shape, scene.scale, params.tower_size_px,
    )
    return scene, raster, dets


def brute_force_match(preds, gts, tau_m: float = 3.0, scale: GeoScale = GeoScale(),
                      gt_kinds=(Kind.T,)) -> list[tuple[int, int]]:
    """Maximum-cardinality one-to-one matching within ``tau_m`` by exhaustive search.

    Intended for test oracles; limited to 10 objects per side.
    """
    gidx = [j for j, g in enumerate(gts) if g.kind in set(gt_kinds)]
    if len(preds) > 10 or len(gidx) > 10:
        raise ValueError("brute_force_match is limited to 10 objects per side")
    pc = centroids_array(preds)
    gc = centroids_array([gts[j] for j in gidx])
    ok = [[math.hypot(*(pc[i] - gc[k])) * scale.meters_per_pixel <= tau_m
           for k in range(len(gidx))] for i in range(len(preds))]
    memo: dict[tuple[int, int], tuple[int, tuple]] = {}

    def best(i: int, used: int):
        if i == len(preds):
            return 0, ()
        key = (i, used)
        if key in memo:
            return memo[key]
        res = best(i + 1, used)
        for k in range(len(gidx)):
            if ok[i][k] and not used >> k & 1:
                n, pairs = best(i + 1, used | 1 << k)
                if n + 1 > res[0]:
                    res = (n + 1, ((i, gidx[k]),) + pairs)
        memo[key] = res
        return res

    return list(best(0, 0)[1])
