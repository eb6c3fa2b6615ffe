"""Static PNG overlays of ground-truth and predicted graphs."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .core import GridGraph, Kind, centroid
from .raster import ProbRaster, band_pixel_indices

GT_COLOR = (0, 200, 0)
PRED_COLOR = (0, 80, 255)


def _draw_graph(img: np.ndarray, graph: GridGraph, color, line_px: int) -> None:
    shape = img.shape[:2]
    for a, b in graph.sorted_edges():
        rr, cc = band_pixel_indices(centroid(graph.box(a)), centroid(graph.box(b)), line_px, shape)
        img[rr, cc] = color
    for _, box in graph.nodes:
        if box.kind is Kind.EN:
            continue
        r0 = int(np.floor(box.row))
        c0 = int(np.floor(box.col))
        r1 = int(np.ceil(box.row + box.height_px)) - 1
        c1 = int(np.ceil(box.col + box.width_px)) - 1
        rs = slice(max(r0, 0), min(r1, shape[0] - 1) + 1)
        cs = slice(max(c0, 0), min(c1, shape[1] - 1) + 1)
        for r in (r0, r1):
            if 0 <= r < shape[0]:
                img[r, cs] = color
        for c in (c0, c1):
            if 0 <= c < shape[1]:
                img[rs, c] = color


def render_overlay(shape, gt: GridGraph | None = None, pred: GridGraph | None = None,
                   background: ProbRaster | None = None, line_px: int = 3) -> np.ndarray:
    """RGB uint8 image: grayscale background, ground truth in green, prediction in blue."""
    rows, cols = shape
    if background is not None:
        if background.shape != (rows, cols):
            raise ValueError(f"background shape {background.shape} != {shape}")
        gray = np.rint(background.values * 255.0).astype(np.uint8)
        img = np.repeat(gray[:, :, None], 3, axis=2)
    else:
        img = np.zeros((rows, cols, 3), dtype=np.uint8)
    if gt is not None:
        _draw_graph(img, gt, GT_COLOR, line_px)
    if pred is not None:
        _draw_graph(img, pred, PRED_COLOR, line_px)
    return img


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()
