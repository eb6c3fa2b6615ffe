"""Line-probability rasters, ground-truth line masks and thick-path enumeration.

Pixel ``(i, j)`` is sampled at the continuous point ``(i, j)``. A thick
segment of width ``w`` between ``p`` and ``q`` is the oriented rectangle of
half-width ``w / 2`` around ``pq`` with flat end caps extended by ``w / 2``;
when ``p == q`` it degenerates to a disc of radius ``w / 2``.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import GeoScale, GridGraph, PixelPoint, centroid

logger = logging.getLogger(__name__)

RASTER_MAGIC = b"PGR1"
_HEADER = struct.Struct("<4sIIf")
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
GT_LINE_WIDTH_PX = 30

# inclusion slack for pixels lying exactly on the band boundary
_EPS = 1e-9


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProbRaster:
    """Dense 2-D grid of line likelihoods in ``[0, 1]``.

    ``values`` is stored as a read-only float32 array.
    """

    values: np.ndarray
    scale: GeoScale = GeoScale()
    n_clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float32)
        if vals.ndim != 2 or vals.size == 0:
            raise ValueError(f"raster must be a non-empty 2-D grid, got shape {vals.shape}")
        if not np.all((vals >= 0.0) & (vals <= 1.0)):
            raise ValueError("raster values must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ProbRaster):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.values, other.values)

    __hash__ = None


class BinaryMask(ProbRaster):
    """`ProbRaster` whose values are exactly 0 or 1."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("mask values must be exactly 0 or 1")

    def as_bool(self) -> np.ndarray:
        return self.values > 0.5


def clamp_values(values) -> tuple[np.ndarray, int]:
    """Clip to ``[0, 1]`` (NaN -> 0) and report how many values changed."""
    vals = np.asarray(values, dtype=np.float32)
    bad = ~((vals >= 0.0) & (vals <= 1.0))
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        vals = np.nan_to_num(vals, nan=0.0, posinf=1.0, neginf=0.0)
        vals = np.clip(vals, 0.0, 1.0)
    return vals, n_bad


def band_row_intervals(p: PixelPoint, q: PixelPoint, width_px: float, bounds):
    """Scanline form of the thick segment.

    Returns ``(rows, lo, hi)`` integer arrays such that the band covers pixels
    ``(rows[k], lo[k] .. hi[k])`` inclusive. Only non-empty in-bounds rows are
    returned.
    """
    if not width_px > 0:
        raise ValueError(f"width_px must be positive, got {width_px}")
    n_rows, n_cols = int(bounds[0]), int(bounds[1])
    half = width_px / 2.0
    pr, pc = float(p.row), float(p.col)
    qr, qc = float(q.row), float(q.col)
    dr, dc = qr - pr, qc - pc
    length = math.hypot(dr, dc)
    empty = (np.zeros(0, dtype=np.int64),) * 3

    if length == 0.0:
        r0 = max(0, math.ceil(pr - half - _EPS))
        r1 = min(n_rows - 1, math.floor(pr + half + _EPS))
        if r1 < r0:
            return empty
        rows = np.arange(r0, r1 + 1)
        dy = rows - pr
        reach = np.sqrt(np.maximum(half * half + _EPS - dy * dy, 0.0))
        inside = dy * dy <= half * half + _EPS
        lo_f, hi_f = pc - reach, pc + reach
    else:
        ur, uc = dr / length, dc / length
        # the rectangle's four corners bound its row extent
        ext_r = abs(ur) * (length / 2.0 + half) + abs(uc) * half
        mid_r = (pr + qr) / 2.0
        r0 = max(0, math.ceil(mid_r - ext_r - _EPS))
        r1 = min(n_rows - 1, math.floor(mid_r + ext_r + _EPS))
        if r1 < r0:
            return empty
        rows = np.arange(r0, r1 + 1)
        y = rows - pr
        lo_f = np.full(rows.shape, -np.inf)
        hi_f = np.full(rows.shape, np.inf)
        inside = np.ones(rows.shape, dtype=bool)
        # along = y*ur + x*uc in [-half, length+half]; across = -y*uc + x*ur in [-half, half]
        for base, coef, lo_b, hi_b in (
            (y * ur, uc, -half - _EPS, length + half + _EPS),
            (-y * uc, ur, -half - _EPS, half + _EPS),
        ):
            if abs(coef) < 1e-15:
                inside &= (base >= lo_b) & (base <= hi_b)
                continue
            a = (lo_b - base) / coef
            b = (hi_b - base) / coef
            lo_f = np.maximum(lo_f, np.minimum(a, b))
            hi_f = np.minimum(hi_f, np.maximum(a, b))
        lo_f = pc + lo_f
        hi_f = pc + hi_f

    lo = np.ceil(np.clip(lo_f, -1.0, n_cols)).astype(np.int64)
    hi = np.floor(np.clip(hi_f, -1.0, n_cols)).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, n_cols - 1)
    keep = inside & (hi >= lo)
    return rows[keep].astype(np.int64), lo[keep], hi[keep]


def band_pixel_indices(p: PixelPoint, q: PixelPoint, width_px: float, bounds):
    """Flat ``(rows, cols)`` index arrays for the thick segment."""
    rows, lo, hi = band_row_intervals(p, q, width_px, bounds)
    counts = hi - lo + 1
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    rr = np.repeat(rows, counts)
    starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
    cc = starts + np.arange(total)
    return rr, cc


def thick_segment_pixels(
    p: PixelPoint, q: PixelPoint, width_px: float, bounds
) -> set[tuple[int, int]]:
    """In-bounds pixels within ``width_px / 2`` of segment ``pq`` (flat caps)."""
    rr, cc = band_pixel_indices(p, q, width_px, bounds)
    return set(zip(rr.tolist(), cc.tolist()))


def rasterize_gt_lines(graph: GridGraph, shape, width_px: float = GT_LINE_WIDTH_PX,
                       scale: GeoScale = GeoScale()) -> BinaryMask:
    """Binary mask of every graph edge drawn ``width_px`` wide between centroids."""
    mask = np.zeros((int(shape[0]), int(shape[1])), dtype=np.float32)
    for a, b in graph.sorted_edges():
        rr, cc = band_pixel_indices(
            centroid(graph.box(a)), centroid(graph.box(b)), width_px, mask.shape
        )
        mask[rr, cc] = 1.0
    return BinaryMask(mask, scale)


def binarize(raster: ProbRaster, threshold: float) -> BinaryMask:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return BinaryMask((raster.values >= threshold).astype(np.float32), raster.scale)


def mask_iou(pred: ProbRaster, gt: ProbRaster) -> float:
    """Pixel IoU of two binary masks; 1.0 when both are empty."""
    inter, union = mask_overlap_counts(pred, gt)
    return 1.0 if union == 0 else inter / union


def mask_overlap_counts(pred: ProbRaster, gt: ProbRaster) -> tuple[int, int]:
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    a = pred.values > 0.5
    b = gt.values > 0.5
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def save_raster(raster: ProbRaster) -> bytes:
    """Serialise as the 16-byte header plus row-major little-endian float32 values."""
    header = _HEADER.pack(
        RASTER_MAGIC, raster.rows, raster.cols, raster.scale.meters_per_pixel
    )
    return header + raster.values.astype("<f4").tobytes(order="C")


def load_raster(data: bytes, scale: GeoScale | None = None) -> ProbRaster:
    """Parse a native raster file or an 8-bit grayscale PNG.

    Out-of-range values are clamped; the count is kept on ``n_clamped``.
    ``scale`` overrides the stored / default meters per pixel.
    """
    if data[:8] == _PNG_MAGIC:
        return _load_png(data, scale)
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"truncated raster header ({len(data)} bytes)")
    magic, rows, cols, mpp = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise RasterFormatError(f"bad raster magic {magic!r}")
    if rows == 0 or cols == 0:
        raise RasterFormatError(f"empty raster shape ({rows}, {cols})")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise RasterFormatError(
            f"raster payload size mismatch: expected {expected} bytes, got {len(data)}"
        )
    vals = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    vals, n_bad = clamp_values(vals)
    if n_bad:
        logger.warning("clamped %d raster values into [0, 1]", n_bad)
    if scale is None:
        try:
            # float32 header field; the shortest repr recovers e.g. 0.3 exactly
            scale = GeoScale(float(str(np.float32(mpp))))
        except ValueError as exc:
            raise RasterFormatError(str(exc)) from exc
    return ProbRaster(vals, scale, n_clamped=n_bad)


def _load_png(data: bytes, scale: GeoScale | None) -> ProbRaster:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if img.mode not in ("L", "1"):
                raise RasterFormatError(f"expected 8-bit grayscale image, got mode {img.mode}")
            arr = np.asarray(img.convert("L"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise RasterFormatError(f"unreadable image: {exc}") from exc
    return ProbRaster(arr / 255.0, scale or GeoScale())


def save_png(raster: ProbRaster) -> bytes:
    """8-bit grayscale PNG (values quantised to ``round(v * 255)``)."""
    from PIL import Image

    arr = np.rint(raster.values * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
