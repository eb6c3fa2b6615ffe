"""Input coercion helpers shared by the estimators and CLI."""

from __future__ import annotations

import numpy as np

from .core import GeoScale, Kind, TowerBox
from .raster import ProbRaster, clamp_values


def check_towers(X, require_confidence: bool = False) -> list[TowerBox]:
    """Coerce towers to a list of `TowerBox`.

    Accepts a sequence of boxes, a `GridGraph`, or an array-like of rows
    ``(r, c, h, w)`` / ``(r, c, h, w, confidence)``.
    """
    if hasattr(X, "nodes") and hasattr(X, "edges"):
        boxes = [b for b in X.boxes if b.kind is not Kind.EN]
    elif len(X) > 0 and all(isinstance(b, TowerBox) for b in X):
        boxes = list(X)
    elif len(X) == 0:
        boxes = []
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] not in (4, 5):
            raise ValueError(f"tower array must have shape (n, 4) or (n, 5), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tower array contains non-finite values")
        boxes = [
            TowerBox.from_rchw(*row[:4], confidence=float(row[4]) if arr.shape[1] == 5 else None)
            for row in arr
        ]
    if require_confidence and any(b.confidence is None for b in boxes):
        raise ValueError("every detection needs a confidence score")
    return boxes


def check_raster(C, scale: GeoScale | None = None) -> ProbRaster:
    """Coerce ``C`` to a `ProbRaster`; plain arrays are clamped into ``[0, 1]``."""
    if isinstance(C, ProbRaster):
        if scale is not None and scale != C.scale:
            return ProbRaster(C.values, scale)
        return C
    vals, n_bad = clamp_values(np.asarray(C, dtype=np.float32))
    return ProbRaster(vals, scale or GeoScale(), n_clamped=n_bad)
