"""scikit-learn compatible wrappers around post-processing and graph inference.

Neither estimator learns anything; ``fit`` only validates hyper-parameters,
which lets them sit in pipelines and parameter sweeps::

    from sklearn.model_selection import ParameterGrid
    for p in ParameterGrid({"gamma": [0.1, 0.2, 0.3], "max_span_m": [200, 600]}):
        tracer = GridTracer(**p).fit()
        graph = tracer.predict(detections, raster)
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from .core import GridGraph
from .infer import InferParams, filter_by_confidence, infer_adjacency, nms
from .metrics import DEFAULT_TAU_M, graph_prf
from .validation import check_raster, check_towers


class TowerPostprocessor(TransformerMixin, BaseEstimator):
    """Confidence gate followed by greedy NMS."""

    def __init__(self, conf_threshold=0.5, nms_overlap=0.5):
        self.conf_threshold = conf_threshold
        self.nms_overlap = nms_overlap

    def fit(self, X=None, y=None):
        InferParams(conf_threshold=self.conf_threshold, nms_overlap=self.nms_overlap)
        self.is_fitted_ = True
        return self

    def transform(self, X):
        dets = check_towers(X, require_confidence=True)
        return nms(filter_by_confidence(dets, self.conf_threshold), self.nms_overlap)


class GridTracer(BaseEstimator):
    """Infer a power-grid graph from tower detections and a line-probability raster.

    Parameters
    ----------
    gamma : float
        Minimum mean line probability along a candidate path.
    max_span_m : float
        Towers at least this far apart (meters) are never connected.
    path_width_px : int
        Odd width of the straight band the path score averages over.
    conf_threshold, nms_overlap : float
        Detection clean-up applied by ``predict`` when ``postprocess`` is true.
    postprocess : bool
        Run confidence filtering and NMS before inference. Disable to feed
        ground-truth centroids directly.
    n_jobs : int or None
        Threads used to score candidate pairs; output does not depend on it.
    """

    def __init__(self, gamma=0.2, max_span_m=600.0, path_width_px=9, conf_threshold=0.5,
                 nms_overlap=0.5, postprocess=True, n_jobs=None):
        self.gamma = gamma
        self.max_span_m = max_span_m
        self.path_width_px = path_width_px
        self.conf_threshold = conf_threshold
        self.nms_overlap = nms_overlap
        self.postprocess = postprocess
        self.n_jobs = n_jobs

    def _params(self) -> InferParams:
        return InferParams(self.gamma, self.max_span_m, self.path_width_px,
                           self.conf_threshold, self.nms_overlap)

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def predict(self, X, C) -> GridGraph:
        """Return the inferred `GridGraph` for towers ``X`` over raster ``C``."""
        params = getattr(self, "params_", None) or self._params()
        towers = check_towers(X, require_confidence=self.postprocess)
        if self.postprocess:
            towers = nms(filter_by_confidence(towers, params.conf_threshold), params.nms_overlap)
        return infer_adjacency(towers, check_raster(C), params, n_jobs=self.n_jobs)

    def score(self, X, C, y: GridGraph, tau_m=DEFAULT_TAU_M) -> float:
        """Graph F1 of the prediction against ground-truth graph ``y``."""
        raster = check_raster(C)
        return graph_prf(self.predict(X, raster), y, tau_m, raster.scale).f1
