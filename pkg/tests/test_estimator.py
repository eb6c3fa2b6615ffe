import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import ParameterGrid

from gridtracer.core import GridGraph, TowerBox
from gridtracer.estimator import GridTracer, TowerPostprocessor
from gridtracer.infer import InferParams, infer_adjacency
from gridtracer.raster import ProbRaster
from gridtracer.synth import DetectionNoise, SynthParams, corrupt_detections, gen_scene, render_clean_raster
from gridtracer.validation import check_raster, check_towers


def test_get_set_params_and_clone():
    t = GridTracer(gamma=0.3, n_jobs=2)
    p = t.get_params()
    assert p["gamma"] == 0.3 and p["max_span_m"] == 600.0 and p["n_jobs"] == 2
    c = clone(t)
    assert c.get_params() == p and c is not t
    t.set_params(gamma=0.1)
    assert t.gamma == 0.1


def test_fit_validates():
    with pytest.raises(ValueError):
        GridTracer(path_width_px=8).fit()
    with pytest.raises(ValueError):
        TowerPostprocessor(conf_threshold=2).fit()
    assert GridTracer().fit().params_ == InferParams()


def test_postprocessor_transform():
    dets = [TowerBox.from_rchw(0, 0, 10, 10, confidence=0.9), TowerBox.from_rchw(0, 1, 10, 10, confidence=0.8),
            TowerBox.from_rchw(50, 50, 10, 10, confidence=0.3)]
    out = TowerPostprocessor().fit_transform(dets)
    assert out == [dets[0]]
    arr = np.array([[0, 0, 10, 10, 0.9], [0, 1, 10, 10, 0.8]])
    assert len(TowerPostprocessor().fit().transform(arr)) == 1
    with pytest.raises(ValueError):
        TowerPostprocessor().transform([TowerBox.from_rchw(0, 0, 1, 1)])


def test_predict_equals_functional_api():
    s = gen_scene(SynthParams(seed=8))
    C = render_clean_raster(s)
    g = GridTracer(postprocess=False).fit().predict(s.graph, C)
    assert g == infer_adjacency(s.graph.boxes, C)
    assert GridTracer(postprocess=False).fit().score(s.graph, C, s.graph) == 1.0


def test_predict_with_detections():
    s = gen_scene(SynthParams(seed=9))
    C = render_clean_raster(s)
    dets = corrupt_detections(s.graph.boxes, DetectionNoise(jitter_sigma_m=0.3, conf_spread=0.3), 1, s.raster_shape)
    assert GridTracer().fit().score(dets, C, s.graph) == 1.0


def test_parameter_grid_sweep():
    s = gen_scene(SynthParams(seed=10))
    C = render_clean_raster(s)
    f1 = [GridTracer(postprocess=False, **p).fit().score(s.graph, C, s.graph)
          for p in ParameterGrid({"gamma": [0.1, 0.2, 0.3], "max_span_m": [200, 600]})]
    assert len(f1) == 6 and max(f1) == 1.0


def test_check_towers_inputs():
    boxes = [TowerBox.from_rchw(1, 2, 3, 4)]
    assert check_towers(boxes) == boxes
    assert check_towers([]) == []
    assert check_towers(GridGraph.from_boxes(boxes)) == boxes
    arr = check_towers(np.array([[1, 2, 3, 4]]))
    assert arr[0].rchw == (1, 2, 3, 4) and arr[0].confidence is None
    with pytest.raises(ValueError):
        check_towers(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        check_towers(np.array([[np.nan, 0, 1, 1]]))
    with pytest.raises(ValueError):
        check_towers(boxes, require_confidence=True)


def test_check_raster():
    r = check_raster(np.array([[0.5, 1.4], [-1, 0]]))
    assert isinstance(r, ProbRaster) and r.n_clamped == 2
    same = ProbRaster(np.zeros((2, 2)))
    assert check_raster(same) is same
