import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from gridtracer.core import GridGraph, Kind, TowerBox

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

coord = st.floats(min_value=-500, max_value=500, allow_nan=False, allow_infinity=False)
extent = st.floats(min_value=0.5, max_value=60, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, kind=Kind.T):
    return TowerBox.from_rchw(draw(coord), draw(coord), draw(extent), draw(extent), kind)


def chain(points, kind=Kind.T, size=10.0, conf=None):
    """Graph of square boxes centred on ``points`` linked in order."""
    bs = [TowerBox.from_rchw(r - size / 2, c - size / 2, size, size, kind, conf) for r, c in points]
    return GridGraph.from_boxes(bs, [(i, i + 1) for i in range(len(bs) - 1)])


def brute_pixels(p, q, width, bounds):
    """Pixel centres within width/2 of segment pq with flat caps extended by width/2."""
    rows, cols = bounds
    h = width / 2.0
    rr, cc = np.mgrid[0:rows, 0:cols]
    pr, pc = p
    qr, qc = q
    d = np.array([qr - pr, qc - pc], dtype=float)
    L = float(np.hypot(*d))
    eps = 1e-9
    if L == 0:
        inside = np.hypot(rr - pr, cc - pc) <= h + eps
    else:
        u = d / L
        along = (rr - pr) * u[0] + (cc - pc) * u[1]
        across = -(rr - pr) * u[1] + (cc - pc) * u[0]
        inside = (along >= -h - eps) & (along <= L + h + eps) & (np.abs(across) <= h + eps)
    return {(int(a), int(b)) for a, b in zip(*np.nonzero(inside))}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
