"""Geometry and graph primitives shared by every other module.

Coordinates are row-major with the origin at the top-left corner and rows
increasing downward. Centroids are kept fractional; nothing is rounded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_METERS_PER_PIXEL = 0.3


class Kind(str, enum.Enum):
    """Node class tag: real tower, ambiguous tower, or tile-border edge node."""

    T = "T"
    OT = "OT"
    EN = "EN"


@dataclass(frozen=True)
class PixelPoint:
    row: float
    col: float

    def __post_init__(self):
        if not (math.isfinite(self.row) and math.isfinite(self.col)):
            raise ValueError(f"non-finite point ({self.row}, {self.col})")

    def __iter__(self) -> Iterator[float]:
        yield self.row
        yield self.col

    def shifted(self, drow: float, dcol: float) -> PixelPoint:
        return PixelPoint(self.row + drow, self.col + dcol)


@dataclass(frozen=True)
class GeoScale:
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL

    def __post_init__(self):
        if not (self.meters_per_pixel > 0 and math.isfinite(self.meters_per_pixel)):
            raise ValueError(f"meters_per_pixel must be > 0, got {self.meters_per_pixel}")

    def to_pixels(self, meters: float) -> float:
        return meters / self.meters_per_pixel

    def to_meters(self, pixels: float) -> float:
        return pixels * self.meters_per_pixel


@dataclass(frozen=True)
class TowerBox:
    """Axis-aligned tower rectangle ``(r, c, h, w)``.

    ``confidence`` is set only on predictions. Edge nodes (``Kind.EN``) are
    stored as 1x1 boxes centred on the border crossing.
    """

    top_left: PixelPoint
    height_px: float
    width_px: float
    kind: Kind = Kind.T
    confidence: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not isinstance(self.top_left, PixelPoint):
            object.__setattr__(self, "top_left", PixelPoint(*self.top_left))
        if self.kind is Kind.EN:
            if self.height_px != 1 or self.width_px != 1:
                raise ValueError("EN nodes must be degenerate 1x1 boxes")
        elif not (self.height_px > 0 and self.width_px > 0):
            raise ValueError(
                f"box extent must be positive, got h={self.height_px} w={self.width_px}"
            )
        if not (math.isfinite(self.height_px) and math.isfinite(self.width_px)):
            raise ValueError("box extent must be finite")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @classmethod
    def from_rchw(cls, r, c, h, w, kind=Kind.T, confidence=None) -> TowerBox:
        return cls(PixelPoint(float(r), float(c)), float(h), float(w), kind, confidence)

    @classmethod
    def edge_node(cls, at: PixelPoint) -> TowerBox:
        """1x1 EN box whose centroid is exactly ``at``."""
        return cls(PixelPoint(at.row - 0.5, at.col - 0.5), 1.0, 1.0, Kind.EN)

    @property
    def row(self) -> float:
        return self.top_left.row

    @property
    def col(self) -> float:
        return self.top_left.col

    @property
    def rchw(self) -> tuple[float, float, float, float]:
        return (self.top_left.row, self.top_left.col, self.height_px, self.width_px)

    @property
    def area(self) -> float:
        return self.height_px * self.width_px

    def shifted(self, drow: float, dcol: float) -> TowerBox:
        return TowerBox(
            self.top_left.shifted(drow, dcol),
            self.height_px,
            self.width_px,
            self.kind,
            self.confidence,
        )

    def with_confidence(self, confidence: float | None) -> TowerBox:
        return TowerBox(self.top_left, self.height_px, self.width_px, self.kind, confidence)


def centroid(box: TowerBox) -> PixelPoint:
    return PixelPoint(box.row + box.height_px / 2.0, box.col + box.width_px / 2.0)


def centroid_distance_px(a: TowerBox, b: TowerBox) -> float:
    ca, cb = centroid(a), centroid(b)
    return math.hypot(ca.row - cb.row, ca.col - cb.col)


def centroid_distance_m(a: TowerBox, b: TowerBox, scale: GeoScale = GeoScale()) -> float:
    """Euclidean centroid distance converted to meters."""
    return centroid_distance_px(a, b) * scale.meters_per_pixel


def box_iou(a: TowerBox, b: TowerBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ih = min(a.row + a.height_px, b.row + b.height_px) - max(a.row, b.row)
    iw = min(a.col + a.width_px, b.col + b.width_px) - max(a.col, b.col)
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    return min(1.0, inter / (a.area + b.area - inter))


def centroids_array(boxes: Sequence[TowerBox]) -> np.ndarray:
    """``(n, 2)`` float array of box centroids."""
    if len(boxes) == 0:
        return np.zeros((0, 2))
    arr = np.array([b.rchw for b in boxes], dtype=float)
    return arr[:, :2] + arr[:, 2:] / 2.0


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class GridGraph:
    """Geospatial graph: ordered ``(node_id, TowerBox)`` list plus undirected edges.

    Edges are stored as canonical ``(min_id, max_id)`` tuples so the edge set
    is symmetric by construction.
    """

    nodes: tuple[tuple[str, TowerBox], ...] = ()
    edges: frozenset[tuple[str, str]] = frozenset()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        nodes = tuple((str(i), b) for i, b in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        index = {}
        for pos, (nid, box) in enumerate(nodes):
            if nid in index:
                raise ValueError(f"duplicate node id {nid!r}")
            if not nid or any(ch.isspace() for ch in nid):
                raise ValueError(f"invalid node id {nid!r}")
            if not isinstance(box, TowerBox):
                raise TypeError(f"node {nid!r} is not a TowerBox")
            index[nid] = pos
        edges = set()
        for a, b in self.edges:
            a, b = str(a), str(b)
            if a == b:
                raise ValueError(f"self-loop on node {a!r}")
            for nid in (a, b):
                if nid not in index:
                    raise ValueError(f"edge ({a}, {b}) references unknown node {nid!r}")
            edges.add(_edge_key(a, b))
        object.__setattr__(self, "edges", frozenset(edges))
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_boxes(
        cls, boxes: Iterable[TowerBox], edges: Iterable[tuple[int, int]] = ()
    ) -> GridGraph:
        """Build a graph with ids ``"0" .. "n-1"`` and index-pair edges."""
        nodes = tuple((str(i), b) for i, b in enumerate(boxes))
        return cls(nodes, frozenset((str(i), str(j)) for i, j in edges))

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    @property
    def node_ids(self) -> list[str]:
        return [nid for nid, _ in self.nodes]

    @property
    def boxes(self) -> list[TowerBox]:
        return [b for _, b in self.nodes]

    def box(self, node_id: str) -> TowerBox:
        return self.nodes[self._index[node_id]][1]

    def position(self, node_id: str) -> int:
        return self._index[node_id]

    def has_edge(self, a: str, b: str) -> bool:
        return _edge_key(a, b) in self.edges

    def sorted_edges(self) -> list[tuple[str, str]]:
        """Edges ordered by node position, for deterministic output."""
        idx = self._index
        pairs = [tuple(sorted(e, key=idx.__getitem__)) for e in self.edges]
        return sorted(pairs, key=lambda e: (idx[e[0]], idx[e[1]]))

    def neighbors(self, node_id: str) -> list[str]:
        out = [b if a == node_id else a for a, b in self.edges if node_id in (a, b)]
        return sorted(out, key=self._index.__getitem__)

    def degrees(self) -> dict[str, int]:
        deg = {nid: 0 for nid in self._index}
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def adjacency_matrix(self) -> np.ndarray:
        n = len(self.nodes)
        adj = np.zeros((n, n), dtype=np.uint8)
        for a, b in self.edges:
            i, j = self._index[a], self._index[b]
            adj[i, j] = adj[j, i] = 1
        return adj

    def subgraph(self, kinds: Iterable[Kind]) -> GridGraph:
        """Nodes of the given kinds and the edges among them."""
        keep = {Kind(k) for k in kinds}
        nodes = tuple((i, b) for i, b in self.nodes if b.kind in keep)
        ids = {i for i, _ in nodes}
        return GridGraph(nodes, frozenset(e for e in self.edges if e[0] in ids and e[1] in ids))

    def translated(self, drow: float, dcol: float) -> GridGraph:
        return GridGraph(tuple((i, b.shifted(drow, dcol)) for i, b in self.nodes), self.edges)
