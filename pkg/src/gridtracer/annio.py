"""Annotation files, tile decomposition with edge nodes, and split manifests.

Annotation text format (UTF-8, ``\\n`` line ends, space separated, reals with
six decimals)::

    H <tile_id> <region> <rows> <cols> <meters_per_pixel>
    N <node_id> <T|OT|EN> <r> <c> <h> <w> [<confidence>]
    E <node_id> <node_id>

Blank lines and lines starting with ``#`` are ignored on input.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import GeoScale, GridGraph, Kind, PixelPoint, TowerBox, centroid

KNOWN_REGIONS = ("Arizona", "Kansas", "NewZealand")
SCHEMES = ("A_conventional", "B_in_domain", "C_leave_one_out")
TEST_FRACTION = 0.2
EN_BORDER_TOL_PX = 0.5
EN_FUSE_TOL_PX = 1.0
_TILE_SUFFIX = re.compile(r"^(?P<parent>.+)__r(?P<i>\d+)c(?P<j>\d+)$")


class AnnotationError(ValueError):
    """Malformed or inconsistent annotation content."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class AnnotationSyntaxError(AnnotationError):
    pass


class IntegrityError(AnnotationError):
    """Duplicate node ids or edges referencing unknown nodes."""


class AnnotationValidationError(AnnotationError):
    """Well-formed records that break scene invariants (e.g. an EN off the border)."""


def _on_border(pt: PixelPoint, rows: float, cols: float, tol: float = EN_BORDER_TOL_PX) -> bool:
    return (
        abs(pt.row) <= tol
        or abs(pt.row - rows) <= tol
        or abs(pt.col) <= tol
        or abs(pt.col - cols) <= tol
    )


@dataclass(frozen=True)
class SceneAnnotation:
    tile_id: str
    region: str
    raster_shape: tuple[int, int]
    scale: GeoScale = GeoScale()
    graph: GridGraph = field(default_factory=GridGraph)

    def __post_init__(self):
        for name, val in (("tile_id", self.tile_id), ("region", self.region)):
            if not val or any(ch.isspace() for ch in val):
                raise AnnotationValidationError(f"{name} must be a non-empty token, got {val!r}")
        rows, cols = (int(v) for v in self.raster_shape)
        if rows <= 0 or cols <= 0:
            raise AnnotationValidationError(f"raster shape must be positive, got {self.raster_shape}")
        object.__setattr__(self, "raster_shape", (rows, cols))
        self.validate()

    def validate(self) -> None:
        rows, cols = self.raster_shape
        tol = EN_BORDER_TOL_PX
        deg = self.graph.degrees()
        for nid, box in self.graph.nodes:
            c = centroid(box)
            if not (-tol <= c.row <= rows + tol and -tol <= c.col <= cols + tol):
                raise AnnotationValidationError(f"node {nid!r} centroid {tuple(c)} outside tile")
            if box.kind is Kind.EN:
                if not _on_border(c, rows, cols):
                    raise AnnotationValidationError(f"EN node {nid!r} is not on the tile border")
                if deg[nid] < 1:
                    raise AnnotationValidationError(f"EN node {nid!r} has no incident edge")

    @property
    def detections(self) -> list[TowerBox]:
        return self.graph.boxes


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_annotation(scene: SceneAnnotation) -> bytes:
    rows, cols = scene.raster_shape
    lines = [
        f"H {scene.tile_id} {scene.region} {rows} {cols} {_fmt(scene.scale.meters_per_pixel)}"
    ]
    for nid, box in scene.graph.nodes:
        rec = f"N {nid} {box.kind.value} " + " ".join(_fmt(v) for v in box.rchw)
        if box.confidence is not None:
            rec += f" {_fmt(box.confidence)}"
        lines.append(rec)
    for a, b in scene.graph.sorted_edges():
        lines.append(f"E {a} {b}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _real(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise AnnotationSyntaxError(f"expected a real number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise AnnotationSyntaxError(f"non-finite value {tok!r}", lineno)
    return v


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise AnnotationSyntaxError(f"expected an integer, got {tok!r}", lineno) from None


def parse_annotation(data: bytes | str) -> SceneAnnotation:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    header = None
    nodes: list[tuple[str, TowerBox]] = []
    seen: dict[str, int] = {}
    edges: list[tuple[str, str, int]] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        tag = tok[0]
        if tag == "H":
            if header is not None:
                raise AnnotationSyntaxError("duplicate header record", lineno)
            if len(tok) != 6:
                raise AnnotationSyntaxError("header needs: H tile_id region rows cols m_per_px", lineno)
            try:
                scale = GeoScale(_real(tok[5], lineno))
            except AnnotationError:
                raise
            except ValueError as exc:
                raise AnnotationSyntaxError(str(exc), lineno) from None
            header = (tok[1], tok[2], (_int(tok[3], lineno), _int(tok[4], lineno)), scale)
        elif header is None:
            raise AnnotationSyntaxError("first record must be the H header", lineno)
        elif tag == "N":
            if len(tok) not in (7, 8):
                raise AnnotationSyntaxError("node needs: N id kind r c h w [conf]", lineno)
            nid, kind_s = tok[1], tok[2]
            try:
                kind = Kind(kind_s)
            except ValueError:
                raise AnnotationSyntaxError(f"unknown node kind {kind_s!r}", lineno) from None
            r, c, h, w = (_real(t, lineno) for t in tok[3:7])
            conf = _real(tok[7], lineno) if len(tok) == 8 else None
            if nid in seen:
                raise IntegrityError(f"duplicate node id {nid!r} (first on line {seen[nid]})", lineno)
            try:
                box = TowerBox(PixelPoint(r, c), h, w, kind, conf)
            except ValueError as exc:
                raise AnnotationValidationError(str(exc), lineno) from None
            seen[nid] = lineno
            nodes.append((nid, box))
        elif tag == "E":
            if len(tok) != 3:
                raise AnnotationSyntaxError("edge needs: E id1 id2", lineno)
            edges.append((tok[1], tok[2], lineno))
        else:
            raise AnnotationSyntaxError(f"unknown record type {tag!r}", lineno)
    if header is None:
        raise AnnotationSyntaxError("missing H header")
    for a, b, lineno in edges:
        for nid in (a, b):
            if nid not in seen:
                raise IntegrityError(f"edge references unknown node {nid!r}", lineno)
        if a == b:
            raise IntegrityError(f"self-loop on node {a!r}", lineno)
    graph = GridGraph(tuple(nodes), frozenset((a, b) for a, b, _ in edges))
    tile_id, region, shape, scale = header
    return SceneAnnotation(tile_id, region, shape, scale, graph)


# --- tiling -------------------------------------------------------------------


def tile_bounds(extent: int, n: int) -> np.ndarray:
    """Integer border positions splitting ``extent`` pixels into ``n`` tiles."""
    return np.array([(k * extent) // n for k in range(n + 1)], dtype=np.int64)


def _tile_index(x: float, bounds: np.ndarray) -> int:
    # values exactly on a border go to the lower-index tile
    i = int(np.searchsorted(bounds, x, side="left")) - 1
    return min(max(i, 0), len(bounds) - 2)


def tile_name(parent: str, i: int, j: int) -> str:
    return f"{parent}__r{i}c{j}"


def _segment_crossings(a: PixelPoint, b: PixelPoint, rb: np.ndarray, cb: np.ndarray):
    """Sorted ``(t, point)`` for interior border crossings of segment ``ab``."""
    hits: dict[float, dict] = {}
    dr, dc = b.row - a.row, b.col - a.col
    for axis, delta, start, borders in ((0, dr, a.row, rb[1:-1]), (1, dc, a.col, cb[1:-1])):
        if delta == 0:
            continue
        for v in borders:
            t = (float(v) - start) / delta
            if 1e-12 < t < 1.0 - 1e-12:
                key = round(t, 12)
                hits.setdefault(key, {"t": t})[axis] = float(v)
    out = []
    for key in sorted(hits):
        h = hits[key]
        t = h["t"]
        row = h.get(0, a.row + t * dr)
        col = h.get(1, a.col + t * dc)
        out.append((t, PixelPoint(row, col)))
    return out


def split_at_tiles(scene: SceneAnnotation, tile_rows: int, tile_cols: int) -> list[SceneAnnotation]:
    """Cut a scene into a ``tile_rows x tile_cols`` grid of self-contained tiles.

    Every edge leaving its tile is replaced, per tile it visits, by a fragment
    ending at EN nodes placed on the crossed border. Tiles use local
    coordinates and are named ``<tile_id>__r<i>c<j>``; output is row-major.
    """
    if tile_rows <= 0 or tile_cols <= 0:
        raise ValueError("tile grid dimensions must be positive")
    rows, cols = scene.raster_shape
    if tile_rows > rows or tile_cols > cols:
        raise ValueError("tile grid is finer than the raster")
    rb, cb = tile_bounds(rows, tile_rows), tile_bounds(cols, tile_cols)
    graph = scene.graph

    def tile_of(pt: PixelPoint) -> tuple[int, int]:
        return _tile_index(pt.row, rb), _tile_index(pt.col, cb)

    tile_nodes: dict[tuple[int, int], list] = defaultdict(list)
    tile_edges: dict[tuple[int, int], list] = defaultdict(list)
    home = {}
    for nid, box in graph.nodes:
        t = tile_of(centroid(box))
        home[nid] = t
        tile_nodes[t].append((nid, box))

    used = set(graph.node_ids)
    counter = 0

    def new_en(tile, pt) -> str:
        nonlocal counter
        while True:
            counter += 1
            name = f"EN{counter}"
            if name not in used:
                used.add(name)
                break
        tile_nodes[tile].append((name, TowerBox.edge_node(pt)))
        return name

    for a, b in graph.sorted_edges():
        pa, pb = centroid(graph.box(a)), centroid(graph.box(b))
        ta, tb = home[a], home[b]
        if ta == tb:
            tile_edges[ta].append((a, b))
            continue
        cuts = _segment_crossings(pa, pb, rb, cb)
        ts = [0.0] + [t for t, _ in cuts] + [1.0]
        pieces = []
        for k in range(len(ts) - 1):
            tm = (ts[k] + ts[k + 1]) / 2.0
            mid = PixelPoint(pa.row + tm * (pb.row - pa.row), pa.col + tm * (pb.col - pa.col))
            pieces.append(tile_of(mid))
        points = [pt for _, pt in cuts]
        # an endpoint sitting on a border may belong to a tile the segment only touches
        if pieces[0] != ta:
            pieces.insert(0, ta)
            points.insert(0, pa)
        if pieces[-1] != tb:
            pieces.append(tb)
            points.append(pb)
        # drop crossings that do not change tile
        merged_tiles, merged_pts = [pieces[0]], []
        for tile, pt in zip(pieces[1:], points):
            if tile == merged_tiles[-1]:
                continue
            merged_tiles.append(tile)
            merged_pts.append(pt)
        start = a
        for k, pt in enumerate(merged_pts):
            end_here = new_en(merged_tiles[k], pt)
            tile_edges[merged_tiles[k]].append((start, end_here))
            start = new_en(merged_tiles[k + 1], pt)
        tile_edges[merged_tiles[-1]].append((start, b))

    out = []
    for i in range(tile_rows):
        for j in range(tile_cols):
            r0, c0 = int(rb[i]), int(cb[j])
            nodes = tuple((nid, box.shifted(-r0, -c0)) for nid, box in tile_nodes[(i, j)])
            sub = GridGraph(nodes, frozenset(tile_edges[(i, j)]))
            shape = (int(rb[i + 1] - rb[i]), int(cb[j + 1] - cb[j]))
            name = scene.tile_id if tile_rows == tile_cols == 1 else tile_name(scene.tile_id, i, j)
            out.append(SceneAnnotation(name, scene.region, shape, scene.scale, sub))
    return out


def merge_tiles(tiles: Sequence[SceneAnnotation]) -> tuple[SceneAnnotation, list[str]]:
    """Reassemble tiles produced by :func:`split_at_tiles`.

    EN nodes on an interior border are fused with their counterpart in the
    neighbouring tile (within 1 px) and the original edge is restored. Interior
    EN nodes without a counterpart are dropped together with their fragment;
    the returned list holds one warning per such node.
    """
    if not tiles:
        raise ValueError("no tiles to merge")
    if len(tiles) == 1:
        return tiles[0], []
    grid = {}
    parents = set()
    for tile in tiles:
        m = _TILE_SUFFIX.match(tile.tile_id)
        if not m:
            raise AnnotationValidationError(f"tile id {tile.tile_id!r} lacks a __r<i>c<j> suffix")
        parents.add(m["parent"])
        key = (int(m["i"]), int(m["j"]))
        if key in grid:
            raise AnnotationValidationError(f"duplicate tile position {key}")
        grid[key] = tile
    if len(parents) != 1:
        raise AnnotationValidationError(f"tiles come from several scenes: {sorted(parents)}")
    n_i = max(i for i, _ in grid) + 1
    n_j = max(j for _, j in grid) + 1
    if len(grid) != n_i * n_j:
        raise AnnotationValidationError("tiles do not form a complete grid")
    scales = {t.scale for t in tiles}
    regions = {t.region for t in tiles}
    if len(scales) != 1 or len(regions) != 1:
        raise AnnotationValidationError("tiles must share scale and region")
    heights = [grid[(i, 0)].raster_shape[0] for i in range(n_i)]
    widths = [grid[(0, j)].raster_shape[1] for j in range(n_j)]
    for (i, j), t in grid.items():
        if t.raster_shape != (heights[i], widths[j]):
            raise AnnotationValidationError(f"tile {t.tile_id} does not fit the grid")
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    rows, cols = int(roff[-1]), int(coff[-1])

    nodes: dict[str, TowerBox] = {}
    order: list[str] = []
    owner: dict[str, tuple[int, int]] = {}
    frag: list[tuple[str, str]] = []
    for key in sorted(grid):
        tile = grid[key]
        r0, c0 = float(roff[key[0]]), float(coff[key[1]])
        rename = {}
        for nid, box in tile.graph.nodes:
            gid = nid
            if gid in nodes:
                if box.kind is not Kind.EN:
                    raise IntegrityError(f"node id {nid!r} appears in several tiles")
                gid = f"{tile.tile_id}:{nid}"
            rename[nid] = gid
            nodes[gid] = box.shifted(r0, c0)
            order.append(gid)
            owner[gid] = key
        frag.extend((rename[a], rename[b]) for a, b in tile.graph.sorted_edges())

    adj: dict[str, list[str]] = defaultdict(list)
    for a, b in frag:
        adj[a].append(b)
        adj[b].append(a)

    inner_r, inner_c = roff[1:-1], coff[1:-1]
    tol = EN_BORDER_TOL_PX
    interior = []
    for gid in order:
        box = nodes[gid]
        if box.kind is not Kind.EN:
            continue
        c = centroid(box)
        if np.any(np.abs(inner_r - c.row) <= tol) or np.any(np.abs(inner_c - c.col) <= tol):
            interior.append(gid)

    def direction(en: str, inward: bool):
        # unit vector from the fragment's far end toward the EN (or reverse)
        c = centroid(nodes[en])
        if not adj[en]:
            return None
        o = centroid(nodes[adj[en][0]])
        v = np.array([c.row - o.row, c.col - o.col]) if inward else np.array([o.row - c.row, o.col - c.col])
        n = float(np.hypot(*v))
        return None if n < 1e-9 else v / n

    cands = []
    for x, ea in enumerate(interior):
        ca = centroid(nodes[ea])
        for eb in interior[x + 1:]:
            ta, tb = owner[ea], owner[eb]
            if ta == tb or abs(ta[0] - tb[0]) > 1 or abs(ta[1] - tb[1]) > 1:
                continue
            cb_ = centroid(nodes[eb])
            dist = math.hypot(ca.row - cb_.row, ca.col - cb_.col)
            if dist > EN_FUSE_TOL_PX:
                continue
            da, db = direction(ea, True), direction(eb, False)
            align = 1.0 if da is None or db is None else float(da @ db)
            cands.append((dist + (1.0 - align), ea, eb))
    cands.sort()
    partner: dict[str, str] = {}
    for _, ea, eb in cands:
        if ea in partner or eb in partner:
            continue
        partner[ea] = eb
        partner[eb] = ea

    warnings = []
    dropped = set()
    for gid in interior:
        if gid not in partner and not _on_border(centroid(nodes[gid]), rows, cols):
            warnings.append(f"dangling edge: EN node {gid} has no counterpart across the border")
            dropped.add(gid)

    edges = set()
    for start in order:
        if start in partner or start in dropped:
            continue
        for nb in adj[start]:
            prev, cur = start, nb
            while cur in partner:
                nxt = partner[cur]
                others = [x for x in adj[nxt] if x != cur]
                prev, cur = nxt, (others[0] if others else None)
                if cur is None:
                    break
            if cur is None or cur in dropped or cur == start:
                continue
            edges.add((start, cur))
    keep = [g for g in order if g not in partner and g not in dropped]
    graph = GridGraph(tuple((g, nodes[g]) for g in keep), frozenset(edges))
    merged = SceneAnnotation(parents.pop(), tiles[0].region, (rows, cols), tiles[0].scale, graph)
    return merged, warnings


# --- train / test manifests -----------------------------------------------------


@dataclass(frozen=True)
class SplitManifest:
    scheme: str
    train: tuple[str, ...]
    test: tuple[str, ...]
    held_out_region: str | None = None
    region: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"train and test overlap: {sorted(overlap)}")

    @property
    def name(self) -> str:
        suffix = self.held_out_region or self.region
        return f"manifest_{self.scheme}" + (f"_{suffix}" if suffix else "")


def region_portions(scenes: Iterable[SceneAnnotation]) -> dict[str, tuple[list[str], list[str]]]:
    """Per region ``(train, test)`` tile ids: test is the first 20% in lexicographic order."""
    by_region: dict[str, list[str]] = defaultdict(list)
    for s in scenes:
        by_region[s.region].append(s.tile_id)
    out = {}
    for region in sorted(by_region):
        ids = sorted(set(by_region[region]))
        n_test = max(1, int(math.floor(len(ids) * TEST_FRACTION + 1e-9)))
        out[region] = (ids[n_test:], ids[:n_test])
    return out


def make_split_manifest(scheme: str, scenes: Sequence[SceneAnnotation]) -> list[SplitManifest]:
    """Manifests for one data-handling scheme.

    ``A_conventional``: one manifest training on every region.
    ``B_in_domain``: one manifest per region.
    ``C_leave_one_out``: one per held-out region, trained on the others' train portions.
    """
    portions = region_portions(scenes)
    if not portions:
        raise ValueError("no scenes given")
    if scheme == "A_conventional":
        train = [t for tr, _ in portions.values() for t in tr]
        test = [t for _, te in portions.values() for t in te]
        return [SplitManifest(scheme, tuple(train), tuple(test))]
    if scheme == "B_in_domain":
        return [
            SplitManifest(scheme, tuple(tr), tuple(te), region=region)
            for region, (tr, te) in portions.items()
        ]
    if scheme == "C_leave_one_out":
        if len(portions) < 2:
            raise ValueError("leave-one-out needs at least two regions")
        out = []
        for held, (_, te) in portions.items():
            train = [t for r, (tr, _) in portions.items() if r != held for t in tr]
            out.append(SplitManifest(scheme, tuple(train), tuple(te), held_out_region=held))
        return out
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def write_manifest(m: SplitManifest) -> bytes:
    head = f"M {m.scheme}"
    if m.held_out_region:
        head += f" held_out={m.held_out_region}"
    if m.region:
        head += f" region={m.region}"
    lines = [head] + [f"TRAIN {t}" for t in m.train] + [f"TEST {t}" for t in m.test]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_manifest(data: bytes | str) -> SplitManifest:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    scheme = None
    extra: dict[str, str] = {}
    train, test = [], []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "M":
            if scheme is not None or len(tok) < 2:
                raise AnnotationSyntaxError("bad manifest header", lineno)
            scheme = tok[1]
            for kv in tok[2:]:
                k, _, v = kv.partition("=")
                if k not in ("held_out", "region") or not v:
                    raise AnnotationSyntaxError(f"bad manifest field {kv!r}", lineno)
                extra[k] = v
        elif scheme is None:
            raise AnnotationSyntaxError("first record must be the M header", lineno)
        elif tok[0] in ("TRAIN", "TEST") and len(tok) == 2:
            (train if tok[0] == "TRAIN" else test).append(tok[1])
        else:
            raise AnnotationSyntaxError(f"bad manifest record {line!r}", lineno)
    if scheme is None:
        raise AnnotationSyntaxError("missing M header")
    try:
        return SplitManifest(scheme, tuple(train), tuple(test),
                             held_out_region=extra.get("held_out"), region=extra.get("region"))
    except ValueError as exc:
        raise AnnotationValidationError(str(exc)) from None
