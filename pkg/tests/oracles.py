"""Independent reference computations used by several test modules."""

import itertools

import numpy as np


def liang_barsky(p, q, r0, r1, c0, c1):
    """Clip segment pq to the closed rectangle; returns (t0, t1) or None."""
    t0, t1 = 0.0, 1.0
    dr, dc = q[0] - p[0], q[1] - p[1]
    for d, lo_gap, hi_gap in ((dr, p[0] - r0, r1 - p[0]), (dc, p[1] - c0, c1 - p[1])):
        for pk, qk in ((-d, lo_gap), (d, hi_gap)):
            if pk == 0:
                if qk < 0:
                    return None
                continue
            t = qk / pk
            if pk < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
    return (t0, t1) if t0 <= t1 else None


def visited_tiles(p, q, rb, cb):
    """Tiles a segment occupies under the lower-index rule for border-collinear pieces."""
    def home(x, bounds):
        i = int(np.searchsorted(bounds, x, side="left")) - 1
        return min(max(i, 0), len(bounds) - 2)

    tiles = {(home(p[0], rb), home(p[1], cb)), (home(q[0], rb), home(q[1], cb))}
    for i, j in itertools.product(range(len(rb) - 1), range(len(cb) - 1)):
        clip = liang_barsky(p, q, rb[i], rb[i + 1], cb[j], cb[j + 1])
        if clip is None or clip[1] - clip[0] <= 1e-12:
            continue
        a = (p[0] + clip[0] * (q[0] - p[0]), p[1] + clip[0] * (q[1] - p[1]))
        b = (p[0] + clip[1] * (q[0] - p[0]), p[1] + clip[1] * (q[1] - p[1]))
        # pieces lying on this tile's top or left border belong to the neighbour
        if i > 0 and a[0] == b[0] == rb[i]:
            continue
        if j > 0 and a[1] == b[1] == cb[j]:
            continue
        tiles.add((i, j))
    return tiles


def expected_en_count(scene, n_r, n_c):
    from gridtracer.annio import tile_bounds
    from gridtracer.core import centroid

    rows, cols = scene.raster_shape
    rb, cb = tile_bounds(rows, n_r), tile_bounds(cols, n_c)
    g = scene.graph
    total = 0
    for a, b in g.edges:
        p, q = tuple(centroid(g.box(a))), tuple(centroid(g.box(b)))
        total += 2 * (len(visited_tiles(p, q, rb, cb)) - 1)
    return total


def isomorphic_with_positions(g1, g2, tol=1e-6):
    """Pair nodes by (kind, centroid) within tol, then compare edge sets."""
    from gridtracer.core import centroid

    a = [(nid, b) for nid, b in g1.nodes]
    b = [(nid, bx) for nid, bx in g2.nodes]
    if len(a) != len(b):
        return False, float("inf")
    mapping = {}
    drift = 0.0
    used = set()
    for nid, box in a:
        ca = centroid(box)
        best, bd = None, float("inf")
        for nid2, box2 in b:
            if nid2 in used or box2.kind != box.kind:
                continue
            cb = centroid(box2)
            d = float(np.hypot(ca.row - cb.row, ca.col - cb.col))
            if d < bd:
                best, bd = nid2, d
        if best is None or bd > tol:
            return False, bd
        used.add(best)
        mapping[nid] = best
        drift = max(drift, bd)
    e1 = {frozenset((mapping[x], mapping[y])) for x, y in g1.edges}
    e2 = {frozenset(e) for e in g2.edges}
    return e1 == e2, drift


def pr_curve_ap(labels, n_gt):
    """AP from an explicit PR-point enumeration and right-to-left envelope."""
    if n_gt == 0:
        return 1.0 if not labels else 0.0
    ranked = sorted(labels, key=lambda x: -x[0])
    tp = fp = 0
    points = []
    for _, ok in ranked:
        tp += ok
        fp += not ok
        points.append((tp / n_gt, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for k, (r, _) in enumerate(points):
        env = max(p for _, p in points[k:])
        ap += (r - prev_r) * env
        prev_r = r
    return ap


def greedy_labels(preds, gts, tau_m=3.0, mpp=0.3):
    """Plain-loop reimplementation of confidence-ordered nearest-free linking."""
    def cen(b):
        r, c, h, w = b.rchw
        return r + h / 2.0, c + w / 2.0

    order = sorted(range(len(preds)), key=lambda i: (-(preds[i].confidence if preds[i].confidence is not None
                                                         else 1.0), preds[i].rchw, i))
    free = set(range(len(gts)))
    labels = []
    for i in order:
        pr, pc = cen(preds[i])
        best, bd = None, None
        for j in sorted(free):
            gr, gc = cen(gts[j])
            d = ((pr - gr) ** 2 + (pc - gc) ** 2) ** 0.5 * mpp
            if d <= tau_m and (bd is None or d < bd):
                best, bd = j, d
        if best is not None:
            free.discard(best)
        conf = preds[i].confidence if preds[i].confidence is not None else 1.0
        labels.append((conf, best is not None))
    return labels
