"""Marching squares on a rectilinear lattice, plus a point-in-polygon test."""

from __future__ import annotations

import numpy as np


def _cut(p, q, vp, vq):
    w = vp / (vp - vq)
    return p + w * (q - p)


def marching_squares(xs, ys, values, level: float = 0.0) -> list[np.ndarray]:
    """Polylines of ``values == level`` with ``values[i, j]`` sampled at ``(xs[i], ys[j])``.

    Crossings are placed by linear interpolation along cell edges. The inside
    of the set is ``values <= level``. Saddle cells (diagonal sign pattern) are
    resolved with the cell average: if it is inside, the two inside corners are
    joined through the cell centre. Closed polylines repeat their first point
    at the end.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    v = np.asarray(values, dtype=float) - level
    if v.shape != (len(xs), len(ys)):
        raise ValueError("values must have shape (len(xs), len(ys))")
    if min(v.shape) < 2:
        raise ValueError("lattice needs at least 2 nodes per dimension")
    inside = v <= 0

    points: dict[tuple, np.ndarray] = {}
    links: dict[tuple, list[tuple]] = {}

    def edge_point(key):
        if key not in points:
            kind, i, j = key
            if kind == "x":
                p, q = np.array([xs[i], ys[j]]), np.array([xs[i + 1], ys[j]])
                points[key] = _cut(p, q, v[i, j], v[i + 1, j])
            else:
                p, q = np.array([xs[i], ys[j]]), np.array([xs[i], ys[j + 1]])
                points[key] = _cut(p, q, v[i, j], v[i, j + 1])
        return key

    def link(a, b):
        links.setdefault(a, []).append(b)
        links.setdefault(b, []).append(a)

    nx, ny = v.shape
    ii, jj = np.nonzero(
        (inside[:-1, :-1] != inside[1:, :-1]) | (inside[:-1, :-1] != inside[:-1, 1:])
        | (inside[:-1, :-1] != inside[1:, 1:])
    )
    for i, j in zip(ii.tolist(), jj.tolist()):
        c = (inside[i, j], inside[i + 1, j], inside[i + 1, j + 1], inside[i, j + 1])
        # edges: 0 bottom (c0-c1), 1 right (c1-c2), 2 top (c3-c2), 3 left (c0-c3)
        keys = (("x", i, j), ("y", i + 1, j), ("x", i, j + 1), ("y", i, j))
        crossed = [k for k, (a, b) in enumerate(((0, 1), (1, 2), (3, 2), (0, 3))) if c[a] != c[b]]
        if len(crossed) == 2:
            link(edge_point(keys[crossed[0]]), edge_point(keys[crossed[1]]))
        elif len(crossed) == 4:
            centre_inside = (v[i, j] + v[i + 1, j] + v[i + 1, j + 1] + v[i, j + 1]) / 4.0 <= 0
            if centre_inside == c[0]:
                # c0 and c2 connected through the centre; isolate c1 and c3
                link(edge_point(keys[0]), edge_point(keys[1]))
                link(edge_point(keys[2]), edge_point(keys[3]))
            else:
                link(edge_point(keys[3]), edge_point(keys[0]))
                link(edge_point(keys[1]), edge_point(keys[2]))

    return _chain(points, links)


def _chain(points, links) -> list[np.ndarray]:
    seen: set = set()
    lines = []
    # open chains start at degree-1 ends; closed loops are picked up afterwards
    starts = [k for k, nb in links.items() if len(nb) == 1] + list(links)
    for start in starts:
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [n for n in links[cur] if n != prev and n not in seen]
            if not nxt:
                if len(chain) > 2 and start in links[cur] and prev != start:
                    chain.append(start)
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)
        lines.append(np.array([points[k] for k in chain]))
    return lines


def point_in_polygon(point, polygon) -> bool:
    """Even-odd ray casting; ``polygon`` is an ``(M, 2)`` vertex list."""
    x, y = float(point[0]), float(point[1])
    P = np.asarray(polygon, dtype=float)
    x0, y0 = P[:, 0], P[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return bool(np.count_nonzero(crosses & (x < xint)) % 2)
