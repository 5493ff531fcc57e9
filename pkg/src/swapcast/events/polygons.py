"""Convex-closed subsets of a planar lattice grid.

A set ``S`` of grid points is convex-closed when ``S = hull(S) ∩ grid``.  Such
sets are in bijection with their sets of extreme points, i.e. with point sets in
strictly convex position (single points and segments included).  Enumeration
grows counterclockwise vertex chains from the lowest-then-leftmost vertex, so
each set is produced exactly once.

All geometry runs on integer lattice indices; convexity is invariant under the
per-axis scaling that maps indices to coordinates, so no rounding is involved.
"""

from __future__ import annotations

import functools
import itertools
import logging

import numpy as np

from ..agents import CapExceeded
from ..core import DimensionError, PredictionGrid
from .family import EventFamily, Polygon, make_family

log = logging.getLogger(__name__)

DEFAULT_CAP = 5_000_000


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _lattice(grid: PredictionGrid) -> list[tuple[int, int]]:
    if grid.free_dims != 2:
        raise DimensionError("polygon events need a grid with two free coordinates")
    if not grid.is_uniform:
        raise ValueError("polygon events need evenly spaced axes")
    return [(int(x), int(y)) for x, y in grid.lattice]


def _later(pts, v0):
    """Points after ``v0`` in (y, x) order, sorted counterclockwise around ``v0``."""
    later = [p for p in pts if (p[1], p[0]) > (v0[1], v0[0])]

    def cmp(a, b):
        c = _cross(v0, a, b)
        if c:
            return -1 if c > 0 else 1
        da = abs(a[0] - v0[0]) + abs(a[1] - v0[1])
        db = abs(b[0] - v0[0]) + abs(b[1] - v0[1])
        return (da > db) - (da < db)

    return sorted(later, key=functools.cmp_to_key(cmp))


def count_convex_closed_sets(grid_or_shape) -> int:
    """Number of convex-closed subsets, by dynamic programming over chain edges.

    ``f[p, c]`` counts the ways to finish a chain whose last edge is ``p -> c``
    (the chain closed at ``c`` counts as one).  Cost is O(n^4) array work.
    """
    if isinstance(grid_or_shape, PredictionGrid):
        pts = _lattice(grid_or_shape)
    else:
        nx, ny = grid_or_shape
        pts = [(x, y) for x in range(nx) for y in range(ny)]
    total = 0
    for v0 in pts:
        later = _later(pts, v0)
        L = len(later)
        total += 1 + L
        if L < 2:
            continue
        P = np.array(later, dtype=np.int64)
        rel = P - np.array(v0, dtype=np.int64)
        c0 = rel[:, None, 0] * rel[None, :, 1] - rel[:, None, 1] * rel[None, :, 0]
        d = P[None, :, :] - P[:, None, :]  # d[p, c] = P[c] - P[p]
        # turn[p, c, w] = cross(P[p], P[c], P[w])
        dw = P[None, :, :] - P[:, None, :]  # dw[c, w] = P[w] - P[c]
        turn = (d[:, :, None, 0] * dw[None, :, :, 1] - d[:, :, None, 1] * dw[None, :, :, 0]) > 0
        # close[c, w] = cross(P[c], P[w], v0) = cross(v0, P[c], P[w])
        close = c0 > 0
        f = np.zeros((L, L), dtype=np.int64)
        for c in range(L - 1, -1, -1):
            ws = np.flatnonzero(close[c])
            f[:, c] = 1
            if ws.size:
                f[:, c] += turn[:, c, ws].astype(np.int64) @ f[c, ws]
        total += int(f[close].sum())
    return total


def _masks_for_root(pts, v0_index, later_idx):
    """Closed-triangle bitmasks ``tri[a][b]`` for triangles (v0, a, b) with a left turn."""
    P = np.array(pts, dtype=np.int64)
    n = len(pts)
    v0 = P[v0_index]
    A = P[later_idx]
    # cross(o, a, p) for each a in later, p in all points
    rel_a = A - v0
    rel_p = P - v0
    side0 = rel_a[:, None, 0] * rel_p[None, :, 1] - rel_a[:, None, 1] * rel_p[None, :, 0]
    nbytes = (n + 7) // 8
    tri = {}
    L = len(later_idx)
    for ia in range(L):
        a = A[ia]
        # cross(a, b, p) for all b, p
        db = A - a
        dp = P - a
        side_ab = db[:, None, 0] * dp[None, :, 1] - db[:, None, 1] * dp[None, :, 0]
        ok_b = (rel_a[ia, 0] * rel_a[:, 1] - rel_a[ia, 1] * rel_a[:, 0]) > 0
        if not ok_b.any():
            continue
        bs = np.flatnonzero(ok_b)
        inside = (side0[ia][None, :] >= 0) & (side_ab[bs] >= 0) & (-side0[bs] >= 0)
        packed = np.packbits(inside, axis=1, bitorder="little")
        row = {}
        for j, b in enumerate(bs):
            row[int(b)] = int.from_bytes(packed[j].tobytes()[:nbytes], "little")
        tri[ia] = row
    # segment masks v0 -> a
    seg = []
    for ia in range(L):
        on_line = side0[ia] == 0
        t = rel_p @ rel_a[ia]
        on = on_line & (t >= 0) & (t <= rel_a[ia] @ rel_a[ia])
        seg.append(int.from_bytes(np.packbits(on, bitorder="little").tobytes()[:nbytes], "little"))
    return tri, seg


def enumerate_convex_closed(grid: PredictionGrid, cap: int | None = DEFAULT_CAP):
    """Yield ``(vertex_indices, bitmask)`` for every convex-closed subset of the grid.

    ``cap=None`` streams without the up-front size check.
    """
    pts = _lattice(grid)
    if cap is not None:
        n_sets = count_convex_closed_sets(grid)
        if n_sets > cap:
            raise CapExceeded(f"grid has {n_sets} convex-closed sets (cap {cap})", n_sets)
    index = {p: i for i, p in enumerate(pts)}
    for i0, v0 in enumerate(pts):
        yield (i0,), 1 << i0
        later = _later(pts, v0)
        later_idx = [index[p] for p in later]
        L = len(later)
        if L == 0:
            continue
        tri, seg = _masks_for_root(pts, i0, later_idx)
        for ia in range(L):
            yield (i0, later_idx[ia]), seg[ia]
        Q = later
        # chain state: indices into ``later``; mask is the union of fan triangles
        stack = []
        for ia, row in tri.items():
            for ib, m in row.items():
                stack.append(((ia, ib), m))
        while stack:
            chain, mask = stack.pop()
            yield (i0,) + tuple(later_idx[c] for c in chain), mask
            p, c = Q[chain[-2]], Q[chain[-1]]
            row = tri.get(chain[-1], {})
            for w, tm in row.items():
                # row holds w with cross(v0, c, w) > 0, which is also the closing turn at w
                if _cross(p, c, Q[w]) > 0:
                    stack.append((chain + (w,), mask | tm))


def _edge_successors(later, tri):
    """Fan edges ``(a, b)`` numbered, each with the edges ``(b, w)`` that keep the chain convex.

    Returns ``(edges, succ)``: ``edges[e] = (a, b, triangle mask)`` and
    ``succ[e]`` lists ``(e', triangle mask of e')`` for every legal next edge.
    """
    L = len(later)
    Q = np.array(later, dtype=np.int64)
    has = np.zeros((L, L), dtype=bool)
    edges, eid = [], {}
    for a, row in tri.items():
        for b, m in row.items():
            has[a, b] = True
            eid[a, b] = len(edges)
            edges.append((a, b, m))
    # turn[a, b, w] = cross(Q[a], Q[b], Q[w])
    ab = Q[None, :, :] - Q[:, None, :]
    turn = (ab[:, :, None, 0] * (Q[None, None, :, 1] - Q[:, None, None, 1])
            - ab[:, :, None, 1] * (Q[None, None, :, 0] - Q[:, None, None, 0]))
    ok = has[:, :, None] & has[None, :, :] & (turn > 0)
    succ = []
    for a, b, _ in edges:
        succ.append([(eid[b, w], tri[b][w]) for w in np.flatnonzero(ok[a, b]).tolist()])
    return edges, succ


def stream_convex_closed_masks(grid: PredictionGrid):
    """Bitmasks of every convex-closed subset, streamed without vertex tuples or a cap."""
    pts = _lattice(grid)
    index = {p: i for i, p in enumerate(pts)}
    for i0, v0 in enumerate(pts):
        yield 1 << i0
        later = _later(pts, v0)
        if not later:
            continue
        later_idx = [index[p] for p in later]
        tri, seg = _masks_for_root(pts, i0, later_idx)
        yield from seg[: len(later)]
        edges, succ = _edge_successors(later, tri)
        stack = [(e, m) for e, (_, _, m) in enumerate(edges)]
        pop, extend = stack.pop, stack.extend
        while stack:
            e, mask = pop()
            yield mask
            extend([(e2, mask | tm) for e2, tm in succ[e]])


def masks_to_matrix(masks: list[int], n: int) -> np.ndarray:
    nbytes = (n + 7) // 8
    if not masks:
        return np.zeros((0, n), dtype=bool)
    buf = b"".join(m.to_bytes(nbytes, "little") for m in masks)
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(len(masks), nbytes)
    return np.unpackbits(arr, axis=1, bitorder="little")[:, :n].astype(bool)


def convex_polygon_events_2d(grid: PredictionGrid, cap: int = DEFAULT_CAP) -> EventFamily:
    """One event per convex-closed set of grid points, degenerate hulls included."""
    pts = _lattice(grid)
    masks, labels = [], []
    for verts, mask in enumerate_convex_closed(grid, cap):
        masks.append(mask)
        labels.append(Polygon(tuple(pts[i] for i in verts)))
    log.info("enumerated %d convex-closed sets on a %s grid", len(masks), grid.shape)
    return make_family("polygons", grid, masks_to_matrix(masks, grid.size), labels, assume_distinct=True)


# --- independent brute-force validator -------------------------------------------

def lattice_hull(points) -> list[tuple[int, int]]:
    """Counterclockwise hull vertices (monotone chain), collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return hull


def in_hull(hull, p) -> bool:
    if len(hull) == 1:
        return p == hull[0]
    if len(hull) == 2:
        a, b = hull
        if _cross(a, b, p) != 0:
            return False
        return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    return all(_cross(hull[i], hull[(i + 1) % len(hull)], p) >= 0 for i in range(len(hull)))


def is_convex_closed(subset, lattice) -> bool:
    """``subset`` (indices) equals the lattice points inside its convex hull."""
    subset = set(int(i) for i in subset)
    if not subset:
        return False
    pts = [tuple(int(c) for c in lattice[i]) for i in range(len(lattice))]
    hull = lattice_hull([pts[i] for i in subset])
    return all((i in subset) == in_hull(hull, pts[i]) for i in range(len(pts)))


def polygon_subset_oracle(grid: PredictionGrid) -> int:
    """Count convex-closed sets by checking all 2^n - 1 nonempty subsets."""
    return len(oracle_convex_closed_sets(grid))


def oracle_convex_closed_sets(grid: PredictionGrid) -> set[frozenset[int]]:
    """Every convex-closed set (as point indices), found by exhaustive subset search."""
    if grid.free_dims != 2:
        raise DimensionError("oracle needs a grid with two free coordinates")
    n = grid.size
    if n > 16:
        raise ValueError(f"oracle limited to 16 points, grid has {n}")
    pts = [(int(x), int(y)) for x, y in grid.lattice]
    seen = set()
    for r in range(1, n + 1):
        for subset in itertools.combinations(range(n), r):
            hull = lattice_hull([pts[i] for i in subset])
            members = frozenset(i for i in range(n) if in_hull(hull, pts[i]))
            if members == frozenset(subset):
                seen.add(members)
    return seen
