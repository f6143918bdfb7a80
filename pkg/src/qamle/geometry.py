"""Finite point-cloud domains, balls, discrete boundaries and curves.

A continuous compact domain is replaced by a finite cloud of points with
fill distance ``h``.  Set relations that are meaningless on a finite set
(boundaries, closed half-balls) carry an ``h``-scale tolerance.

Index sets are always returned as sorted ``int`` numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import DisconnectedCurve, EmptyBoundary, EmptySet

DENSE_LIMIT = 4096
DEFAULT_CB = 1.5
# relative slack used when comparing floating distances for ties
_TIE_RTOL = 1e-12


class DiscreteDomain:
    """Finite metric domain with a designated constraint subset.

    Parameters
    ----------
    points : (n, d) array_like
        Point coordinates.  All points must be distinct.
    metric : {"euclidean", "graph"}
        ``"graph"`` uses shortest-path distances on the symmetrised
        k-nearest-neighbour graph with Euclidean edge lengths.
    k_neighbors : int, optional
        Neighbour count for the graph metric.
    constraints : array_like of int
        Indices of the constraint set E.  Must be nonempty.
    h : float, optional
        Mesh scale.  Defaults to the largest nearest-neighbour distance,
        the smallest value for which every closed ball of radius ``h``
        around a domain point holds a second point.
    """

    def __init__(self, points, metric="euclidean", k_neighbors=None,
                 constraints=None, h=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("domain points must be distinct")
        self.points = pts
        self.points.setflags(write=False)

        if metric not in ("euclidean", "graph"):
            raise ValueError(f"unknown metric {metric!r}")
        self.metric_kind = metric
        self.k_neighbors = None
        self._graph = None
        if metric == "graph":
            if k_neighbors is None or int(k_neighbors) < 1:
                raise ValueError("graph metric needs k_neighbors >= 1")
            self.k_neighbors = int(k_neighbors)
            self._graph = self._knn_graph()
            ncomp, _ = csgraph.connected_components(self._graph, directed=False)
            if ncomp != 1:
                raise ValueError(
                    f"k-NN graph with k={self.k_neighbors} has {ncomp} components")

        if constraints is None:
            raise ValueError("constraint set E must be given")
        E = np.unique(np.asarray(constraints, dtype=int).ravel())
        if E.size == 0:
            raise ValueError("constraint set E must be nonempty")
        if E[0] < 0 or E[-1] >= self.n:
            raise IndexError("constraint index out of range")
        self.constraints = E
        self.constraints.setflags(write=False)
        self._is_constraint = np.zeros(self.n, dtype=bool)
        self._is_constraint[E] = True

        nn = self._nearest_neighbor_distance()
        if h is None:
            h = nn if self.n > 1 else 1.0
        h = float(h)
        if not h > 0:
            raise ValueError("h must be positive")
        if self.n > 1 and h < nn * (1 - 1e-12):
            raise ValueError(
                f"h={h} does not bound the fill distance (needs >= {nn})")
        self.h = h
        self._dense = None
        self._row_cache = {}

    # -- basic shape -----------------------------------------------------
    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def is_constraint(self, i):
        return bool(self._is_constraint[i])

    @property
    def constraint_mask(self):
        return self._is_constraint.copy()

    def __repr__(self):
        return (f"DiscreteDomain(n={self.n}, dim={self.dim}, "
                f"metric={self.metric_kind!r}, h={self.h:g}, |E|={len(self.constraints)})")

    # -- metric --------------------------------------------------------------
    @cached_property
    def kdtree(self):
        return cKDTree(self.points)

    def _knn_graph(self):
        k = min(self.k_neighbors, self.n - 1)
        dist, idx = self.kdtree.query(self.points, k=k + 1)
        rows = np.repeat(np.arange(self.n), k)
        cols = idx[:, 1:].ravel()
        w = dist[:, 1:].ravel()
        g = sparse.coo_matrix((w, (rows, cols)), shape=(self.n, self.n)).tocsr()
        # symmetrise: an edge exists if either endpoint lists the other
        return g.maximum(g.T).tocsr()

    def _nearest_neighbor_distance(self):
        if self.n < 2:
            return 0.0
        d, _ = self.kdtree.query(self.points, k=2)
        return float(d[:, 1].max())

    def _compute_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        if self.metric_kind == "euclidean":
            diff = self.points[rows][:, None, :] - self.points[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return csgraph.dijkstra(self._graph, directed=False, indices=rows)

    @property
    def distances(self):
        """Dense (n, n) distance matrix, built once and cached."""
        if self._dense is None:
            D = np.empty((self.n, self.n))
            step = 512
            for s in range(0, self.n, step):
                rows = np.arange(s, min(s + step, self.n))
                D[rows] = self._compute_rows(rows)
            if self.metric_kind == "graph":
                D = np.minimum(D, D.T)
            np.fill_diagonal(D, 0.0)
            D.setflags(write=False)
            self._dense = D
        return self._dense

    def dist_rows(self, rows):
        """Distances from each index in ``rows`` to every domain point."""
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        self._check_index(rows)
        if self.n <= DENSE_LIMIT or self._dense is not None:
            return self.distances[rows]
        out = np.empty((len(rows), self.n))
        for r, i in enumerate(rows):
            i = int(i)
            if i not in self._row_cache:
                if len(self._row_cache) > 256:
                    self._row_cache.clear()
                self._row_cache[i] = self._compute_rows([i])[0]
            out[r] = self._row_cache[i]
        return out

    def dist_block(self, I, J):
        I = np.atleast_1d(np.asarray(I, dtype=int))
        J = np.atleast_1d(np.asarray(J, dtype=int))
        self._check_index(J)
        return self.dist_rows(I)[:, J]

    def _check_index(self, idx):
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"point index out of range [0, {self.n})")

    @cached_property
    def diameter(self):
        if self.n <= DENSE_LIMIT:
            return float(self.distances.max())
        # two-sweep lower bound, within a factor 2 of the true diameter
        far = int(np.argmax(self.dist_rows([0])[0]))
        return float(self.dist_rows([far])[0].max())

    def graph_path(self, i, j):
        """Vertex sequence of a shortest graph path from i to j."""
        _, pred = csgraph.dijkstra(self._graph, directed=False, indices=int(i),
                                   return_predecessors=True)
        path = [int(j)]
        while path[-1] != i:
            p = pred[path[-1]]
            if p < 0:
                raise DisconnectedCurve(f"no graph path from {i} to {j}")
            path.append(int(p))
        return path[::-1]

    def nearest_point(self, coord):
        _, idx = self.kdtree.query(np.asarray(coord, dtype=float))
        return int(idx)


@dataclass(frozen=True)
class BallUnion:
    """A finite union of open balls centred at domain points."""

    balls: tuple

    def __post_init__(self):
        balls = tuple((int(c), float(r)) for c, r in self.balls)
        if not balls:
            raise ValueError("a ball union needs at least one ball")
        if any(r <= 0 for _, r in balls):
            raise ValueError("ball radii must be positive")
        object.__setattr__(self, "balls", balls)

    @property
    def count(self):
        return len(self.balls)

    def satisfies(self, rho, n0):
        """Membership test for the admissible family (N <= n0, radii >= rho)."""
        return self.count <= n0 and all(r >= rho for _, r in self.balls)

    def to_json(self):
        return [[c, r] for c, r in self.balls]

    @classmethod
    def from_json(cls, obj):
        return cls(tuple((c, r) for c, r in obj))


@dataclass(frozen=True)
class CurveSample:
    """Ordered domain points from ``indices[0]`` to ``indices[-1]``."""

    indices: np.ndarray

    @property
    def start(self):
        return int(self.indices[0])

    @property
    def end(self):
        return int(self.indices[-1])

    def __len__(self):
        return len(self.indices)


def distance(dom, i, j):
    dom._check_index([i, j])
    return float(dom.dist_rows([i])[0, j])


def midpoint(dom, i, j):
    """Domain point minimising ``max(d(i, m), d(j, m))``; lowest index on ties."""
    if i == j:
        raise ValueError("midpoint needs two distinct points")
    D = dom.dist_rows([i, j])
    cost = np.maximum(D[0], D[1])
    best = cost.min()
    tied = np.flatnonzero(cost <= best + _TIE_RTOL * max(best, 1.0))
    return int(tied[0])


def ball_members(dom, center, r):
    """Indices at distance strictly less than ``r`` from ``center``."""
    if not r > 0:
        raise ValueError("ball radius must be positive")
    return np.flatnonzero(dom.dist_rows([center])[0] < r)


def half_ball_members(dom, i, j):
    """Closed half-ball around the midpoint of (i, j), inflated by ``h``."""
    m = midpoint(dom, i, j)
    rad = 0.5 * distance(dom, i, j) + dom.h
    return np.flatnonzero(dom.dist_rows([m])[0] <= rad)


def interior(dom, omega):
    """Union of the open-ball member sets of ``omega``."""
    mask = np.zeros(dom.n, dtype=bool)
    for c, r in omega.balls:
        mask[ball_members(dom, c, r)] = True
    return np.flatnonzero(mask)


def region_boundary(dom, region, c_b=DEFAULT_CB):
    """Points outside ``region`` within ``c_b * h`` of it."""
    region = np.asarray(region, dtype=int)
    if region.size == 0:
        raise ValueError("region must be nonempty")
    outside = np.ones(dom.n, dtype=bool)
    outside[region] = False
    cand = np.flatnonzero(outside)
    if cand.size == 0:
        raise EmptyBoundary("region covers the whole domain")
    dmin = dom.dist_block(region, cand).min(axis=0)
    bnd = cand[dmin <= c_b * dom.h * (1 + _TIE_RTOL)]
    if bnd.size == 0:
        raise EmptyBoundary(f"no point within {c_b}*h of the region")
    return bnd


def discrete_boundary(dom, omega, c_b=DEFAULT_CB):
    return region_boundary(dom, interior(dom, omega), c_b)


def contains_ball(dom, region, center, r):
    members = ball_members(dom, center, r)
    return bool(np.isin(members, np.asarray(region, dtype=int)).all())


def broken_segment(x, c, y, n):
    """``n`` points along [x, c] U [c, y], split by leg length, endpoints kept."""
    x, c, y = (np.asarray(v, dtype=float) for v in (x, c, y))
    l1, l2 = np.linalg.norm(c - x), np.linalg.norm(y - c)
    total = l1 + l2
    if total == 0:
        return np.repeat(x[None], n, axis=0)
    s = np.linspace(0.0, total, n)
    out = np.empty((n, x.size))
    first = s <= l1
    if l1 > 0:
        out[first] = x + (s[first, None] / l1) * (c - x)
    else:
        out[first] = x
    if l2 > 0:
        out[~first] = c + ((s[~first, None] - l1) / l2) * (y - c)
    return out


def _monotone_filter(dom, raw, i, j):
    """Keep samples whose distance from i strictly increases, ending at j."""
    di = dom.dist_rows([i])[0]
    dij = di[j]
    allowed = np.zeros(dom.n, dtype=bool)
    allowed[half_ball_members(dom, i, j)] = True
    kept = [int(i)]
    for p in raw:
        p = int(p)
        if p in (i, j) or not allowed[p]:
            continue
        if di[kept[-1]] < di[p] < dij:
            kept.append(p)
    kept.append(int(j))
    return np.asarray(kept, dtype=int)


def chasles_curve(dom, i, j, via=None):
    """Monotone curve sample from i to j, optionally broken at ``via``.

    Euclidean domains sample the straight (or broken) path at resolution
    ``h / 2`` and snap to the nearest domain points; graph domains follow
    shortest paths.  Samples that would break the strict increase of
    ``d(i, .)`` are dropped.
    """
    if i == j:
        raise ValueError("curve endpoints must differ")
    dom._check_index([i, j])
    if via is not None:
        via = int(via)
        dom._check_index([via])
        if via not in half_ball_members(dom, i, j):
            raise DisconnectedCurve(
                f"via point {via} leaves the inflated half-ball of ({i}, {j})")
    if dom.metric_kind == "graph":
        if via is None or via in (i, j):
            raw = dom.graph_path(i, j)
        else:
            raw = dom.graph_path(i, via) + dom.graph_path(via, j)[1:]
    else:
        P = dom.points
        waypoints = [P[i]] if via is None else [P[i], P[via]]
        waypoints.append(P[j])
        step = dom.h / 2
        samples = []
        for a, b in zip(waypoints[:-1], waypoints[1:]):
            m = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
            t = np.linspace(0.0, 1.0, m + 1)[:, None]
            samples.append(a + t * (b - a))
        _, raw = dom.kdtree.query(np.vstack(samples))
        raw = list(dict.fromkeys(int(r) for r in raw))
    kept = _monotone_filter(dom, raw, i, j)
    if kept[0] != i or kept[-1] != j:
        raise DisconnectedCurve(f"no monotone sample from {i} to {j}")
    return CurveSample(kept)


def hausdorff_distance(dom, A, B):
    A = np.atleast_1d(np.asarray(A, dtype=int))
    B = np.atleast_1d(np.asarray(B, dtype=int))
    if A.size == 0 or B.size == 0:
        raise EmptySet("Hausdorff distance needs two nonempty sets")
    D = dom.dist_block(A, B)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def grid_domain(shape, lower=0.0, upper=1.0, constraints=None, **kw):
    """Regular grid on the box ``[lower, upper]`` with ``shape`` points per axis.

    ``lower`` and ``upper`` are scalars or per-axis sequences.

    Points are ordered with the last axis varying fastest.  ``constraints``
    defaults to index 0.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (len(shape),))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (len(shape),))
    axes = [np.linspace(a, b, s) for a, b, s in zip(lo, hi, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if constraints is None:
        constraints = [0]
    return DiscreteDomain(pts, constraints=constraints, **kw)
