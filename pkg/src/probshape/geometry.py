"""Closed polygonal-chain boundaries, closest-point projection and the
exact tracking-data map.

A boundary is a counter-clockwise cyclic vertex list; edge j runs from
vertex j to vertex j+1 (mod k) and carries a constant unit outer normal.
Boundaries are immutable after construction; vertex updates build new
instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "GeometryError",
    "Rectangle",
    "PolygonalBoundary",
    "ChainPoint",
    "TrackingData",
    "signed_area",
    "contains_exact",
    "project_to_boundary",
    "project_points",
    "regular_polygon",
    "ellipse_polygon",
]

EDGE_BAND = 1e-12  # membership tolerance: points this close to an edge count as inside


class GeometryError(ValueError):
    """Raised for degenerate or self-intersecting chains."""


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned hold-all rectangle."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise GeometryError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((n, 2))
        u[:, 0] = self.xmin + u[:, 0] * (self.xmax - self.xmin)
        u[:, 1] = self.ymin + u[:, 1] * (self.ymax - self.ymin)
        return u

    def contains(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return (
            (X[:, 0] >= self.xmin)
            & (X[:, 0] <= self.xmax)
            & (X[:, 1] >= self.ymin)
            & (X[:, 1] <= self.ymax)
        )


class ChainPoint(NamedTuple):
    """A point on the chain with its projection tag.

    Exactly one of edge / vertex is set; the other is -1.  Edge tags carry
    the local coordinate t in [0, 1] from the edge start vertex.
    """

    point: np.ndarray
    edge: int
    vertex: int
    t: float


def _shoelace(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized proper/improper segment intersection test."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
            b[..., 1] - a[..., 1]
        ) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))

    def on_seg(a, b, c):
        collinear = orient(a, b, c) == 0.0
        within = (
            (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
        )
        return collinear & within

    touching = on_seg(q1, q2, p1) | on_seg(q1, q2, p2) | on_seg(p1, p2, q1) | on_seg(p1, p2, q2)
    return proper | touching


@dataclass(frozen=True)
class PolygonalBoundary:
    """Closed simple polygonal chain, counter-clockwise."""

    vertices: np.ndarray
    edge_vectors: np.ndarray = field(init=False, repr=False)
    edge_lengths: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)

    def __init__(self, vertices, normalize_orientation: bool = True):
        V = np.array(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or V.shape[0] < 3:
            raise GeometryError("need at least 3 planar vertices")
        if not np.all(np.isfinite(V)):
            raise GeometryError("non-finite vertex coordinates")
        area = _shoelace(V)
        if area == 0.0:
            raise GeometryError("degenerate chain with zero area")
        if area < 0.0:
            if not normalize_orientation:
                raise GeometryError("chain orientation flipped (negative signed area)")
            V = V[::-1].copy()
        E = np.roll(V, -1, axis=0) - V
        L = np.hypot(E[:, 0], E[:, 1])
        if np.any(L == 0.0):
            raise GeometryError("coincident consecutive vertices")
        # outward normal of a CCW chain: edge direction rotated by -90 degrees
        N = np.column_stack((E[:, 1], -E[:, 0])) / L[:, None]
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "edge_vectors", E)
        object.__setattr__(self, "edge_lengths", L)
        object.__setattr__(self, "normals", N)
        self._check_simple()

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def _check_simple(self) -> None:
        V = self.vertices
        k = V.shape[0]
        P1 = V
        P2 = np.roll(V, -1, axis=0)
        i, j = np.triu_indices(k, k=1)
        adjacent = (j - i == 1) | ((i == 0) & (j == k - 1))
        i, j = i[~adjacent], j[~adjacent]
        if i.size == 0:
            return
        hit = _segments_intersect(P1[i], P2[i], P1[j], P2[j])
        if np.any(hit):
            a, b = int(i[np.argmax(hit)]), int(j[np.argmax(hit)])
            raise GeometryError(f"chain self-intersects: edges {a} and {b} cross")

    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())


def signed_area(boundary_or_vertices) -> float:
    """Shoelace signed area; positive for counter-clockwise chains."""
    if isinstance(boundary_or_vertices, PolygonalBoundary):
        return _shoelace(boundary_or_vertices.vertices)
    return _shoelace(np.asarray(boundary_or_vertices, dtype=float))


def _distance_to_chain(boundary: PolygonalBoundary, X: np.ndarray) -> np.ndarray:
    P = boundary.vertices
    E = boundary.edge_vectors
    L2 = boundary.edge_lengths**2
    diff = X[:, None, :] - P[None, :, :]  # (n, k, 2)
    t = np.clip(np.einsum("nkd,kd->nk", diff, E) / L2, 0.0, 1.0)
    foot = P[None, :, :] + t[:, :, None] * E[None, :, :]
    d = np.linalg.norm(X[:, None, :] - foot, axis=2)
    return d.min(axis=1)


def contains_exact(boundary: PolygonalBoundary, x) -> bool | np.ndarray:
    """Even-odd point-in-polygon test, conservative near edges.

    Points within EDGE_BAND of the chain are classified as inside so that
    exit detection cannot lose points sitting numerically on the boundary.
    """
    X = np.asarray(x, dtype=float)
    scalar = X.ndim == 1
    X = np.atleast_2d(X)
    V = boundary.vertices
    xi = V[:, 0]
    yi = V[:, 1]
    xj = np.roll(xi, 1)
    yj = np.roll(yi, 1)
    px = X[:, 0][:, None]
    py = X[:, 1][:, None]
    straddles = (yi[None, :] > py) != (yj[None, :] > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = (xj - xi)[None, :] * (py - yi[None, :]) / (yj - yi)[None, :] + xi[None, :]
    crossing = straddles & (px < xcross)
    inside = crossing.sum(axis=1) % 2 == 1
    near = _distance_to_chain(boundary, X) <= EDGE_BAND
    out = inside | near
    return bool(out[0]) if scalar else out


def project_points(boundary: PolygonalBoundary, x) -> list[ChainPoint]:
    """Closest points on the chain for a batch of query points.

    Per edge the closest point is the orthogonal projection onto the edge
    line clamped to the segment, which on edge interiors coincides with
    removing the normal component relative to the edge's vertices.  Queries
    whose minimizer is a segment endpoint fall in a vertex normal cone and
    are tagged with that vertex.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    P = boundary.vertices
    E = boundary.edge_vectors
    L2 = boundary.edge_lengths**2
    k = P.shape[0]
    diff = X[:, None, :] - P[None, :, :]
    t_raw = np.einsum("nkd,kd->nk", diff, E) / L2
    t = np.clip(t_raw, 0.0, 1.0)
    foot = P[None, :, :] + t[:, :, None] * E[None, :, :]
    d2 = np.sum((X[:, None, :] - foot) ** 2, axis=2)
    best = d2.argmin(axis=1)
    rows = np.arange(X.shape[0])
    tb = t[rows, best]
    pts = foot[rows, best]
    out: list[ChainPoint] = []
    for n in range(X.shape[0]):
        e = int(best[n])
        tn = float(tb[n])
        if tn <= 0.0:
            out.append(ChainPoint(P[e].copy(), -1, e, 0.0))
        elif tn >= 1.0:
            out.append(ChainPoint(P[(e + 1) % k].copy(), -1, (e + 1) % k, 1.0))
        else:
            out.append(ChainPoint(pts[n].copy(), e, -1, tn))
    return out


def project_to_boundary(boundary: PolygonalBoundary, x) -> ChainPoint:
    """Closest point on the chain for a single query point."""
    return project_points(boundary, np.asarray(x, dtype=float)[None, :])[0]


def regular_polygon(center, radius: float, k: int) -> PolygonalBoundary:
    """Regular k-gon inscribed in the circle of given center and radius."""
    theta = 2.0 * np.pi * np.arange(k) / k
    c = np.asarray(center, dtype=float)
    V = c + radius * np.column_stack((np.cos(theta), np.sin(theta)))
    return PolygonalBoundary(V)


@dataclass(frozen=True)
class TrackingData:
    """Target potential: the exact state of the reference ellipse, extended
    by zero outside it.

    z(x) = a^2 b^2 / (2 (a^2 + b^2)) * (1 - (x1-c1)^2/a^2 - (x2-c2)^2/b^2)
    inside the ellipse, 0 outside.  Inside the ellipse -laplacian(z) = 1;
    z vanishes continuously on the ellipse boundary.
    """

    center: tuple[float, float]
    semi_major: float
    semi_minor: float

    def __post_init__(self):
        if not (self.semi_major > self.semi_minor > 0.0):
            raise GeometryError("require semi_major > semi_minor > 0")

    @property
    def amplitude(self) -> float:
        a, b = self.semi_major, self.semi_minor
        return a * a * b * b / (2.0 * (a * a + b * b))

    def _quadratic(self, X: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        return ((X[:, 0] - cx) / self.semi_major) ** 2 + ((X[:, 1] - cy) / self.semi_minor) ** 2

    def __call__(self, x) -> float | np.ndarray:
        X = np.asarray(x, dtype=float)
        scalar = X.ndim == 1
        X = np.atleast_2d(X)
        q = self._quadratic(X)
        z = self.amplitude * (1.0 - q)
        z[q > 1.0] = 0.0
        return float(z[0]) if scalar else z

    def contains(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return self._quadratic(X) <= 1.0

    def segment_crossings(self, p, q) -> list[float]:
        """Parameters t in (0, 1) where segment p + t (q - p) meets the
        ellipse boundary.  Used to split quadrature cells at the kink."""
        p = np.asarray(p, dtype=float)
        d = np.asarray(q, dtype=float) - p
        cx, cy = self.center
        a, b = self.semi_major, self.semi_minor
        ux, uy = (p[0] - cx) / a, (p[1] - cy) / b
        vx, vy = d[0] / a, d[1] / b
        A = vx * vx + vy * vy
        B = 2.0 * (ux * vx + uy * vy)
        C = ux * ux + uy * uy - 1.0
        if A == 0.0:
            return []
        disc = B * B - 4.0 * A * C
        if disc <= 0.0:
            return []
        r = np.sqrt(disc)
        ts = sorted(((-B - r) / (2.0 * A), (-B + r) / (2.0 * A)))
        return [float(t) for t in ts if 1e-12 < t < 1.0 - 1e-12]

    def boundary_points(self, n: int) -> np.ndarray:
        """n points on the ellipse at equispaced parameter angles."""
        theta = 2.0 * np.pi * np.arange(n) / n
        cx, cy = self.center
        return np.column_stack(
            (cx + self.semi_major * np.cos(theta), cy + self.semi_minor * np.sin(theta))
        )

    def boundary_distance(self, x) -> np.ndarray:
        """Distance from points to the ellipse boundary curve.

        Dense parameter sampling followed by local golden-section refinement;
        accurate to ~1e-10, plenty for convergence diagnostics.
        """
        X = np.atleast_2d(np.asarray(x, dtype=float))
        cx, cy = self.center
        a, b = self.semi_major, self.semi_minor

        def pts(theta):
            return np.column_stack((cx + a * np.cos(theta), cy + b * np.sin(theta)))

        grid = np.linspace(0.0, 2.0 * np.pi, 512, endpoint=False)
        G = pts(grid)
        d2 = ((X[:, None, :] - G[None, :, :]) ** 2).sum(axis=2)
        i0 = d2.argmin(axis=1)
        lo = grid[i0] - 2.0 * np.pi / 512
        hi = grid[i0] + 2.0 * np.pi / 512
        phi = (np.sqrt(5.0) - 1.0) / 2.0
        for _ in range(60):
            m1 = hi - phi * (hi - lo)
            m2 = lo + phi * (hi - lo)
            f1 = ((X - pts(m1)) ** 2).sum(axis=1)
            f2 = ((X - pts(m2)) ** 2).sum(axis=1)
            take = f1 < f2
            hi = np.where(take, m2, hi)
            lo = np.where(take, lo, m1)
        tm = 0.5 * (lo + hi)
        return np.linalg.norm(X - pts(tm), axis=1)


def ellipse_polygon(tracking: TrackingData, k: int) -> PolygonalBoundary:
    """Chain with k vertices on the tracking ellipse (equispaced parameter)."""
    return PolygonalBoundary(tracking.boundary_points(k))


def tracking_data(z: TrackingData, x) -> float | np.ndarray:
    """Functional form of the tracking map; zero outside the ellipse."""
    return z(x)
