"""Directional shape derivative assembled per hat-normal basis deformation.

Admissible deformations are spanned by one vector field per vertex: the P1
hat function of vertex j times the constant outer normal of each of its two
supporting edges (and zero elsewhere).  For every such basis field V_j the
derivative value is

    d_j = m+ E[<V_j, grad v>(exit+)] - m- E[<V_j, grad v>(exit-)]
          - integral over the chain of 1/2 z(y)^2 <V_j, n>(y) dS(y)

with the expectations over projected exit points of each partition side and
the boundary integral evaluated by per-edge Gauss quadrature.  The sign
convention is pull-back based: d equals the push-forward directional
derivative of the tracking objective with flipped sign, so the H1 field
solved from d is already a descent direction under a plus update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import PolygonalBoundary, TrackingData
from .monte_carlo import ExitSampleSet, PartitionEstimate

__all__ = [
    "DerivativeVector",
    "evaluate_basis",
    "mc_expectation_term",
    "boundary_term",
    "assemble",
]

GradField = Callable[[np.ndarray], np.ndarray]


def vertex_mean_normal(boundary: PolygonalBoundary, j: int) -> np.ndarray:
    """Unit average of the two edge normals meeting at vertex j.

    Exit points land on vertices only through floating-point projection
    corner cases; this measure-zero convention keeps them usable.
    """
    k = boundary.n_vertices
    n = boundary.normals[(j - 1) % k] + boundary.normals[j]
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError(f"opposite edge normals at vertex {j}")
    return n / norm


def evaluate_basis(
    boundary: PolygonalBoundary,
    j: int,
    point,
    edge: int = -1,
    vertex: int = -1,
) -> np.ndarray:
    """Value of basis field V_j at a tagged chain point.

    Edge-tagged points evaluate to hat(j) times that edge's outer normal;
    the hat value is the barycentric coordinate toward vertex j along the
    edge.  Vertex-tagged points use hat value one times the averaged normal
    when the vertex is j, zero otherwise.
    """
    k = boundary.n_vertices
    if vertex >= 0:
        return vertex_mean_normal(boundary, j) if vertex == j % k else np.zeros(2)
    if not (0 <= edge < k):
        raise ValueError(f"invalid edge tag {edge}")
    p = boundary.vertices[edge]
    e = boundary.edge_vectors[edge]
    t = float(np.dot(np.asarray(point, dtype=float) - p, e) / np.dot(e, e))
    if edge == j % k:
        hat = 1.0 - t  # vertex j is the start of its right supporting edge
    elif (edge + 1) % k == j % k:
        hat = t  # vertex j is the end of its left supporting edge
    else:
        return np.zeros(2)
    return hat * boundary.normals[edge]


def _exit_summands(boundary: PolygonalBoundary, exits: ExitSampleSet, grads: np.ndarray) -> np.ndarray:
    """Per-exit, per-vertex values of <V_i, grad v>; shape (n_exits, k).

    Each edge-tagged exit touches exactly the two vertices of its edge;
    vertex-tagged exits touch that vertex through the averaged normal.
    """
    k = boundary.n_vertices
    n = exits.exits.shape[0]
    S = np.zeros((n, k))
    for i in range(n):
        e = int(exits.edges[i])
        if e >= 0:
            g = grads[i]
            dot = float(np.dot(boundary.normals[e], g))
            t = float(exits.ts[i])
            S[i, e] += (1.0 - t) * dot
            S[i, (e + 1) % k] += t * dot
        else:
            j = int(exits.vertex_tags[i])
            S[i, j] += float(np.dot(vertex_mean_normal(boundary, j), grads[i]))
    return S


def mc_expectation_term(
    boundary: PolygonalBoundary,
    exits: ExitSampleSet | None,
    grad_field: GradField,
    m: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex m * E[<V_i, grad v>(exit)] plus its standard-error estimate.

    m == 0 short-circuits to zeros (no sampling needed on that side); a
    positive constant with no exit samples is an error.
    """
    k = boundary.n_vertices
    if m == 0.0:
        return np.zeros(k), np.zeros(k)
    if exits is None or exits.exits.shape[0] == 0:
        raise ValueError("positive partition constant but no exit samples")
    grads = np.asarray(grad_field(exits.exits), dtype=float)
    S = _exit_summands(boundary, exits, grads)
    n = S.shape[0]
    term = m * S.mean(axis=0)
    if n > 1:
        sigma = m * S.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        sigma = np.zeros(k)
    return term, sigma


def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    # map from [-1, 1] to [0, 1]
    return 0.5 * (nodes + 1.0), 0.5 * weights


def boundary_term(
    boundary: PolygonalBoundary,
    tracking,
    n_gauss: int = 4,
) -> np.ndarray:
    """Per-vertex quadrature of 1/2 z^2 <V_i, n> over the chain.

    On edge e the integrand reduces to 1/2 z(y)^2 hat_i(y) since V_i is the
    hat times the edge normal.  Edges crossing the tracking-data support
    boundary are split at the intersection so the kink of z^2 never sits
    inside a quadrature cell (only available when tracking carries the
    ellipse geometry; generic callables integrate unsplit).
    """
    k = boundary.n_vertices
    nodes, weights = _gauss_legendre(n_gauss)
    out = np.zeros(k)
    for e in range(k):
        p = boundary.vertices[e]
        vec = boundary.edge_vectors[e]
        L = boundary.edge_lengths[e]
        if isinstance(tracking, TrackingData):
            cuts = tracking.segment_crossings(p, p + vec)
        else:
            cuts = []
        pieces = np.concatenate([[0.0], cuts, [1.0]])
        for a, b in zip(pieces[:-1], pieces[1:]):
            t = a + (b - a) * nodes
            pts = p[None, :] + t[:, None] * vec[None, :]
            z = np.asarray(tracking(pts), dtype=float)
            w = weights * (b - a) * L
            common = 0.5 * z * z * w
            out[e] += float(np.sum(common * (1.0 - t)))
            out[(e + 1) % k] += float(np.sum(common * t))
    return out


@dataclass
class DerivativeVector:
    """Assembled derivative with its decomposition and noise estimate.

    values == term_plus - term_minus - term_boundary holds exactly by
    construction; sigma is the per-vertex Monte Carlo standard error of the
    two expectation terms combined (the boundary term is deterministic).
    """

    values: np.ndarray
    term_plus: np.ndarray
    term_minus: np.ndarray
    term_boundary: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        recomposed = self.term_plus - self.term_minus - self.term_boundary
        if not np.array_equal(self.values, recomposed):
            raise ValueError("derivative decomposition identity violated")

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def assemble(
    partition: PartitionEstimate,
    exits_plus: ExitSampleSet | None,
    exits_minus: ExitSampleSet | None,
    boundary: PolygonalBoundary,
    tracking,
    grad_field: GradField,
    n_gauss: int = 4,
) -> DerivativeVector:
    """Full derivative vector for every hat-normal basis field."""
    tp, sp = mc_expectation_term(boundary, exits_plus, grad_field, partition.m_plus)
    tm, sm = mc_expectation_term(boundary, exits_minus, grad_field, partition.m_minus)
    tb = boundary_term(boundary, tracking, n_gauss)
    values = tp - tm - tb
    sigma = np.sqrt(sp**2 + sm**2)
    return DerivativeVector(values=values, term_plus=tp, term_minus=tm, term_boundary=tb, sigma=sigma)
