"""H1 deformation solve on the closed chain and the vertex update.

P1 Lagrange elements on the polygonal chain give cyclic tridiagonal mass
and stiffness matrices; the Riesz system is  (1/2 K + M) w = d  exactly as
the Galerkin statement prescribes (the half on the stiffness block is kept
as written; pass half_stiffness=False to drop it).  The scalar solution is
then projected componentwise into the vector P1 space through the mass
matrix,  M W_c = b_c  with  b_{c,i} = sum_e (n_e)_c int_e w hat_i ,  and
vertices move along +tau W: the pull-back sign convention of the assembled
derivative makes the plus update the descent direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .geometry import GeometryError, PolygonalBoundary
from .shape_derivative import DerivativeVector

__all__ = [
    "SurfaceFEM",
    "assemble_system",
    "solve_cyclic_tridiagonal",
    "solve_deformation",
    "galerkin_project",
    "update_vertices",
]


@dataclass(frozen=True)
class SurfaceFEM:
    """Cyclic tridiagonal operators of the P1 space on one chain.

    diag/off arrays follow the convention off[i] couples vertices i and
    i+1 mod k (both matrices are symmetric).  quad_points/quad_weights hold
    the per-edge two-point Gauss rule, which integrates the P1 element
    integrands exactly.
    """

    boundary: PolygonalBoundary
    mass_diag: np.ndarray
    mass_off: np.ndarray
    stiffness_diag: np.ndarray
    stiffness_off: np.ndarray
    system_diag: np.ndarray
    system_off: np.ndarray
    quad_points: np.ndarray  # (k, 2, 2)
    quad_weights: np.ndarray  # (k, 2)
    half_stiffness: bool


def assemble_system(boundary: PolygonalBoundary, half_stiffness: bool = True) -> SurfaceFEM:
    """Assemble mass, stiffness and the Riesz system matrix.

    Per edge of length L the element matrices are
        stiffness (1/L) [[1, -1], [-1, 1]],   mass (L/6) [[2, 1], [1, 2]],
    accumulated cyclically over the two vertices of each edge.
    """
    L = boundary.edge_lengths
    if np.any(L <= 0.0):
        raise GeometryError("zero-length edge in chain")
    k = boundary.n_vertices
    mass_diag = (np.roll(L, 1) + L) / 3.0
    mass_off = L / 6.0
    stiff_diag = 1.0 / np.roll(L, 1) + 1.0 / L
    stiff_off = -1.0 / L
    factor = 0.5 if half_stiffness else 1.0
    system_diag = factor * stiff_diag + mass_diag
    system_off = factor * stiff_off + mass_off
    gauss = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
    quad_points = boundary.vertices[:, None, :] + gauss[None, :, None] * boundary.edge_vectors[:, None, :]
    quad_weights = 0.5 * np.column_stack((L, L))
    return SurfaceFEM(
        boundary=boundary,
        mass_diag=mass_diag,
        mass_off=mass_off,
        stiffness_diag=stiff_diag,
        stiffness_off=stiff_off,
        system_diag=system_diag,
        system_off=system_off,
        quad_points=quad_points,
        quad_weights=quad_weights,
        half_stiffness=half_stiffness,
    )


def dense_matrix(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Densify a symmetric cyclic tridiagonal matrix (test oracle helper)."""
    k = diag.size
    A = np.zeros((k, k))
    idx = np.arange(k)
    A[idx, idx] = diag
    A[idx, (idx + 1) % k] = off
    A[(idx + 1) % k, idx] = off
    return A


def solve_cyclic_tridiagonal(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Direct solve of a symmetric cyclic tridiagonal system.

    Sherman-Morrison on the corner coupling: subtracting the rank-one
    update u v^T with u = (gamma, 0, ..., beta), v = (1, 0, ..., beta/gamma)
    leaves an ordinary tridiagonal matrix, solved banded; the cyclic
    solution is recovered from two banded solves.  Supports multiple
    right-hand sides as columns.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    k = diag.size
    if k < 3:
        raise ValueError("cyclic system needs at least 3 unknowns")
    b = np.asarray(rhs, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    beta = off[-1]
    gamma = -diag[0]
    mod_diag = diag.copy()
    mod_diag[0] -= gamma
    mod_diag[-1] -= beta * beta / gamma
    ab = np.zeros((3, k))
    ab[0, 1:] = off[:-1]
    ab[1, :] = mod_diag
    ab[2, :-1] = off[:-1]
    u = np.zeros(k)
    u[0] = gamma
    u[-1] = beta
    y = solve_banded((1, 1), ab, B)
    q = solve_banded((1, 1), ab, u)
    vy = y[0, :] + (beta / gamma) * y[-1, :]
    vq = q[0] + (beta / gamma) * q[-1]
    x = y - np.outer(q, vy / (1.0 + vq))
    return x[:, 0] if single else x


def solve_deformation(fem: SurfaceFEM, d) -> np.ndarray:
    """Scalar H1 field w with (1/2 K + M) w = d, verified to 1e-10."""
    rhs = d.values if isinstance(d, DerivativeVector) else np.asarray(d, dtype=float)
    w = solve_cyclic_tridiagonal(fem.system_diag, fem.system_off, rhs)
    resid = apply_cyclic(fem.system_diag, fem.system_off, w) - rhs
    scale = float(np.max(np.abs(rhs)))
    if scale > 0.0 and float(np.max(np.abs(resid))) > 1e-10 * scale:
        raise RuntimeError("cyclic tridiagonal solve failed its residual check")
    return w


def apply_cyclic(diag: np.ndarray, off: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product for the symmetric cyclic tridiagonal form."""
    return diag * x + off * np.roll(x, -1) + np.roll(off * x, 1)


def galerkin_project(fem: SurfaceFEM, w: np.ndarray) -> np.ndarray:
    """Project w times the edgewise normal field into vector P1, shape (k, 2).

    Componentwise mass solves M W_c = b_c; the right-hand side integrates
    w hat_i against the constant normal of each edge, which is the edge
    mass matrix acting on the local values of w scaled by the normal
    component.  The normal field is discontinuous across vertices; per-edge
    integration handles that naturally.
    """
    boundary = fem.boundary
    k = boundary.n_vertices
    w = np.asarray(w, dtype=float)
    L = boundary.edge_lengths
    w_lo = w
    w_hi = np.roll(w, -1)
    contrib_lo = L / 6.0 * (2.0 * w_lo + w_hi)  # int over edge of w hat_start
    contrib_hi = L / 6.0 * (w_lo + 2.0 * w_hi)  # int over edge of w hat_end
    b = np.zeros((k, 2))
    for c in range(2):
        nc = boundary.normals[:, c]
        b[:, c] = contrib_lo * nc + np.roll(contrib_hi * nc, 1)
    return solve_cyclic_tridiagonal(fem.mass_diag, fem.mass_off, b)


def update_vertices(boundary: PolygonalBoundary, W: np.ndarray, tau: float) -> PolygonalBoundary:
    """New chain with vertices moved along +tau W.

    Orientation flips and self-intersections raise instead of silently
    producing a broken chain; the step length is then too long.
    """
    if tau < 0.0:
        raise ValueError("step length must be nonnegative")
    W = np.asarray(W, dtype=float)
    if W.shape != boundary.vertices.shape or not np.all(np.isfinite(W)):
        raise ValueError("deformation field must be finite with one vector per vertex")
    return PolygonalBoundary(boundary.vertices + tau * W, normalize_orientation=False)
