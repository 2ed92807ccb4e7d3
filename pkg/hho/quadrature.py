"""
Quadrature on polyhedral elements and polygonal faces.

Cells are tessellated into simplices (elements: apex x_T over the face
triangles; faces: fan from the face centroid, triangles kept as they are)
and a collapsed Gauss-Jacobi rule of the requested exactness is mapped onto
each simplex.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.special import roots_jacobi

from hho.errors import GeometryError
from hho.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadRule:
    """Points and weights; face rules carry in-frame 2D points plus their 3D embedding."""

    points: NDArray
    weights: NDArray
    degree: int
    embedded: NDArray | None = None

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    @property
    def points3d(self) -> NDArray:
        return self.points if self.embedded is None else self.embedded

    def integrate(self, values: NDArray) -> NDArray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def operator_degree(k: int) -> int:
    return 2 * (k + 2)


def rhs_degree(k: int, elevation: int) -> int:
    return 2 * k + elevation


def _gauss_jacobi(n: int, alpha: float) -> tuple[NDArray, NDArray]:
    t, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def reference_tetrahedron(d: int) -> tuple[NDArray, NDArray]:
    """Collapsed rule on {x, y, z >= 0, x + y + z <= 1}, exact to degree d."""
    n = d // 2 + 1
    u, wu = _gauss_jacobi(n, 2.0)
    v, wv = _gauss_jacobi(n, 1.0)
    w, ww = _gauss_jacobi(n, 0.0)
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    weights = np.einsum("i,j,k->ijk", wu, wv, ww).ravel()
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    z = (W * (1.0 - U) * (1.0 - V)).ravel()
    pts = np.column_stack([x, y, z])
    pts.setflags(write=False)
    weights.setflags(write=False)
    return pts, weights


@lru_cache(maxsize=None)
def reference_triangle(d: int) -> tuple[NDArray, NDArray]:
    """Collapsed rule on {s, t >= 0, s + t <= 1}, exact to degree d."""
    n = d // 2 + 1
    u, wu = _gauss_jacobi(n, 1.0)
    v, wv = _gauss_jacobi(n, 0.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    weights = np.outer(wu, wv).ravel()
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    pts.setflags(write=False)
    weights.setflags(write=False)
    return pts, weights


def _face_triangles(mesh: Mesh, f: int) -> list[tuple[NDArray, NDArray, NDArray]]:
    loop = mesh.vertices[list(mesh.face_loops[f])]
    if len(loop) == 3:
        return [(loop[0], loop[1], loop[2])]
    c = mesh.face_centroid[f]
    return [(c, a, b) for a, b in zip(loop, np.roll(loop, -1, axis=0))]


def element_rule(mesh: Mesh, t: int, d: int) -> QuadRule:
    """Rule exact for 3-variate polynomials of degree <= d on element t."""
    ref_pts, ref_w = reference_tetrahedron(d)
    xT = mesh.element_center[t]
    points, weights = [], []
    for f, s in zip(mesh.element_faces[t], mesh.element_signs[t]):
        for a, b, c in _face_triangles(mesh, int(f)):
            vol = s * float(np.dot(np.cross(b - a, c - a), a - xT)) / 6.0
            if vol <= 0.0:
                raise GeometryError(f"degenerate sub-tetrahedron on face {int(f)} (volume {vol:.3e})", t)
            jac = np.column_stack([a - xT, b - xT, c - xT])
            points.append(xT + ref_pts @ jac.T)
            weights.append(6.0 * vol * ref_w)
    return QuadRule(np.vstack(points), np.concatenate(weights), d)


def face_rule(mesh: Mesh, f: int, d: int, frame: NDArray | None = None) -> QuadRule:
    """Rule exact for 2-variate polynomials of degree <= d in the face frame, centred at the face centroid."""
    ref_pts, ref_w = reference_triangle(d)
    frame = mesh.face_frame[f] if frame is None else frame
    points, weights = [], []
    for a, b, c in _face_triangles(mesh, f):
        area = 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))
        if area <= 0.0:
            raise GeometryError(f"degenerate triangle on face {f}")
        jac = np.column_stack([b - a, c - a])
        points.append(a + ref_pts @ jac.T)
        weights.append(2.0 * area * ref_w)
    embedded = np.vstack(points)
    local = (embedded - mesh.face_centroid[f]) @ frame.T
    return QuadRule(local, np.concatenate(weights), d, embedded)
