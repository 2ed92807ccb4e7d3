"""
Polynomial spaces on elements and faces.

Bases are scaled monomials ((x - center) / scale)^alpha in graded
lexicographic order, optionally orthonormalized in L2 of the cell. Vector
bases are component-major: function ``c * n + i`` is ``phi_i e_c``.

Derivatives are taken on the exponent tables (exact), never numerically.
Constrained subspaces (gradients, curls, the flat face space) are built as
raw monomial coefficient columns, converted to ambient coordinates and
orthonormalized with a rank-revealing SVD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from hho.errors import ConditioningError, RankMismatchError
from hho.mesh import Mesh
from hho.quadrature import QuadRule, element_rule, face_rule

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


# -- exponent tables --------------------------------------------------------


def dim_scalar(dim: int, q: int) -> int:
    return comb(q + dim, dim) if q >= 0 else 0


@lru_cache(maxsize=None)
def exponents(dim: int, q: int) -> NDArray:
    """Graded lexicographic exponent table of total degree <= q."""
    rows: list[tuple[int, ...]] = []
    for d in range(q + 1):
        if dim == 2:
            rows.extend((a, d - a) for a in range(d, -1, -1))
        else:
            for a in range(d, -1, -1):
                rows.extend((a, b, d - a - b) for b in range(d - a, -1, -1))
    table = np.array(rows, dtype=np.int64).reshape(-1, dim)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def exponent_index(dim: int, q: int) -> dict[tuple[int, ...], int]:
    return {tuple(int(x) for x in row): i for i, row in enumerate(exponents(dim, q))}


def homogeneous(dim: int, d: int) -> NDArray:
    table = exponents(dim, d)
    return table[table.sum(axis=1) == d]


def _monomials(xi: NDArray, table: NDArray) -> NDArray:
    return np.prod(xi[:, None, :] ** table[None, :, :], axis=2)


def _monomial_derivatives(xi: NDArray, table: NDArray, scale: float) -> NDArray:
    """(N, n, dim): d/dx_j of ((x - center)/scale)^alpha."""
    out = np.empty((xi.shape[0], table.shape[0], table.shape[1]))
    for j in range(table.shape[1]):
        lowered = table.copy()
        lowered[:, j] = np.maximum(lowered[:, j] - 1, 0)
        out[:, :, j] = table[None, :, j] * _monomials(xi, lowered) / scale
    return out


def raw_gradient(dim: int, q: int, scale: float) -> NDArray:
    """Coefficients of grad(xi^alpha), alpha of degree <= q, in the degree q-1 vector table.

    Shape (dim * n_{q-1}, n_q); component-major rows.
    """
    src = exponents(dim, q)
    n_low = dim_scalar(dim, q - 1)
    index = exponent_index(dim, max(q - 1, 0))
    out = np.zeros((dim * n_low, len(src)))
    for i, alpha in enumerate(src):
        for j in range(dim):
            if alpha[j] > 0:
                beta = list(alpha)
                beta[j] -= 1
                out[j * n_low + index[tuple(int(b) for b in beta)], i] = alpha[j] / scale
    return out


def raw_curl(q: int, scale: float) -> NDArray:
    """Coefficients of curl(xi^alpha e_c) for the degree q vector table, in the degree q-1 table."""
    n = dim_scalar(3, q)
    n_low = dim_scalar(3, q - 1)
    grad = raw_gradient(3, q, scale)
    g = [grad[j * n_low:(j + 1) * n_low] for j in range(3)]
    zero = np.zeros_like(g[0])
    # grad(phi) x e_c, component by component
    blocks = [
        (zero, g[2], -g[1]),
        (-g[2], zero, g[0]),
        (g[1], -g[0], zero),
    ]
    out = np.zeros((3 * n_low, 3 * n))
    for c, comps in enumerate(blocks):
        out[:, c * n:(c + 1) * n] = np.vstack(comps)
    return out


def raw_times_coordinate(dim: int, q: int, axis: int) -> NDArray:
    """Multiplication by xi_axis, from the degree q-1 scalar table to the degree q table."""
    low = exponents(dim, q - 1) if q >= 1 else np.zeros((0, dim), dtype=np.int64)
    index = exponent_index(dim, q)
    out = np.zeros((dim_scalar(dim, q), len(low)))
    for i, beta in enumerate(low):
        alpha = [int(b) for b in beta]
        alpha[axis] += 1
        out[index[tuple(alpha)], i] = 1.0
    return out


def embed_degree(dim: int, q_low: int, q: int) -> NDArray:
    """Inclusion of the degree q_low table into the degree q table (q_low <= q)."""
    index = exponent_index(dim, q)
    low = exponents(dim, q_low) if q_low >= 0 else np.zeros((0, dim), dtype=np.int64)
    out = np.zeros((dim_scalar(dim, q), len(low)))
    for i, alpha in enumerate(low):
        out[index[tuple(int(a) for a in alpha)], i] = 1.0
    return out


# -- bases ------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceBasis:
    """Scaled-monomial basis on one cell, possibly orthonormalized.

    ``transform`` maps raw monomials to basis functions: phi_j = sum_i raw_i T_ij.
    """

    cell: int
    kind: str
    degree: int
    center: NDArray
    scale: float
    transform: NDArray
    mass_scalar: NDArray
    ncomp: int = 1
    frame: NDArray | None = field(default=None, repr=False)

    @property
    def is_face(self) -> bool:
        return self.kind.endswith("face")

    @property
    def spatial_dim(self) -> int:
        return 2 if self.is_face else 3

    @property
    def table(self) -> NDArray:
        return exponents(self.spatial_dim, self.degree)

    @property
    def n_scalar(self) -> int:
        return dim_scalar(self.spatial_dim, self.degree)

    @property
    def dim(self) -> int:
        return self.ncomp * self.n_scalar

    @property
    def mass(self) -> NDArray:
        return np.kron(np.eye(self.ncomp), self.mass_scalar)

    def points_of(self, rule: QuadRule) -> NDArray:
        return rule.points if self.is_face else rule.points3d

    def _xi(self, points: NDArray) -> NDArray:
        return (points - self.center) / self.scale

    def scalar_values(self, points: NDArray) -> NDArray:
        return _monomials(self._xi(points), self.table) @ self.transform

    def scalar_gradients(self, points: NDArray) -> NDArray:
        d = _monomial_derivatives(self._xi(points), self.table, self.scale)
        return np.einsum("nid,ij->njd", d, self.transform)

    def values(self, points: NDArray) -> NDArray:
        """(N, dim) for scalar bases, (N, dim, ncomp) for vector bases."""
        p = self.scalar_values(points)
        if self.ncomp == 1:
            return p
        n = self.n_scalar
        out = np.zeros((p.shape[0], self.dim, self.ncomp))
        for c in range(self.ncomp):
            out[:, c * n:(c + 1) * n, c] = p
        return out

    def gradients(self, points: NDArray) -> NDArray:
        if self.ncomp != 1:
            raise ValueError("gradients are defined for scalar bases")
        return self.scalar_gradients(points)

    def divergences(self, points: NDArray) -> NDArray:
        g = self.scalar_gradients(points)
        n = self.n_scalar
        out = np.zeros((g.shape[0], self.dim))
        for c in range(self.ncomp):
            out[:, c * n:(c + 1) * n] = g[:, :, c]
        return out

    def curls(self, points: NDArray) -> NDArray:
        if self.ncomp != 3:
            raise ValueError("curls are defined for 3D vector bases")
        g = self.scalar_gradients(points)
        n = self.n_scalar
        out = np.zeros((g.shape[0], self.dim, 3))
        for c in range(3):
            e = np.zeros(3)
            e[c] = 1.0
            out[:, c * n:(c + 1) * n, :] = np.cross(g, e)
        return out

    def raw_to_coords(self, raw: NDArray) -> NDArray:
        """Coordinates in this basis of functions given by raw monomial coefficients (columns)."""
        n = self.n_scalar
        raw = raw.reshape(self.ncomp, n, -1)
        out = [np.linalg.solve(self.transform, raw[c]) for c in range(self.ncomp)]
        return np.concatenate(out, axis=0)


def _orthonormal_transform(mass: NDArray, what: str) -> NDArray:
    try:
        l1 = np.linalg.cholesky(mass)
        t1 = sla.solve_triangular(l1, np.eye(len(mass)), lower=True).T
        l2 = np.linalg.cholesky(t1.T @ mass @ t1)
        t2 = sla.solve_triangular(l2, np.eye(len(mass)), lower=True).T
    except np.linalg.LinAlgError as e:
        raise ConditioningError(f"mass matrix of {what} is not positive definite: {e}")
    return t1 @ t2


def scalar_basis(
    mesh: Mesh,
    q: int,
    *,
    element: int | None = None,
    face: int | None = None,
    rule: QuadRule | None = None,
    orthonormal: bool = True,
) -> SpaceBasis:
    """Scalar polynomials of degree <= q on an element or a face."""
    if (element is None) == (face is None):
        raise ValueError("give exactly one of element= or face=")
    if q < 0:
        raise ValueError("degree must be >= 0")
    if element is not None:
        cell, kind, frame = element, "scalar-element", None
        center, scale = mesh.element_center[element], float(mesh.element_diameter[element])
        rule = rule or element_rule(mesh, element, 2 * q)
        pts = rule.points3d
    else:
        cell, kind, frame = face, "scalar-face", mesh.face_frame[face]
        center, scale = np.zeros(2), float(mesh.face_diameter[face])
        rule = rule or face_rule(mesh, face, 2 * q)
        pts = rule.points
    dim = 2 if face is not None else 3
    raw = _monomials((pts - center) / scale, exponents(dim, q))
    raw_mass = np.einsum("n,ni,nj->ij", rule.weights, raw, raw)
    if orthonormal:
        transform = _orthonormal_transform(raw_mass, f"{kind} {cell}")
        mass = transform.T @ raw_mass @ transform
    else:
        transform, mass = np.eye(len(raw_mass)), raw_mass
    return SpaceBasis(cell, kind, q, np.asarray(center, dtype=float), scale, transform, mass, 1, frame)


def vector_basis(
    mesh: Mesh,
    q: int,
    *,
    element: int | None = None,
    face: int | None = None,
    rule: QuadRule | None = None,
    orthonormal: bool = True,
    scalar: SpaceBasis | None = None,
) -> SpaceBasis:
    """Vector polynomials: 3 components on elements, 2 in-frame components on faces."""
    s = scalar or scalar_basis(mesh, q, element=element, face=face, rule=rule, orthonormal=orthonormal)
    if s.is_face:
        return replace(s, kind="vector-face", ncomp=2)
    return replace(s, kind="vector-element", ncomp=3)


def mass_matrix(basis: SpaceBasis | "SubspaceBasis", rule: QuadRule) -> NDArray:
    vals = basis.values(basis.points_of(rule))
    if vals.ndim == 2:
        return np.einsum("n,ni,nj->ij", rule.weights, vals, vals)
    return np.einsum("n,nic,njc->ij", rule.weights, vals, vals)


def project(target: SpaceBasis | "SubspaceBasis", rule: QuadRule, values: NDArray) -> NDArray:
    """L2-orthogonal projection of values sampled at the rule points onto the target space."""
    phi = target.values(target.points_of(rule))
    if phi.ndim == 2:
        rhs = np.einsum("n,ni,n...->i...", rule.weights, phi, values)
    else:
        rhs = np.einsum("n,nic,nc->i", rule.weights, phi, values)
    try:
        factor = sla.cho_factor(target.mass)
    except np.linalg.LinAlgError as e:
        raise ConditioningError(f"singular mass matrix in projection: {e}")
    return sla.cho_solve(factor, rhs)


def project_coefficients(
    source: SpaceBasis | "SubspaceBasis",
    coeffs: NDArray,
    target: SpaceBasis | "SubspaceBasis",
    rule: QuadRule,
) -> NDArray:
    vals = source.values(source.points_of(rule))
    return project(target, rule, np.tensordot(vals, coeffs, axes=([1], [0])))


# -- subspaces --------------------------------------------------------------


@dataclass(frozen=True)
class SubspaceBasis:
    """Subspace of a vector basis; columns are orthonormal in the ambient L2 inner product."""

    ambient: SpaceBasis
    columns: NDArray
    tag: str

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    @property
    def is_face(self) -> bool:
        return self.ambient.is_face

    @property
    def mass(self) -> NDArray:
        return self.columns.T @ self.ambient.mass @ self.columns

    def points_of(self, rule: QuadRule) -> NDArray:
        return self.ambient.points_of(rule)

    def values(self, points: NDArray) -> NDArray:
        return np.einsum("nac,ab->nbc", self.ambient.values(points), self.columns)

    def curls(self, points: NDArray) -> NDArray:
        return np.einsum("nac,ab->nbc", self.ambient.curls(points), self.columns)


def expected_dimension(tag: str, q: int) -> int:
    if tag == "grad-element":
        return dim_scalar(3, q + 1) - 1
    if tag == "rot-element":
        return 3 * dim_scalar(3, q + 1) - (dim_scalar(3, q + 2) - 1) if q >= 0 else 0
    if tag == "grad-face":
        return dim_scalar(2, q + 1) - 1
    if tag == "flat-face":
        return 2 * dim_scalar(2, q - 1) + (q + 2) if q >= 0 else 0
    raise ValueError(f"unknown subspace tag {tag!r}")


def _extract(ambient: SpaceBasis, raw_columns: NDArray, tag: str) -> SubspaceBasis:
    coords = ambient.raw_to_coords(raw_columns)
    factor = np.linalg.cholesky(ambient.mass).T @ coords
    u, s, vt = np.linalg.svd(factor, full_matrices=False)
    keep = s > RANK_TOLERANCE * (s[0] if len(s) else 0.0)
    expected = expected_dimension(tag, ambient.degree)
    if int(keep.sum()) != expected:
        raise RankMismatchError(
            f"{tag} on cell {ambient.cell}, degree {ambient.degree}: rank {int(keep.sum())}, expected {expected}"
        )
    columns = coords @ vt[keep].T / s[keep]
    return SubspaceBasis(ambient, columns, tag)


def subspace_grad_T(ambient: SpaceBasis) -> SubspaceBasis:
    """grad of P^{q+1}(T) inside the vector basis P^q(T)^3."""
    q = ambient.degree
    grads = raw_gradient(3, q + 1, ambient.scale)[:, 1:]
    return _extract(ambient, grads, "grad-element")


def subspace_rot_T(ambient: SpaceBasis) -> SubspaceBasis:
    """curl of P^{q+1}(T)^3 inside the vector basis P^q(T)^3."""
    q = ambient.degree
    return _extract(ambient, raw_curl(q + 1, ambient.scale), "rot-element")


def subspace_grad_F(ambient: SpaceBasis) -> SubspaceBasis:
    """Tangential gradients of P^{q+1}(F) inside the in-frame vector basis P^q(F)^2."""
    q = ambient.degree
    grads = raw_gradient(2, q + 1, ambient.scale)[:, 1:]
    return _extract(ambient, grads, "grad-face")


def subspace_pflat_F(ambient: SpaceBasis) -> SubspaceBasis:
    """P^{q-1}(F)^2 plus tangential gradients of homogeneous degree q+1 polynomials."""
    q = ambient.degree
    n = dim_scalar(2, q)
    lower = embed_degree(2, q - 1, q)
    full = np.zeros((2 * n, 2 * lower.shape[1]))
    full[:n, :lower.shape[1]] = lower
    full[n:, lower.shape[1]:] = lower
    grads = raw_gradient(2, q + 1, ambient.scale)
    table = exponents(2, q + 1)
    top = grads[:, table.sum(axis=1) == q + 1]
    return _extract(ambient, np.hstack([full, top]), "flat-face")


# -- polynomial decomposition -----------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    """p = grad g + (x - x_T) x curl c, with parts in ambient coordinates."""

    g: NDArray
    c: NDArray
    grad_part: NDArray
    rot_part: NDArray
    residual: float
    norm_p: float
    norm_rot_part: float
    norm_curl_p: float
    diameter: float

    @property
    def bound_ratio(self) -> float:
        """||p - grad g|| / (h_T ||curl p||); at most 2 on star-shaped elements."""
        if self.norm_curl_p == 0.0:
            return 0.0 if self.norm_rot_part <= 1e-12 * max(self.norm_p, 1.0) else np.inf
        return self.norm_rot_part / (self.diameter * self.norm_curl_p)


class PolynomialDecomposer:
    """Splits P^q(T)^3 into gradients and (x - x_T) x curls on one element."""

    def __init__(self, mesh: Mesh, t: int, q: int, orthonormal: bool = True) -> None:
        if q < 0:
            raise ValueError("degree must be >= 0")
        self.q = q
        self.diameter = float(mesh.element_diameter[t])
        self.rule = element_rule(mesh, t, 2 * (q + 1))
        self.vector = vector_basis(mesh, q, element=t, rule=self.rule, orthonormal=orthonormal)
        self.potential = scalar_basis(mesh, q + 1, element=t, rule=self.rule, orthonormal=orthonormal)
        self.rot_source = vector_basis(mesh, q, element=t, rule=self.rule, orthonormal=orthonormal)

        scale = self.vector.scale
        grads = raw_gradient(3, q + 1, scale)[:, 1:]
        curls = raw_curl(q, scale)
        n_low = dim_scalar(3, q - 1)
        w = [curls[j * n_low:(j + 1) * n_low] for j in range(3)]
        x = [scale * raw_times_coordinate(3, q, j) for j in range(3)]
        cross = np.vstack([
            x[1] @ w[2] - x[2] @ w[1],
            x[2] @ w[0] - x[0] @ w[2],
            x[0] @ w[1] - x[1] @ w[0],
        ])
        self._grad_cols = self.vector.raw_to_coords(grads)
        self._rot_cols = self.vector.raw_to_coords(cross)
        self._chol = np.linalg.cholesky(self.vector.mass)
        self._curl_vals = self.vector.curls(self.rule.points3d)

    def _norm(self, coords: NDArray) -> float:
        return float(np.linalg.norm(self._chol.T @ coords))

    def decompose(self, p: NDArray) -> Decomposition:
        a = np.hstack([self._grad_cols, self._rot_cols])
        weighted = self._chol.T
        sol, *_ = np.linalg.lstsq(weighted @ a, weighted @ p, rcond=None)
        if not np.all(np.isfinite(sol)):
            raise ConditioningError("decomposition least-squares solve failed")
        ng = self._grad_cols.shape[1]
        grad_part = self._grad_cols @ sol[:ng]
        rot_part = self._rot_cols @ sol[ng:]
        norm_p = self._norm(p)
        residual = self._norm(grad_part + rot_part - p) / max(norm_p, np.finfo(float).tiny)
        raw_g = np.concatenate([[0.0], sol[:ng]])
        curl_p = np.einsum("nic,i->nc", self._curl_vals, p)
        norm_curl = float(np.sqrt(np.einsum("n,nc,nc->", self.rule.weights, curl_p, curl_p)))
        return Decomposition(
            g=self.potential.raw_to_coords(raw_g[:, None])[:, 0],
            c=self.rot_source.raw_to_coords(sol[ng:][:, None])[:, 0],
            grad_part=grad_part,
            rot_part=rot_part,
            residual=residual,
            norm_p=norm_p,
            norm_rot_part=self._norm(rot_part),
            norm_curl_p=norm_curl,
            diameter=self.diameter,
        )


def decompose_polynomial(mesh: Mesh, t: int, p: NDArray, q: int) -> Decomposition:
    """Decompose p, given in the vector basis of degree q on element t."""
    return PolynomialDecomposer(mesh, t, q).decompose(p)
