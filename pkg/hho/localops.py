"""
Per-element HHO operators.

Unknowns of the X space (the vector variable) are P^{k+1}(T)^3 on elements
and, on faces, tangential polynomials in the gradient space (field
formulation) or the flat space (potential formulation). Unknowns of the Y
space (the Lagrange multiplier) are P^k(T) on elements and P^{k+1}(F) on
faces. Face unknowns live in the face's own frame, so both neighbours of an
interface read the same coordinates.

Local vectors of an element are ordered as [element block, face blocks in
the element's face order].
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from hho.errors import ConditioningError, ConfigError
from hho.mesh import Mesh
from hho.polyspaces import (
    SpaceBasis,
    SubspaceBasis,
    dim_scalar,
    expected_dimension,
    project,
    scalar_basis,
    subspace_grad_F,
    subspace_pflat_F,
    subspace_rot_T,
    vector_basis,
)
from hho.quadrature import QuadRule, element_rule, face_rule, operator_degree, rhs_degree

logger = logging.getLogger(__name__)

FORMULATIONS = ("field", "potential")

VectorSampler = Callable[[NDArray], NDArray]
ScalarSampler = Callable[[NDArray], NDArray]


@dataclass(frozen=True)
class DofLayout:
    formulation: str
    k: int
    n_elements: int
    n_faces: int

    def __post_init__(self) -> None:
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.k < 0:
            raise ConfigError("k must be >= 0")

    @property
    def x_element(self) -> int:
        return 3 * dim_scalar(3, self.k + 1)

    @property
    def x_face(self) -> int:
        tag = "grad-face" if self.formulation == "field" else "flat-face"
        return expected_dimension(tag, self.k + 1)

    @property
    def y_element(self) -> int:
        return dim_scalar(3, self.k)

    @property
    def y_face(self) -> int:
        return dim_scalar(2, self.k + 1)

    def size(self, space: str) -> int:
        return self.n_elements * self.block(space, "element") + self.n_faces * self.block(space, "face")

    def block(self, space: str, where: str) -> int:
        if space == "X":
            return self.x_element if where == "element" else self.x_face
        return self.y_element if where == "element" else self.y_face

    def element_slice(self, space: str, t: int) -> slice:
        n = self.block(space, "element")
        return slice(t * n, (t + 1) * n)

    def face_slice(self, space: str, f: int) -> slice:
        start = self.n_elements * self.block(space, "element")
        n = self.block(space, "face")
        return slice(start + f * n, start + (f + 1) * n)

    def local_indices(self, space: str, mesh: Mesh, t: int) -> NDArray:
        """Global indices of the local vector of element t."""
        e = self.element_slice(space, t)
        parts = [np.arange(e.start, e.stop)]
        for f in mesh.element_faces[t]:
            s = self.face_slice(space, int(f))
            parts.append(np.arange(s.start, s.stop))
        return np.concatenate(parts)

    def local_size(self, space: str, n_faces: int) -> int:
        return self.block(space, "element") + n_faces * self.block(space, "face")


@dataclass
class HybridVector:
    """One coefficient block per element and per face, for the X or the Y space."""

    layout: DofLayout
    space: str
    values: NDArray
    boundary_mask: NDArray

    @classmethod
    def zeros(cls, layout: DofLayout, space: str, mesh: Mesh) -> "HybridVector":
        return cls(layout, space, np.zeros(layout.size(space)), np.array(mesh.boundary))

    def element(self, t: int) -> NDArray:
        return self.values[self.layout.element_slice(self.space, t)]

    def face(self, f: int) -> NDArray:
        return self.values[self.layout.face_slice(self.space, f)]

    def local(self, mesh: Mesh, t: int) -> NDArray:
        return self.values[self.layout.local_indices(self.space, mesh, t)]

    def boundary_norm(self) -> float:
        total = 0.0
        for f in np.flatnonzero(self.boundary_mask):
            total += float(np.sum(self.face(int(f)) ** 2))
        return float(np.sqrt(total))

    def __sub__(self, other: "HybridVector") -> "HybridVector":
        return HybridVector(self.layout, self.space, self.values - other.values, self.boundary_mask)


class FaceSpaces:
    """Scalar and tangential bases of one face plus its X-unknown subspace."""

    def __init__(self, mesh: Mesh, f: int, formulation: str, k: int, degree: int, orthonormal: bool) -> None:
        self.face = f
        self.rule = face_rule(mesh, f, degree)
        self.scalar = scalar_basis(mesh, k + 1, face=f, rule=self.rule, orthonormal=orthonormal)
        self.tangential = vector_basis(mesh, k + 1, face=f, scalar=self.scalar)
        if formulation == "field":
            self.x_space = subspace_grad_F(self.tangential)
        else:
            self.x_space = subspace_pflat_F(self.tangential)
        self.frame = mesh.face_frame[f]
        self.diameter = float(mesh.face_diameter[f])


class ElementSpaces:
    """Element bases: P^k(T) (Y unknowns), P^{k+1}(T)^3 (X unknowns), curl target space."""

    def __init__(
        self, mesh: Mesh, t: int, k: int, degree: int, orthonormal: bool, full_curl: bool, with_curl: bool
    ) -> None:
        self.element = t
        self.rule = element_rule(mesh, t, degree)
        self.scalar = scalar_basis(mesh, k, element=t, rule=self.rule, orthonormal=orthonormal)
        self.vector = vector_basis(mesh, k + 1, element=t, rule=self.rule, orthonormal=orthonormal)
        self.curl_space: SpaceBasis | SubspaceBasis | None = None
        if with_curl:
            curl_ambient = vector_basis(mesh, k, element=t, rule=self.rule, orthonormal=orthonormal)
            self.curl_space = curl_ambient if full_curl else subspace_rot_T(curl_ambient)
        self.diameter = float(mesh.element_diameter[t])


@dataclass(frozen=True)
class ElementOperators:
    """Dense local matrices of one element (local X / Y orderings, see module doc)."""

    element: int
    faces: NDArray
    grad: NDArray
    grad_rhs: NDArray
    curl: NDArray | None
    curl_space_mass: NDArray | None
    curl_mass: NDArray
    vector_mass: NDArray
    scalar_mass: NDArray
    grad_mass: NDArray
    stab: NDArray
    a: NDArray
    b: NDArray
    c: NDArray
    d: NDArray

    def y_stabilization(self, stabilization: str) -> NDArray:
        if stabilization == "ch":
            return self.c
        if stabilization == "dh":
            return self.d
        return np.zeros_like(self.c)


@dataclass
class LocalOperatorSet:
    discretization: "Discretization"
    operators: list[ElementOperators]

    def __getitem__(self, t: int) -> ElementOperators:
        return self.operators[t]

    def __len__(self) -> int:
        return len(self.operators)


def _solve_spd(matrix: NDArray, rhs: NDArray, what: str) -> NDArray:
    try:
        return sla.cho_solve(sla.cho_factor(matrix), rhs)
    except np.linalg.LinAlgError as e:
        raise ConditioningError(f"{what}: {e}")


def _pad(matrix: NDArray, rows: int, cols: int) -> NDArray:
    out = np.zeros((rows, cols))
    out[:matrix.shape[0], :matrix.shape[1]] = matrix
    return out


class Discretization:
    """Mesh plus polynomial degree and formulation; builds bases, operators and interpolants."""

    def __init__(
        self,
        mesh: Mesh,
        k: int,
        formulation: str,
        *,
        quad_elevation: int = 8,
        orthonormal: bool = True,
        full_curl: bool = False,
    ) -> None:
        self.mesh = mesh
        self.layout = DofLayout(formulation, k, mesh.n_elements, mesh.n_faces)
        self.k = k
        self.formulation = formulation
        self.orthonormal = orthonormal
        self.full_curl = full_curl
        self.op_degree = operator_degree(k)
        self.rhs_degree = max(rhs_degree(k, quad_elevation), self.op_degree)
        self._faces = [
            FaceSpaces(mesh, f, formulation, k, self.op_degree, orthonormal) for f in range(mesh.n_faces)
        ]
        for fs in self._faces:
            if fs.x_space.dim != self.layout.x_face:
                raise ConditioningError(f"face {fs.face}: X block size {fs.x_space.dim} != {self.layout.x_face}")
        self._elements: list[ElementSpaces | None] = [None] * mesh.n_elements

    def face_spaces(self, f: int) -> FaceSpaces:
        return self._faces[f]

    def element_spaces(self, t: int) -> ElementSpaces:
        spaces = self._elements[t]
        if spaces is None:
            spaces = ElementSpaces(
                self.mesh, t, self.k, self.op_degree, self.orthonormal, self.full_curl,
                with_curl=self.formulation == "potential",
            )
            self._elements[t] = spaces
        return spaces

    # -- local operators --------------------------------------------------

    def element_operators(self, t: int) -> ElementOperators:
        mesh, lay = self.mesh, self.layout
        es = self.element_spaces(t)
        faces = mesh.element_faces[t]
        m = len(faces)
        nxt, nxf, nyt, nyf = lay.x_element, lay.x_face, lay.y_element, lay.y_face
        nx, ny = nxt + m * nxf, nyt + m * nyf

        w = es.rule.weights
        pts = es.rule.points3d
        V = es.vector.values(pts)
        Vc = es.vector.curls(pts)
        Vd = es.vector.divergences(pts)
        P = es.scalar.values(pts)
        Pg = es.scalar.gradients(pts)

        vector_mass = np.einsum("n,nic,njc->ij", w, V, V)
        curl_mass = np.einsum("n,nic,njc->ij", w, Vc, Vc)
        scalar_mass = np.einsum("n,ni,nj->ij", w, P, P)
        grad_mass = np.einsum("n,nic,njc->ij", w, Pg, Pg)

        grad_rhs = np.zeros((nxt, ny))
        grad_rhs[:, :nyt] = -np.einsum("n,ni,nj->ij", w, Vd, P)

        potential = self.formulation == "potential"
        if potential:
            R = es.curl_space.values(pts)
            Rc = es.curl_space.curls(pts)
            curl_space_mass = np.einsum("n,nic,njc->ij", w, R, R)
            curl_rhs = np.zeros((R.shape[1], nx))
            curl_rhs[:, :nxt] = np.einsum("n,nic,njc->ij", w, Rc, V)

        stab = np.zeros((nx, nx))
        c = np.zeros((ny, ny))
        c[:nyt, :nyt] = scalar_mass
        d = np.zeros((ny, ny))

        for l, (f, sign) in enumerate(zip(faces, mesh.element_signs[t])):
            fs = self._faces[int(f)]
            normal = sign * mesh.face_normal[int(f)]
            wf = fs.rule.weights
            emb = fs.rule.embedded
            hF = fs.diameter
            xs = slice(nxt + l * nxf, nxt + (l + 1) * nxf)
            ys = slice(nyt + l * nyf, nyt + (l + 1) * nyf)

            Psi = fs.scalar.values(fs.rule.points)
            Xs = fs.x_space.values(fs.rule.points)
            Vf = es.vector.values(emb)
            Vn = Vf @ normal
            Vt = Vf @ fs.frame.T
            Pf = es.scalar.values(emb)

            grad_rhs[:, ys] += np.einsum("n,ni,nj->ij", wf, Vn, Psi)

            mx = np.einsum("n,nac,nbc->ab", wf, Xs, Xs)
            trace = _solve_spd(mx, np.einsum("n,nac,nic->ai", wf, Xs, Vt), f"face {int(f)} trace projection")
            diff = np.zeros((nxf, nx))
            diff[:, :nxt] = trace
            diff[:, xs] = -np.eye(nxf)
            stab += diff.T @ mx @ diff / hF

            c[ys, ys] += hF * np.einsum("n,ni,nj->ij", wf, Psi, Psi)
            jump = np.zeros((len(wf), ny))
            jump[:, :nyt] = -Pf
            jump[:, ys] = Psi
            d += hF * np.einsum("n,ni,nj->ij", wf, jump, jump)

            if potential:
                Rf = es.curl_space.values(emb)
                rxn = np.cross(Rf, normal) @ fs.frame.T
                curl_rhs[:, xs] += np.einsum("n,nic,njc->ij", wf, rxn, Xs)

        grad = _solve_spd(vector_mass, grad_rhs, f"element {t} vector mass")
        if potential:
            curl = _solve_spd(curl_space_mass, curl_rhs, f"element {t} curl space mass")
            consistency = curl_rhs.T @ curl
        else:
            curl, curl_space_mass = None, None
            consistency = _pad(curl_mass, nx, nx)
        a = consistency + stab
        b = _pad(grad_rhs, nx, ny)

        return ElementOperators(
            element=t,
            faces=np.array(faces),
            grad=grad,
            grad_rhs=grad_rhs,
            curl=curl,
            curl_space_mass=curl_space_mass,
            curl_mass=curl_mass,
            vector_mass=vector_mass,
            scalar_mass=scalar_mass,
            grad_mass=grad_mass,
            stab=0.5 * (stab + stab.T),
            a=0.5 * (a + a.T),
            b=b,
            c=0.5 * (c + c.T),
            d=0.5 * (d + d.T),
        )

    def build_operators(self, threads: int = 1) -> LocalOperatorSet:
        """All element operators, computed concurrently; order is the element order."""
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                ops = list(pool.map(self.element_operators, range(self.mesh.n_elements)))
        else:
            ops = [self.element_operators(t) for t in range(self.mesh.n_elements)]
        logger.info(
            "local operators: %d elements, k=%d, %s formulation", len(ops), self.k, self.formulation
        )
        return LocalOperatorSet(self, ops)

    # -- interpolation ----------------------------------------------------

    def _rhs_element_rule(self, t: int) -> QuadRule:
        return element_rule(self.mesh, t, self.rhs_degree)

    def _rhs_face_rule(self, f: int) -> QuadRule:
        return face_rule(self.mesh, f, self.rhs_degree)

    def interpolate_element_X(self, t: int, sampler: VectorSampler) -> NDArray:
        rule = self._rhs_element_rule(t)
        return project(self.element_spaces(t).vector, rule, sampler(rule.points3d))

    def interpolate_face_X(self, f: int, sampler: VectorSampler) -> NDArray:
        fs = self._faces[f]
        rule = self._rhs_face_rule(f)
        tangential = sampler(rule.embedded) @ fs.frame.T
        return project(fs.x_space, rule, tangential)

    def interpolate_element_Y(self, t: int, sampler: ScalarSampler) -> NDArray:
        rule = self._rhs_element_rule(t)
        return project(self.element_spaces(t).scalar, rule, sampler(rule.points3d))

    def interpolate_face_Y(self, f: int, sampler: ScalarSampler) -> NDArray:
        fs = self._faces[f]
        rule = self._rhs_face_rule(f)
        return project(fs.scalar, rule, sampler(rule.embedded))

    def interpolate_X(self, sampler: VectorSampler) -> HybridVector:
        out = HybridVector.zeros(self.layout, "X", self.mesh)
        for t in range(self.mesh.n_elements):
            out.values[self.layout.element_slice("X", t)] = self.interpolate_element_X(t, sampler)
        for f in range(self.mesh.n_faces):
            out.values[self.layout.face_slice("X", f)] = self.interpolate_face_X(f, sampler)
        return out

    def interpolate_Y(self, sampler: ScalarSampler) -> HybridVector:
        out = HybridVector.zeros(self.layout, "Y", self.mesh)
        for t in range(self.mesh.n_elements):
            out.values[self.layout.element_slice("Y", t)] = self.interpolate_element_Y(t, sampler)
        for f in range(self.mesh.n_faces):
            out.values[self.layout.face_slice("Y", f)] = self.interpolate_face_Y(f, sampler)
        return out

    def boundary_values(
        self, space: str, sampler: Callable[[NDArray], NDArray] | None, faces: Sequence[int]
    ) -> NDArray:
        """Stacked face blocks of the interpolant on the given faces (zeros without a sampler)."""
        n = self.layout.block(space, "face")
        if sampler is None:
            return np.zeros(n * len(faces))
        interp = self.interpolate_face_X if space == "X" else self.interpolate_face_Y
        return np.concatenate([interp(int(f), sampler) for f in faces]) if len(faces) else np.zeros(0)

    # -- element source terms and direct evaluation ----------------------

    def element_source(self, t: int, source: VectorSampler) -> NDArray:
        """(f, curl w)_T for the field formulation, (f, w)_T for the potential one."""
        rule = self._rhs_element_rule(t)
        basis = self.element_spaces(t).vector
        vals = source(rule.points3d)
        phi = basis.curls(rule.points3d) if self.formulation == "field" else basis.values(rule.points3d)
        return np.einsum("n,nic,nc->i", rule.weights, phi, vals)

    def element_field_norms(self, t: int, coeffs: NDArray) -> tuple[float, float]:
        """(||v_T||^2, ||curl v_T||^2) on element t by direct quadrature of the field."""
        rule = self._rhs_element_rule(t)
        basis = self.element_spaces(t).vector
        v = np.einsum("nic,i->nc", basis.values(rule.points3d), coeffs)
        cv = np.einsum("nic,i->nc", basis.curls(rule.points3d), coeffs)
        return (
            float(np.einsum("n,nc,nc->", rule.weights, v, v)),
            float(np.einsum("n,nc,nc->", rule.weights, cv, cv)),
        )

    def evaluate_grad_reconstruction(self, ops: ElementOperators, y_local: NDArray, points: NDArray) -> NDArray:
        """Values of G_T q at points."""
        basis = self.element_spaces(ops.element).vector
        return np.einsum("nic,i->nc", basis.values(points), ops.grad @ y_local)

    def evaluate_curl_reconstruction(self, ops: ElementOperators, x_local: NDArray, points: NDArray) -> NDArray:
        """Values of C_T v at points (potential formulation)."""
        if ops.curl is None:
            raise ConfigError("curl reconstruction is only built for the potential formulation")
        space = self.element_spaces(ops.element).curl_space
        return np.einsum("nic,i->nc", space.values(points), ops.curl @ x_local)

    def evaluate_element_X(self, t: int, coeffs: NDArray, points: NDArray) -> NDArray:
        return np.einsum("nic,i->nc", self.element_spaces(t).vector.values(points), coeffs)

    def evaluate_element_Y(self, t: int, coeffs: NDArray, points: NDArray) -> NDArray:
        return self.element_spaces(t).scalar.values(points) @ coeffs


def grad_reconstruction(disc: Discretization, t: int) -> NDArray:
    """Matrix of G_T^{k+1}: local Y unknowns to P^{k+1}(T)^3 coordinates."""
    return disc.element_operators(t).grad


def curl_reconstruction(disc: Discretization, t: int) -> NDArray:
    """Matrix of C_T^k: local X unknowns to coordinates of the curl target space."""
    curl = disc.element_operators(t).curl
    if curl is None:
        raise ConfigError("curl reconstruction requires the potential formulation")
    return curl


def stabilization_field(disc: Discretization, t: int) -> NDArray:
    if disc.formulation != "field":
        raise ConfigError("field stabilization requires the field formulation")
    return disc.element_operators(t).stab


def stabilization_potential(disc: Discretization, t: int) -> NDArray:
    if disc.formulation != "potential":
        raise ConfigError("potential stabilization requires the potential formulation")
    return disc.element_operators(t).stab


def lagrange_forms(disc: Discretization, t: int) -> tuple[NDArray, NDArray]:
    ops = disc.element_operators(t)
    return ops.c, ops.d
