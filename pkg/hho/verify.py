"""
Property suite behind ``cli.py verify``: quadrature oracles, dimensions,
commutation identities, the polynomial decomposition bound, coercivity,
condensation equivalence and the structure-preservation test.

Each check returns a CheckResult; nothing here raises on a failed property.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import factorial
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from hho.assembly import assemble, apply_dirichlet, solve
from hho.errors import MeshValidationError
from hho.localops import Discretization
from hho.mesh import Mesh, build_mesh, generate_cubic, generate_tetrahedral, validate
from hho.polyspaces import (
    PolynomialDecomposer,
    dim_scalar,
    exponents,
    expected_dimension,
    subspace_grad_F,
    subspace_pflat_F,
    subspace_rot_T,
    vector_basis,
)
from hho.quadrature import element_rule, face_rule
from hho.schemes import (
    a_priori_bound,
    coercivity_defect,
    cos_field,
    sin_potential,
    structure_test,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _result(name: str, value: float, tolerance: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(value) and value <= tolerance)
    return CheckResult(name, passed, float(value), tolerance, detail)


# -- reference cells --------------------------------------------------------


def unit_tetrahedron() -> Mesh:
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return build_mesh(v, [[(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]])


def unit_prism() -> Mesh:
    """{x, y >= 0, x + y <= 1, 0 <= z <= 1}."""
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1]])
    return build_mesh(v, [[(0, 1, 2), (3, 4, 5), (0, 1, 4, 3), (1, 2, 5, 4), (2, 0, 3, 5)]])


def affine_cube(rng: np.random.Generator) -> Mesh:
    """Unit cube under a random well-conditioned affine map."""
    cube = generate_cubic(1)
    a = np.eye(3) + 0.3 * rng.uniform(-1.0, 1.0, (3, 3))
    if np.linalg.det(a) < 0.0:
        a[:, 0] *= -1.0
    verts = cube.vertices @ a.T + rng.uniform(-1.0, 1.0, 3)
    cells = [[cube.face_loops[int(f)] for f in cube.element_faces[0]]]
    return build_mesh(verts, cells)


def tetrahedron_oracle(a: int, b: int, c: int) -> float:
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def triangle_oracle(a: int, b: int) -> float:
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def _monomial(points: NDArray, alpha: NDArray) -> NDArray:
    return np.prod(points ** alpha, axis=1)


# -- random polynomials -----------------------------------------------------


class RandomPolynomial:
    """Scalar polynomial with random coefficients in global monomials x^alpha."""

    def __init__(self, degree: int, rng: np.random.Generator) -> None:
        self.table = exponents(3, degree)
        self.coeffs = rng.standard_normal(len(self.table))

    def __call__(self, x: NDArray) -> NDArray:
        return np.prod(x[:, None, :] ** self.table[None], axis=2) @ self.coeffs

    def gradient(self, x: NDArray) -> NDArray:
        out = np.zeros((x.shape[0], 3))
        for j in range(3):
            low = self.table.copy()
            low[:, j] = np.maximum(low[:, j] - 1, 0)
            out[:, j] = (np.prod(x[:, None, :] ** low[None], axis=2) * self.table[:, j]) @ self.coeffs
        return out


class RandomVectorPolynomial:
    def __init__(self, degree: int, rng: np.random.Generator) -> None:
        self.components = [RandomPolynomial(degree, rng) for _ in range(3)]

    def __call__(self, x: NDArray) -> NDArray:
        return np.column_stack([c(x) for c in self.components])

    def curl(self, x: NDArray) -> NDArray:
        g = [c.gradient(x) for c in self.components]
        return np.column_stack([
            g[2][:, 1] - g[1][:, 2],
            g[0][:, 2] - g[2][:, 0],
            g[1][:, 0] - g[0][:, 1],
        ])


# -- checks -----------------------------------------------------------------


def check_quadrature(k_max: int = 3) -> list[CheckResult]:
    d = 2 * (k_max + 2) + 2
    out = []

    tet = unit_tetrahedron()
    rule = element_rule(tet, 0, d)
    err = max(
        abs(rule.integrate(_monomial(rule.points, a)) - tetrahedron_oracle(*a)) / tetrahedron_oracle(*a)
        for a in exponents(3, d)
    )
    out.append(_result("quadrature: unit tetrahedron monomials", err, 1e-11, f"degree {d}"))

    cube = generate_cubic(1)
    rule = element_rule(cube, 0, d)
    err = max(
        abs(rule.integrate(_monomial(rule.points, a)) * np.prod(a + 1) - 1.0) for a in exponents(3, d)
    )
    out.append(_result("quadrature: unit cube monomials", err, 1e-11, f"degree {d}"))

    tets = generate_tetrahedral(1)
    rules = [element_rule(tets, t, d) for t in range(tets.n_elements)]
    err = max(
        abs(sum(r.integrate(_monomial(r.points, a)) for r in rules) * np.prod(a + 1) - 1.0)
        for a in exponents(3, d)
    )
    out.append(_result("quadrature: Kuhn tetrahedra sum to cube", err, 1e-11, f"degree {d}"))

    prism = unit_prism()
    rule = element_rule(prism, 0, d)
    err = 0.0
    for a in exponents(3, d):
        exact = triangle_oracle(a[0], a[1]) / (a[2] + 1)
        err = max(err, abs(rule.integrate(_monomial(rule.points, a)) - exact) / exact)
    out.append(_result("quadrature: triangular prism monomials", err, 1e-11, f"degree {d}"))

    sums = max(
        abs(element_rule(m, 0, d).measure - m.element_volume[0])
        for m in (tet, cube, prism)
    )
    out.append(_result("quadrature: weights sum to volume", sums, 1e-13))

    base = int(np.flatnonzero(np.abs(tet.face_normal[:, 2]) > 0.9)[0])
    frule = face_rule(tet, base, d)
    err = 0.0
    for a in exponents(2, d):
        vals = frule.embedded[:, 0] ** a[0] * frule.embedded[:, 1] ** a[1]
        err = max(err, abs(frule.integrate(vals) - triangle_oracle(*a)) / triangle_oracle(*a))
    out.append(_result("quadrature: triangle face monomials", err, 1e-11, f"degree {d}"))

    swapped = tet.face_frame[base][::-1]
    r1 = face_rule(tet, base, d)
    r2 = face_rule(tet, base, d, frame=swapped)
    g = lambda p: np.sum(p**2, axis=1) ** 2
    err = abs(r1.integrate(g(r1.points)) - r2.integrate(g(r2.points)))
    out.append(_result("quadrature: face frame invariance", err, 1e-13))
    return out


def check_dimensions(k_max: int = 3) -> list[CheckResult]:
    out = []
    cube = generate_cubic(1)
    tet = generate_tetrahedral(1)
    worst = 0
    incl = 0.0
    for mesh in (cube, tet):
        for k in range(k_max + 1):
            rule = element_rule(mesh, 0, 2 * (k + 2))
            vec = vector_basis(mesh, k + 1, element=0, rule=rule)
            amb = vector_basis(mesh, k, element=0, rule=rule)
            worst = max(worst, abs(vec.dim - 3 * dim_scalar(3, k + 1)))
            worst = max(worst, abs(subspace_rot_T(amb).dim - expected_dimension("rot-element", k)))
            f = int(mesh.element_faces[0][0])
            frule = face_rule(mesh, f, 2 * (k + 2))
            tang = vector_basis(mesh, k + 1, face=f, rule=frule)
            grad = subspace_grad_F(tang)
            flat = subspace_pflat_F(tang)
            worst = max(worst, abs(grad.dim - ((k + 3) * (k + 4) // 2 - 1)))
            worst = max(worst, abs(flat.dim - ((k + 1) * (k + 2) + (k + 3))))
            m = tang.mass
            proj = flat.columns @ (flat.columns.T @ m @ grad.columns)
            diff = proj - grad.columns
            incl = max(incl, float(np.sqrt(np.max(np.diag(diff.T @ m @ diff)))))
    rule = element_rule(cube, 0, 8)
    r2 = subspace_rot_T(vector_basis(cube, 2, element=0, rule=rule)).dim
    p2 = vector_basis(cube, 2, element=0, rule=rule).dim
    out.append(_result("dimensions: closed-form counts", worst, 0))
    out.append(_result("dimensions: rot space of degree 2 is 26", abs(r2 - 26), 0))
    out.append(_result("dimensions: vector P2 is 30", abs(p2 - 30), 0))
    out.append(_result("dimensions: gradient face space inside flat space", incl, 1e-11))
    return out


def _local_interpolants(disc: Discretization, t: int, u=None, p=None) -> tuple[NDArray | None, NDArray | None]:
    faces = disc.mesh.element_faces[t]
    x = y = None
    if u is not None:
        x = np.concatenate([disc.interpolate_element_X(t, u)] + [disc.interpolate_face_X(int(f), u) for f in faces])
    if p is not None:
        y = np.concatenate([disc.interpolate_element_Y(t, p)] + [disc.interpolate_face_Y(int(f), p) for f in faces])
    return x, y


def commutation_errors(mesh: Mesh, t: int, k: int, rng: np.random.Generator, full_curl: bool = False) -> tuple[float, float]:
    """Relative max errors of G_T(I_Y q) - grad q and C_T(I_X v) - curl v on one element."""
    disc = Discretization(mesh, k, "potential", full_curl=full_curl)
    ops = disc.element_operators(t)
    pts = element_rule(mesh, t, 2 * k + 4).points3d

    q = RandomPolynomial(k + 2, rng)
    _, y = _local_interpolants(disc, t, p=q)
    g = disc.evaluate_grad_reconstruction(ops, y, pts)
    exact = q.gradient(pts)
    grad_err = float(np.abs(g - exact).max() / max(np.abs(exact).max(), 1e-300))

    v = RandomVectorPolynomial(k + 1, rng)
    x, _ = _local_interpolants(disc, t, u=v)
    c = disc.evaluate_curl_reconstruction(ops, x, pts)
    exact = v.curl(pts)
    curl_err = float(np.abs(c - exact).max() / max(np.abs(exact).max(), 1e-300))
    return grad_err, curl_err


def check_commutation(k_max: int = 3, seed: int = 20211022, samples: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    g_err = c_err = 0.0
    for mesh in (generate_cubic(1), generate_tetrahedral(1)):
        for k in range(k_max + 1):
            for _ in range(samples):
                g, c = commutation_errors(mesh, 0, k, rng)
                g_err, c_err = max(g_err, g), max(c_err, c)
    return [
        _result("commutation: gradient reconstruction", g_err, 1e-10),
        _result("commutation: curl reconstruction", c_err, 1e-10),
    ]


def check_decomposition(q_max: int = 3, samples: int = 200, seed: int = 20211022) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cells = [(generate_cubic(1), 0), (generate_tetrahedral(1), 0), (affine_cube(rng), 0)]
    worst_ratio = worst_res = 0.0
    for mesh, t in cells:
        for q in range(q_max + 1):
            dec = PolynomialDecomposer(mesh, t, q)
            for _ in range(samples):
                r = dec.decompose(rng.standard_normal(dec.vector.dim))
                worst_ratio = max(worst_ratio, r.bound_ratio)
                worst_res = max(worst_res, r.residual)
    return [
        _result("decomposition: reassembly residual", worst_res, 1e-10),
        _result("decomposition: rot part bounded by 2 h_T ||curl p||", worst_ratio, 2.0),
    ]


def check_coercivity(seed: int = 20211022) -> list[CheckResult]:
    mesh = generate_cubic(2)
    defect = max(coercivity_defect(mesh, k, seed) for k in (0, 1))
    norm_z, norm_f = a_priori_bound(mesh, 0)
    return [
        _result("field: coercivity identity", defect, 1e-12),
        _result("field: a priori bound with constant 1", norm_z / norm_f, 1.0 + 1e-12),
    ]


def condensation_gap(mesh: Mesh, k: int, formulation: str) -> float:
    case = cos_field() if formulation == "field" else sin_potential()
    stab = "ch" if formulation == "field" else "dh"
    sols = []
    for condensed in (True, False):
        disc = Discretization(mesh, k, formulation)
        system = assemble(disc, stab, source=case.f, condensed=condensed)
        apply_dirichlet(system, case.u, case.p)
        r = solve(system)
        sols.append(np.concatenate([r.u.values, r.p.values]))
    return float(np.linalg.norm(sols[0] - sols[1]) / np.linalg.norm(sols[1]))


def check_condensation(k_max: int = 1) -> list[CheckResult]:
    worst = 0.0
    for mesh in (generate_cubic(2), generate_tetrahedral(2)):
        for formulation in ("field", "potential"):
            for k in range(min(k_max, 1) + 1):
                worst = max(worst, condensation_gap(mesh, k, formulation))
    return [_result("assembly: condensed equals monolithic solve", worst, 1e-9)]


def check_structure() -> list[CheckResult]:
    rep = structure_test(generate_tetrahedral(2), 0, quad_elevation=16)
    return [
        _result("structure: u_h vanishes for a gradient source", rep.u_relative, 1e-8),
        _result("structure: p_h equals the interpolated potential", rep.p_relative, 1e-8),
    ]


def check_mesh(mesh: Mesh, name: str = "mesh") -> CheckResult:
    try:
        rep = validate(mesh)
    except MeshValidationError as e:
        return CheckResult(f"{name}: invariants", False, float("nan"), 0.0, str(e))
    return _result(f"{name}: closure residual", rep.max_closure_residual, 1e-12)


def check_meshes() -> list[CheckResult]:
    return [check_mesh(generate_cubic(2), "cubic mesh"), check_mesh(generate_tetrahedral(2), "tetrahedral mesh")]


SUITE: dict[str, Callable[..., list[CheckResult]]] = {
    "meshes": lambda **kw: check_meshes(),
    "quadrature": lambda **kw: check_quadrature(kw["k_max"]),
    "dimensions": lambda **kw: check_dimensions(kw["k_max"]),
    "commutation": lambda **kw: check_commutation(kw["k_max"], kw["seed"]),
    "decomposition": lambda **kw: check_decomposition(kw["k_max"], kw["samples"], kw["seed"]),
    "coercivity": lambda **kw: check_coercivity(kw["seed"]),
    "condensation": lambda **kw: check_condensation(),
    "structure": lambda **kw: check_structure(),
}


def run_suite(seed: int = 20211022, k_max: int = 3, samples: int = 200, only: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name, check in SUITE.items():
        if only and name not in only:
            continue
        logger.info("running %s checks", name)
        results.extend(check(seed=seed, k_max=k_max, samples=samples))
    return results
