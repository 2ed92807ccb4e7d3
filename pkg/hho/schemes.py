"""
Problem drivers: manufactured solutions, discrete error norms, convergence
studies and the stability probes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from hho.assembly import SOLVER_OK, AssembledSystem, apply_dirichlet, assemble, check_stabilization, solve
from hho.errors import ConfigError
from hho.localops import Discretization, HybridVector, LocalOperatorSet
from hho.mesh import Mesh, generate_cubic, generate_tetrahedral
from hho.quadrature import element_rule

logger = logging.getLogger(__name__)

PI = np.pi
DEFAULT_STABILIZATION = {"field": "ch", "potential": "dh"}
MESH_FAMILIES = {"cubic": generate_cubic, "tetrahedral": generate_tetrahedral}

Field = Callable[[NDArray], NDArray]


def _zero_vector(x: NDArray) -> NDArray:
    return np.zeros((x.shape[0], 3))


def _zero_scalar(x: NDArray) -> NDArray:
    return np.zeros(x.shape[0])


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    formulation: str
    u: Field
    curl_u: Field
    curl_curl_u: Field
    div_u: Field
    p: Field
    grad_p: Field
    f: Field
    boundary: str = "from-exact"

    def check(self, rng: np.random.Generator, n_points: int = 64) -> float:
        """Max violation of the defining identities at random points of the unit cube."""
        x = rng.random((n_points, 3))
        div = float(np.abs(self.div_u(x)).max())
        if self.formulation == "field":
            mismatch = self.f(x) - self.curl_u(x)
        else:
            mismatch = self.f(x) - self.curl_curl_u(x) - self.grad_p(x)
        return max(div, float(np.abs(mismatch).max()))


def cos_field() -> ManufacturedCase:
    """Magnetic field u = (cos(pi y)cos(pi z), cos(pi x)cos(pi z), cos(pi x)cos(pi y)), p = 0."""

    def u(x):
        cx, cy, cz = np.cos(PI * x).T
        return np.column_stack([cy * cz, cx * cz, cx * cy])

    def curl_u(x):
        cx, cy, cz = np.cos(PI * x).T
        sx, sy, sz = np.sin(PI * x).T
        return PI * np.column_stack([cx * (sz - sy), cy * (sx - sz), cz * (sy - sx)])

    def f(x):
        cx, cy, cz = np.cos(PI * x).T
        sx, sy, sz = np.sin(PI * x).T
        return np.column_stack([PI * cx * sz - PI * cx * sy, PI * sx * cy - PI * cy * sz, PI * sy * cz - PI * sx * cz])

    def curl_curl_u(x):
        return 2.0 * PI**2 * u(x)

    return ManufacturedCase(
        "cos_field", "field", u, curl_u, curl_curl_u, _zero_scalar, _zero_scalar, _zero_vector, f,
    )


def sin_potential() -> ManufacturedCase:
    """Vector potential u = (sin(pi y)sin(pi z), sin(pi x)sin(pi z), sin(pi x)sin(pi y)), p = sin sin sin."""

    def u(x):
        sx, sy, sz = np.sin(PI * x).T
        return np.column_stack([sy * sz, sx * sz, sx * sy])

    def curl_u(x):
        cx, cy, cz = np.cos(PI * x).T
        sx, sy, sz = np.sin(PI * x).T
        return PI * np.column_stack([sx * (cy - cz), sy * (cz - cx), sz * (cx - cy)])

    def curl_curl_u(x):
        return 2.0 * PI**2 * u(x)

    def p(x):
        return np.prod(np.sin(PI * x), axis=1)

    def grad_p(x):
        cx, cy, cz = np.cos(PI * x).T
        sx, sy, sz = np.sin(PI * x).T
        return PI * np.column_stack([cx * sy * sz, sx * cy * sz, sx * sy * cz])

    def f(x):
        sx, sy, sz = np.sin(PI * x).T
        cx, cy, cz = np.cos(PI * x).T
        return np.column_stack([
            2.0 * PI**2 * sy * sz + PI * cx * sy * sz,
            2.0 * PI**2 * sx * sz + PI * sx * cy * sz,
            2.0 * PI**2 * sx * sy + PI * sx * sy * cz,
        ])

    return ManufacturedCase(
        "sin_potential", "potential", u, curl_u, curl_curl_u, _zero_scalar, p, grad_p, f, "homogeneous",
    )


def gradient_source() -> ManufacturedCase:
    """Potential formulation with f = grad(psi): exact u = 0, p = psi = sin sin sin."""
    base = sin_potential()
    return ManufacturedCase(
        "gradient_source", "potential", _zero_vector, _zero_vector, _zero_vector, _zero_scalar,
        base.p, base.grad_p, base.grad_p, "homogeneous",
    )


def polynomial_field(degree: int) -> ManufacturedCase:
    """Divergence-free polynomial field u = (y^d, z^d, x^d), p = 0."""
    if degree < 1:
        raise ConfigError("polynomial_field needs degree >= 1")
    d = degree

    def u(x):
        return np.column_stack([x[:, 1] ** d, x[:, 2] ** d, x[:, 0] ** d])

    def curl_u(x):
        return -d * np.column_stack([x[:, 2] ** (d - 1), x[:, 0] ** (d - 1), x[:, 1] ** (d - 1)])

    def curl_curl_u(x):
        if d < 2:
            return _zero_vector(x)
        return -d * (d - 1) * np.column_stack([x[:, 1] ** (d - 2), x[:, 2] ** (d - 2), x[:, 0] ** (d - 2)])

    return ManufacturedCase(
        f"polynomial_field_{d}", "field", u, curl_u, curl_curl_u, _zero_scalar, _zero_scalar,
        _zero_vector, curl_u,
    )


CASES: dict[str, Callable[[], ManufacturedCase]] = {
    "cos_field": cos_field,
    "sin_potential": sin_potential,
    "gradient_source": gradient_source,
    "polynomial_field": lambda: polynomial_field(2),
}


def default_case(formulation: str) -> ManufacturedCase:
    return cos_field() if formulation == "field" else sin_potential()


# -- error norms ------------------------------------------------------------


@dataclass
class ErrorReport:
    formulation: str
    k: int
    stabilization: str
    n_elements: int
    meshsize: float
    n_dofs: int
    solve_time: float
    residual: float
    energy: float
    l2: float
    lagrange: float
    lagrange_grad: float
    energy_rel: float
    l2_rel: float
    lagrange_rel: float
    lagrange_grad_rel: float
    solver_status: str = SOLVER_OK
    energy_ref: float = field(default=0.0, repr=False)
    l2_ref: float = field(default=0.0, repr=False)
    lagrange_ref: float = field(default=0.0, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)


def _relative(value: float, reference: float) -> float:
    return value / reference if reference > 0.0 else value


@dataclass(frozen=True)
class NormSet:
    energy: float
    l2: float
    lagrange: float
    lagrange_grad: float
    y_norm: float


def discrete_norms(ops_set: LocalOperatorSet, u: HybridVector, p: HybridVector, stabilization: str) -> NormSet:
    """Quadratic-form norms of a hybrid pair.

    energy: (||curl v_T||^2 + s_h(v, v))^{1/2}; l2: ||v_T||; lagrange: c_h^{1/2} for the field
    formulation, (sum h_T^2 ||grad r_T||^2 + d_h)^{1/2} for the potential one, or the
    gradient-reconstruction measure without multiplier stabilization.
    """
    disc = ops_set.discretization
    mesh = disc.mesh
    nxt = disc.layout.x_element
    energy = l2 = lag_c = lag_flat = lag_grad = 0.0
    for t, ops in enumerate(ops_set.operators):
        x = u.local(mesh, t)
        y = p.local(mesh, t)
        xt = x[:nxt]
        hT2 = float(mesh.element_diameter[t]) ** 2
        energy += float(xt @ ops.curl_mass @ xt + x @ ops.stab @ x)
        l2 += float(xt @ ops.vector_mass @ xt)
        lag_c += float(y @ ops.c @ y)
        yt = y[:disc.layout.y_element]
        lag_flat += hT2 * float(yt @ ops.grad_mass @ yt) + float(y @ ops.d @ y)
        g = ops.grad @ y
        lag_grad += hT2 * float(g @ ops.vector_mass @ g)
    if stabilization == "none":
        lagrange = lag_grad
    elif disc.formulation == "field":
        lagrange = lag_c
    else:
        lagrange = lag_flat
    clip = lambda v: float(np.sqrt(max(v, 0.0)))
    return NormSet(clip(energy), clip(l2), clip(lagrange), clip(lag_grad), clip(lag_c))


def compute_errors(
    ops_set: LocalOperatorSet,
    u_h: HybridVector,
    p_h: HybridVector,
    u_hat: HybridVector,
    p_hat: HybridVector,
    stabilization: str,
) -> tuple[NormSet, NormSet]:
    """Norms of the errors and of the interpolants (for relative errors)."""
    return (
        discrete_norms(ops_set, u_h - u_hat, p_h - p_hat, stabilization),
        discrete_norms(ops_set, u_hat, p_hat, stabilization),
    )


@dataclass(frozen=True)
class CaseOptions:
    stabilization: str | None = None
    quad_elevation: int = 8
    threads: int = 1
    condensed: bool = True
    symmetric: bool = False
    full_curl: bool = False
    orthonormal: bool = True


@dataclass
class CaseRun:
    """Everything a single solve produced."""

    discretization: Discretization
    operators: LocalOperatorSet
    u: HybridVector
    p: HybridVector
    u_hat: HybridVector
    p_hat: HybridVector
    report: ErrorReport
    system: AssembledSystem | None = None


def solve_case(mesh: Mesh, k: int, case: ManufacturedCase, options: CaseOptions = CaseOptions()) -> CaseRun:
    formulation = case.formulation
    stabilization = options.stabilization or DEFAULT_STABILIZATION[formulation]
    check_stabilization(formulation, stabilization, mesh)
    disc = Discretization(
        mesh, k, formulation,
        quad_elevation=options.quad_elevation,
        orthonormal=options.orthonormal,
        full_curl=options.full_curl,
    )
    system = assemble(
        disc, stabilization, source=case.f,
        condensed=options.condensed, symmetric=options.symmetric, threads=options.threads,
    )
    if case.boundary == "from-exact":
        apply_dirichlet(system, case.u, case.p)
    result = solve(system)
    u_hat = disc.interpolate_X(case.u)
    p_hat = disc.interpolate_Y(case.p)
    err, ref = compute_errors(system.operators, result.u, result.p, u_hat, p_hat, stabilization)
    report = ErrorReport(
        formulation=formulation,
        k=k,
        stabilization=stabilization,
        n_elements=mesh.n_elements,
        meshsize=mesh.h,
        n_dofs=result.n_dofs,
        solve_time=result.solve_time,
        residual=result.residual,
        solver_status=result.status,
        energy=err.energy,
        l2=err.l2,
        lagrange=err.lagrange,
        lagrange_grad=err.lagrange_grad,
        energy_rel=_relative(err.energy, ref.energy),
        l2_rel=_relative(err.l2, ref.l2),
        lagrange_rel=_relative(err.lagrange, ref.lagrange),
        lagrange_grad_rel=_relative(err.lagrange_grad, ref.lagrange_grad),
        energy_ref=ref.energy,
        l2_ref=ref.l2,
        lagrange_ref=ref.lagrange,
    )
    logger.info(
        "%s k=%d h=%.4f: energy %.3e, l2 %.3e, lagrange %.3e (rel %.3e)",
        case.name, k, mesh.h, report.energy_rel, report.l2_rel, report.lagrange, report.lagrange_rel,
    )
    return CaseRun(disc, system.operators, result.u, result.p, u_hat, p_hat, report, system)


def run_case(mesh: Mesh, k: int, case: ManufacturedCase, options: CaseOptions = CaseOptions()) -> ErrorReport:
    return solve_case(mesh, k, case, options).report


# -- convergence ------------------------------------------------------------


def eoc(e1: float, e2: float, h1: float, h2: float) -> float:
    if e1 <= 0.0 or e2 <= 0.0:
        return float("nan")
    return float(np.log(e1 / e2) / np.log(h1 / h2))


def build_mesh(family: str, n: int) -> Mesh:
    try:
        return MESH_FAMILIES[family](n)
    except KeyError:
        raise ConfigError(f"unknown mesh family {family!r} (choose from {', '.join(MESH_FAMILIES)})")


def default_refinements(family: str, k: int) -> tuple[int, ...]:
    """Mesh sequence of the reference convergence runs; k = 0 gets one extra level."""
    if family not in MESH_FAMILIES:
        raise ConfigError(f"unknown mesh family {family!r} (choose from {', '.join(MESH_FAMILIES)})")
    base = (2, 4, 8) if family == "cubic" else (1, 2, 4)
    return base + (2 * base[-1],) if k == 0 else base


def run_convergence(
    family: str,
    refinements: Sequence[int],
    k: int,
    case: ManufacturedCase,
    options: CaseOptions = CaseOptions(),
) -> list[ErrorReport]:
    reports = []
    for n in refinements:
        reports.append(run_case(build_mesh(family, n), k, case, options))
    for prev, cur in zip(reports, reports[1:]):
        logger.info(
            "EOC h=%.4f: energy %.2f, l2 %.2f, lagrange %.2f",
            cur.meshsize,
            eoc(prev.energy_rel, cur.energy_rel, prev.meshsize, cur.meshsize),
            eoc(prev.l2_rel, cur.l2_rel, prev.meshsize, cur.meshsize),
            eoc(prev.lagrange, cur.lagrange, prev.meshsize, cur.meshsize),
        )
    return reports


# -- probes -----------------------------------------------------------------


def _random_hybrid(disc: Discretization, rng: np.random.Generator, space: str) -> HybridVector:
    v = HybridVector.zeros(disc.layout, space, disc.mesh)
    v.values[:] = rng.standard_normal(len(v.values))
    for f in disc.mesh.boundary_faces:
        v.values[disc.layout.face_slice(space, int(f))] = 0.0
    return v


def source_norm(disc: Discretization, f: Field) -> float:
    total = 0.0
    for t in range(disc.mesh.n_elements):
        rule = element_rule(disc.mesh, t, disc.rhs_degree)
        vals = f(rule.points3d)
        total += float(np.einsum("n,nc,nc->", rule.weights, vals, vals))
    return float(np.sqrt(total))


def coercivity_defect(mesh: Mesh, k: int, seed: int, stabilization: str = "ch", n_probes: int = 3) -> float:
    """Max relative gap between A_h(z, z) and ||z||_Z^2 on random zero-BC vectors (field)."""
    disc = Discretization(mesh, k, "field")
    system = assemble(disc, stabilization, condensed=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        u = _random_hybrid(disc, rng, "X")
        p = _random_hybrid(disc, rng, "Y")
        z = np.concatenate([u.values, p.values])[system.free]
        form = float(z @ (system.matrix @ z))
        norms = discrete_norms(system.operators, u, p, stabilization)
        y2 = norms.y_norm**2 if stabilization == "ch" else 0.0
        target = norms.energy**2 + y2
        worst = max(worst, abs(form - target) / target)
    return worst


def a_priori_bound(mesh: Mesh, k: int, case: ManufacturedCase | None = None) -> tuple[float, float]:
    """(||(u_h, p_h)||_Z, ||f||) for the field scheme with homogeneous boundary data."""
    case = case or cos_field()
    disc = Discretization(mesh, k, "field")
    system = assemble(disc, "ch", source=case.f)
    result = solve(system)
    norms = discrete_norms(system.operators, result.u, result.p, "ch")
    return float(np.sqrt(norms.energy**2 + norms.y_norm**2)), source_norm(disc, case.f)


WEBER_MODES = (1, 2)


def curl_sine_mode(m: int) -> Field:
    """curl w for w = (sin(a y)sin(a z), sin(a x)sin(a z), sin(a x)sin(a y)), a = m pi.

    w is divergence free with zero tangential trace on the unit cube, so it solves the
    field problem with this source; ||w|| / ||curl w|| = 1 / (sqrt(2) m pi).
    """
    a = m * PI

    def f(x):
        cx, cy, cz = np.cos(a * x).T
        sx, sy, sz = np.sin(a * x).T
        return a * np.column_stack([sx * (cy - cz), sy * (cz - cx), sz * (cx - cy)])

    return f


def estimate_weber_ratio(
    mesh: Mesh, k: int, seed: int = 20211022, n_probes: int = 4, threads: int = 1
) -> float:
    """max ||u_T|| / (||u||_X^2 + c_h(p, p))^{1/2} over field-scheme solutions for smooth sources.

    Sources are random combinations of curl_sine_mode(m), m in WEBER_MODES, so the ratio
    approaches a value in [1 / (2 sqrt(2) pi), 1 / (sqrt(2) pi)] under refinement.
    Returns NaN for meshes without interior faces.
    """
    if len(mesh.interior_faces) == 0:
        logger.warning("Weber probe: mesh has no interior faces, degenerate case")
        return float("nan")
    disc = Discretization(mesh, k, "field")
    ops = disc.build_operators(threads)
    rng = np.random.default_rng(seed)
    modes = [curl_sine_mode(m) for m in WEBER_MODES]
    worst = 0.0
    for _ in range(n_probes):
        coeffs = rng.standard_normal(len(modes))

        def source(x, coeffs=coeffs):
            return sum(c * mode(x) for c, mode in zip(coeffs, modes))

        system = assemble(disc, "ch", source=source, operators=ops, threads=threads)
        result = solve(system)
        norms = discrete_norms(ops, result.u, result.p, "ch")
        denom = np.sqrt(norms.energy**2 + norms.y_norm**2)
        if denom > 0.0:
            worst = max(worst, norms.l2 / denom)
    logger.info("Weber ratio h=%.4f k=%d: %.4f", mesh.h, k, worst)
    return float(worst)


def seminorm_ratio(mesh: Mesh, k: int, seed: int = 20211022, n_probes: int = 8) -> tuple[float, float]:
    """Range of a_h(v, v) / ||v||_{X,flat,h}^2 over random zero-BC vectors (potential formulation)."""
    disc = Discretization(mesh, k, "potential")
    ops = disc.build_operators()
    rng = np.random.default_rng(seed)
    nxt = disc.layout.x_element
    ratios = []
    for _ in range(n_probes):
        v = _random_hybrid(disc, rng, "X")
        num = den = 0.0
        for t, op in enumerate(ops.operators):
            x = v.local(mesh, t)
            num += float(x @ op.a @ x)
            den += float(x[:nxt] @ op.curl_mass @ x[:nxt] + x @ op.stab @ x)
        ratios.append(num / den)
    return float(min(ratios)), float(max(ratios))


def consistency_norm(
    mesh: Mesh, k: int, case: ManufacturedCase, seed: int = 20211022, n_probes: int = 8,
    stabilization: str | None = None,
) -> float:
    """max |l_h(v) + m_h(q)| / ||(v, q)||_Z over random zero-BC test pairs."""
    stabilization = stabilization or DEFAULT_STABILIZATION[case.formulation]
    disc = Discretization(mesh, k, case.formulation)
    system = assemble(disc, stabilization, source=case.f, condensed=False)
    apply_dirichlet(system, case.u, case.p)
    u_hat = disc.interpolate_X(case.u)
    p_hat = disc.interpolate_Y(case.p)
    z_hat = np.concatenate([u_hat.values, p_hat.values])
    residual = system.rhs - system.matrix @ z_hat[system.free]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        v = _random_hybrid(disc, rng, "X")
        q = _random_hybrid(disc, rng, "Y")
        norms = discrete_norms(system.operators, v, q, stabilization)
        z = np.concatenate([v.values, q.values])[system.free]
        worst = max(worst, abs(float(residual @ z)) / np.sqrt(norms.energy**2 + norms.y_norm**2))
    return worst


@dataclass(frozen=True)
class StructureReport:
    u_norm: float
    p_error: float
    scale: float

    @property
    def u_relative(self) -> float:
        return _relative(self.u_norm, self.scale)

    @property
    def p_relative(self) -> float:
        return self.p_error


def structure_test(mesh: Mesh, k: int, quad_elevation: int = 16) -> StructureReport:
    """Gradient source without multiplier stabilization: u_h vanishes and p_h = I_Y psi."""
    run = solve_case(mesh, k, gradient_source(), CaseOptions(stabilization="none", quad_elevation=quad_elevation))
    return StructureReport(
        u_norm=float(np.linalg.norm(run.u.values)),
        p_error=run.report.lagrange_rel,
        scale=float(np.linalg.norm(run.p_hat.values)),
    )
