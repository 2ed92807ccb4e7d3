"""
Global saddle-point systems, static condensation and solve.

The local monolithic matrix of an element, for the trial pair (w, r) and
test pair (v, q), is

    [[ a_T,   b_T ],
     [-b_T^T, z_T ]]

with z_T the multiplier stabilization (c_T, d_T or zero). The symmetric
variant negates the second block row. Element unknowns (u_T, p_T) are
eliminated per element; the global unknowns are the face blocks of interior
faces, X blocks first (face by face), then Y blocks. Boundary face blocks
are fixed by the Dirichlet data and moved to the right-hand side.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from hho.errors import ConfigError, SolverError
from hho.localops import Discretization, ElementOperators, HybridVector, LocalOperatorSet
from hho.mesh import Mesh

logger = logging.getLogger(__name__)

STABILIZATIONS = {"field": ("ch", "none"), "potential": ("dh", "ch", "none")}
PIVOT_TOLERANCE = 1e-12
RESIDUAL_TOLERANCE = 1e-10
SOLVER_OK = "ok"
SOLVER_INACCURATE = "inaccurate"


def check_stabilization(formulation: str, stabilization: str, mesh: Mesh) -> None:
    allowed = STABILIZATIONS.get(formulation)
    if allowed is None:
        raise ConfigError(f"unknown formulation {formulation!r}")
    if stabilization not in allowed:
        raise ConfigError(
            f"stabilization {stabilization!r} not available for the {formulation} formulation "
            f"(choose from {', '.join(allowed)})"
        )
    if stabilization == "none" and not mesh.is_tetrahedral:
        raise ConfigError("stabilization 'none' requires a matching tetrahedral mesh")


@dataclass(frozen=True)
class ElementRecovery:
    """u_T, p_T = offset + gain @ (face unknowns of the element)."""

    offset: NDArray
    gain: NDArray


@dataclass
class AssembledSystem:
    discretization: Discretization
    operators: LocalOperatorSet
    stabilization: str
    condensed: bool
    symmetric: bool
    n_total: int
    free: NDArray
    fixed: NDArray
    matrix: sps.csr_matrix
    coupling: sps.csr_matrix
    base_rhs: NDArray
    element_rhs: list[NDArray]
    recovery: list[ElementRecovery] = field(default_factory=list)
    fixed_values: NDArray | None = None
    rhs: NDArray | None = None

    @property
    def formulation(self) -> str:
        return self.discretization.formulation

    @property
    def mesh(self) -> Mesh:
        return self.discretization.mesh

    @property
    def n_dofs(self) -> int:
        return int(self.matrix.shape[0])


@dataclass
class SolveResult:
    u: HybridVector
    p: HybridVector
    residual: float
    solve_time: float
    n_dofs: int
    status: str = SOLVER_OK

    @property
    def converged(self) -> bool:
        return self.status == SOLVER_OK


# -- local matrices ---------------------------------------------------------


def local_matrix(ops: ElementOperators, stabilization: str, symmetric: bool = False) -> NDArray:
    """Local monolithic matrix over [X local, Y local]."""
    stab = ops.y_stabilization(stabilization)
    if symmetric:
        return np.block([[ops.a, ops.b], [ops.b.T, -stab]])
    return np.block([[ops.a, ops.b], [-ops.b.T, stab]])


def local_rhs(ops: ElementOperators, element_rhs: NDArray) -> NDArray:
    nx, ny = ops.b.shape
    out = np.zeros(nx + ny)
    out[:len(element_rhs)] = element_rhs
    return out


def _interior_split(disc: Discretization, ops: ElementOperators) -> tuple[NDArray, NDArray]:
    lay = disc.layout
    nx = ops.a.shape[0]
    ny = ops.c.shape[0]
    interior = np.concatenate([np.arange(lay.x_element), nx + np.arange(lay.y_element)])
    faces = np.setdiff1d(np.arange(nx + ny), interior)
    return interior, faces


# -- global numbering -------------------------------------------------------


def _face_numbering(disc: Discretization, t: int) -> NDArray:
    lay = disc.layout
    nxf, nyf = lay.x_face, lay.y_face
    nf = disc.mesh.n_faces
    faces = disc.mesh.element_faces[t]
    xs = [np.arange(int(f) * nxf, (int(f) + 1) * nxf) for f in faces]
    ys = [nf * nxf + np.arange(int(f) * nyf, (int(f) + 1) * nyf) for f in faces]
    return np.concatenate(xs + ys)


def _full_numbering(disc: Discretization, t: int) -> NDArray:
    lay = disc.layout
    return np.concatenate([
        lay.local_indices("X", disc.mesh, t),
        lay.size("X") + lay.local_indices("Y", disc.mesh, t),
    ])


def _fixed_mask(disc: Discretization, condensed: bool) -> NDArray:
    lay, mesh = disc.layout, disc.mesh
    bnd = mesh.boundary
    if condensed:
        x = np.repeat(bnd, lay.x_face)
        y = np.repeat(bnd, lay.y_face)
        return np.concatenate([x, y])
    x = np.concatenate([np.zeros(mesh.n_elements * lay.x_element, dtype=bool), np.repeat(bnd, lay.x_face)])
    y = np.concatenate([np.zeros(mesh.n_elements * lay.y_element, dtype=bool), np.repeat(bnd, lay.y_face)])
    return np.concatenate([x, y])


def _merge_triplets(
    rows: list[NDArray], cols: list[NDArray], vals: list[NDArray], n: int
) -> sps.csr_matrix:
    """Sum duplicates in (row, col, element) order."""
    if not rows:
        return sps.csr_matrix((n, n))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    e = np.concatenate([np.full(len(x), i) for i, x in enumerate(rows)])
    order = np.lexsort((e, c, r))
    r, c, v = r[order], c[order], v[order]
    starts = np.flatnonzero(np.concatenate([[True], (r[1:] != r[:-1]) | (c[1:] != c[:-1])]))
    summed = np.add.reduceat(v, starts) if len(v) else v
    return sps.csr_matrix((summed, (r[starts], c[starts])), shape=(n, n))


# -- condensation -----------------------------------------------------------


def condense(
    disc: Discretization, ops: ElementOperators, element_rhs: NDArray, stabilization: str, symmetric: bool = False
) -> tuple[NDArray, NDArray, ElementRecovery] | None:
    """Schur complement of one element on its face unknowns; None if the element block is singular."""
    a = local_matrix(ops, stabilization, symmetric)
    rhs = local_rhs(ops, element_rhs)
    interior, faces = _interior_split(disc, ops)
    a_ii = a[np.ix_(interior, interior)]
    a_ib = a[np.ix_(interior, faces)]
    a_bi = a[np.ix_(faces, interior)]
    a_bb = a[np.ix_(faces, faces)]
    lu, piv = sla.lu_factor(a_ii, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_TOLERANCE * pivots.max():
        logger.debug("element %d: pivot ratio %.3e", ops.element, pivots.min() / pivots.max())
        return None
    gain = -sla.lu_solve((lu, piv), a_ib)
    offset = sla.lu_solve((lu, piv), rhs[interior])
    schur = a_bb + a_bi @ gain
    reduced = rhs[faces] - a_bi @ offset
    return schur, reduced, ElementRecovery(offset, gain)


# -- assembly ---------------------------------------------------------------


def _element_sources(
    disc: Discretization,
    source: Callable[[NDArray], NDArray] | None,
    element_rhs: Sequence[NDArray] | None,
) -> list[NDArray]:
    if element_rhs is not None:
        if len(element_rhs) != disc.mesh.n_elements:
            raise ConfigError("one element right-hand side per element is required")
        return [np.asarray(r, dtype=float) for r in element_rhs]
    if source is None:
        return [np.zeros(disc.layout.x_element) for _ in range(disc.mesh.n_elements)]
    return [disc.element_source(t, source) for t in range(disc.mesh.n_elements)]


def assemble(
    disc: Discretization,
    stabilization: str,
    *,
    source: Callable[[NDArray], NDArray] | None = None,
    element_rhs: Sequence[NDArray] | None = None,
    operators: LocalOperatorSet | None = None,
    condensed: bool = True,
    symmetric: bool = False,
    threads: int = 1,
) -> AssembledSystem:
    """Assemble the global system of an already configured discretization."""
    check_stabilization(disc.formulation, stabilization, disc.mesh)
    ops_set = operators or disc.build_operators(threads)
    sources = _element_sources(disc, source, element_rhs)
    mesh = disc.mesh
    ne = mesh.n_elements

    recovery: list[ElementRecovery] = []
    if condensed:
        def work(t: int):
            return condense(disc, ops_set[t], sources[t], stabilization, symmetric)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                blocks = list(pool.map(work, range(ne)))
        else:
            blocks = [work(t) for t in range(ne)]
        singular = [t for t, b in enumerate(blocks) if b is None]
        if singular:
            logger.warning(
                "element block numerically singular on %d element(s) (first: %d); "
                "falling back to uncondensed assembly",
                len(singular), singular[0],
            )
            condensed = False

    rows, cols, vals = [], [], []
    lay = disc.layout
    if condensed:
        n_total = mesh.n_faces * (lay.x_face + lay.y_face)
        rhs = np.zeros(n_total)
        for t, (schur, reduced, rec) in enumerate(blocks):
            idx = _face_numbering(disc, t)
            rows.append(np.repeat(idx, len(idx)))
            cols.append(np.tile(idx, len(idx)))
            vals.append(schur.ravel())
            np.add.at(rhs, idx, reduced)
            recovery.append(rec)
    else:
        n_total = lay.size("X") + lay.size("Y")
        rhs = np.zeros(n_total)
        for t in range(ne):
            a = local_matrix(ops_set[t], stabilization, symmetric)
            idx = _full_numbering(disc, t)
            rows.append(np.repeat(idx, len(idx)))
            cols.append(np.tile(idx, len(idx)))
            vals.append(a.ravel())
            np.add.at(rhs, idx, local_rhs(ops_set[t], sources[t]))

    full = _merge_triplets(rows, cols, vals, n_total)
    mask = _fixed_mask(disc, condensed)
    free = np.flatnonzero(~mask)
    fixed = np.flatnonzero(mask)
    free_rows = full[free]
    system = AssembledSystem(
        discretization=disc,
        operators=ops_set,
        stabilization=stabilization,
        condensed=condensed,
        symmetric=symmetric,
        n_total=n_total,
        free=free,
        fixed=fixed,
        matrix=free_rows[:, free].tocsr(),
        coupling=free_rows[:, fixed].tocsr(),
        base_rhs=rhs[free],
        element_rhs=sources,
        recovery=recovery,
    )
    logger.info(
        "assembled %s system: %d unknowns (%s), %d nonzeros",
        disc.formulation, system.n_dofs, "condensed" if condensed else "monolithic", system.matrix.nnz,
    )
    return apply_dirichlet(system, None, None)


def assemble_field(
    mesh: Mesh,
    k: int,
    stabilization: str = "ch",
    *,
    source: Callable[[NDArray], NDArray] | None = None,
    quad_elevation: int = 8,
    threads: int = 1,
    condensed: bool = True,
    symmetric: bool = False,
    element_rhs: Sequence[NDArray] | None = None,
) -> AssembledSystem:
    """Field formulation: a_h(u,v) + b_h(v,p) = (f, curl_h v), -b_h(u,q) + c_h(p,q) = 0."""
    check_stabilization("field", stabilization, mesh)
    disc = Discretization(mesh, k, "field", quad_elevation=quad_elevation)
    return assemble(
        disc, stabilization, source=source, element_rhs=element_rhs,
        condensed=condensed, symmetric=symmetric, threads=threads,
    )


def assemble_potential(
    mesh: Mesh,
    k: int,
    stabilization: str = "dh",
    *,
    source: Callable[[NDArray], NDArray] | None = None,
    quad_elevation: int = 8,
    threads: int = 1,
    condensed: bool = True,
    symmetric: bool = False,
    full_curl: bool = False,
    element_rhs: Sequence[NDArray] | None = None,
) -> AssembledSystem:
    """Potential formulation: a_h(u,v) + b_h(v,p) = (f, v_h), -b_h(u,q) + d_h(p,q) = 0."""
    check_stabilization("potential", stabilization, mesh)
    disc = Discretization(mesh, k, "potential", quad_elevation=quad_elevation, full_curl=full_curl)
    return assemble(
        disc, stabilization, source=source, element_rhs=element_rhs,
        condensed=condensed, symmetric=symmetric, threads=threads,
    )


def apply_dirichlet(
    system: AssembledSystem,
    u_boundary: Callable[[NDArray], NDArray] | None,
    p_boundary: Callable[[NDArray], NDArray] | None,
) -> AssembledSystem:
    """Fix boundary face blocks to the projections of the data and lift them to the right-hand side."""
    disc = system.discretization
    faces = system.mesh.boundary_faces
    values = np.concatenate([
        disc.boundary_values("X", u_boundary, faces),
        disc.boundary_values("Y", p_boundary, faces),
    ])
    if len(values) != len(system.fixed):
        raise SolverError("boundary data size does not match the fixed unknowns")
    system.fixed_values = values
    system.rhs = system.base_rhs - system.coupling @ values
    return system


# -- solve ------------------------------------------------------------------


def solve(system: AssembledSystem, strict: bool = False) -> SolveResult:
    """Sparse LU solve of the (condensed) system and recovery of all blocks.

    A relative residual above RESIDUAL_TOLERANCE marks the result ``inaccurate``;
    with ``strict`` it raises SolverError instead.
    """
    if system.rhs is None or system.fixed_values is None:
        raise SolverError("boundary data not applied")
    start = time.perf_counter()
    n = system.n_dofs
    if n:
        try:
            lu = spla.splu(system.matrix.tocsc())
            z = lu.solve(system.rhs)
        except RuntimeError as e:
            raise SolverError(f"sparse factorization failed: {e}")
    else:
        z = np.zeros(0)
    elapsed = time.perf_counter() - start
    if not np.all(np.isfinite(z)):
        raise SolverError("solution is not finite")
    scale = max(float(np.linalg.norm(system.rhs)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(system.matrix @ z - system.rhs)) / scale if n else 0.0
    status = SOLVER_OK
    if residual > RESIDUAL_TOLERANCE:
        if strict:
            raise SolverError(f"relative algebraic residual {residual:.3e} above {RESIDUAL_TOLERANCE:.0e}")
        logger.warning("relative algebraic residual %.3e above %.0e", residual, RESIDUAL_TOLERANCE)
        status = SOLVER_INACCURATE

    full = np.zeros(system.n_total)
    full[system.free] = z
    full[system.fixed] = system.fixed_values
    u, p = recover(system, full)
    logger.info("solved %d unknowns in %.3f s (residual %.2e)", n, elapsed, residual)
    return SolveResult(u=u, p=p, residual=residual, solve_time=elapsed, n_dofs=n, status=status)


def recover(system: AssembledSystem, full: NDArray) -> tuple[HybridVector, HybridVector]:
    """Hybrid vectors from the global solution (face unknowns, or everything when uncondensed)."""
    disc = system.discretization
    lay, mesh = disc.layout, disc.mesh
    u = HybridVector.zeros(lay, "X", mesh)
    p = HybridVector.zeros(lay, "Y", mesh)
    if not system.condensed:
        u.values[:] = full[:lay.size("X")]
        p.values[:] = full[lay.size("X"):]
        return u, p
    nf = mesh.n_faces
    for f in range(nf):
        u.values[lay.face_slice("X", f)] = full[f * lay.x_face:(f + 1) * lay.x_face]
        p.values[lay.face_slice("Y", f)] = full[nf * lay.x_face + f * lay.y_face:nf * lay.x_face + (f + 1) * lay.y_face]
    for t, rec in enumerate(system.recovery):
        interior = rec.offset + rec.gain @ full[_face_numbering(disc, t)]
        u.values[lay.element_slice("X", t)] = interior[:lay.x_element]
        p.values[lay.element_slice("Y", t)] = interior[lay.x_element:]
    return u, p


def local_equation_residual(system: AssembledSystem, result: SolveResult) -> float:
    """Max relative residual of the element-unknown rows of every local system."""
    disc = system.discretization
    worst = 0.0
    for t in range(disc.mesh.n_elements):
        ops = system.operators[t]
        a = local_matrix(ops, system.stabilization, system.symmetric)
        rhs = local_rhs(ops, system.element_rhs[t])
        z = np.concatenate([result.u.local(disc.mesh, t), result.p.local(disc.mesh, t)])
        interior, _ = _interior_split(disc, ops)
        res = a[interior] @ z - rhs[interior]
        scale = max(float(np.linalg.norm(a[interior] @ np.abs(z))), float(np.linalg.norm(rhs[interior])), 1e-300)
        worst = max(worst, float(np.linalg.norm(res)) / scale)
    return worst


def write_triplets(system: AssembledSystem, stream: TextIO) -> None:
    """``row col value`` lines after a header with dimensions and nonzero count."""
    coo = system.matrix.tocoo()
    stream.write(f"# hho condensed system: rows cols nnz\n{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        stream.write(f"{int(r)} {int(c)} {float(v)!r}\n")
    stream.write("# rhs\n")
    for v in system.rhs if system.rhs is not None else []:
        stream.write(f"{float(v)!r}\n")
