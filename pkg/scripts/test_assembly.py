import io
import logging
import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

import hho.assembly as assembly  # noqa: E402
from hho.assembly import (  # noqa: E402
    apply_dirichlet,
    assemble,
    assemble_field,
    assemble_potential,
    local_equation_residual,
    solve,
    write_triplets,
)
from hho.errors import ConfigError, SolverError  # noqa: E402
from hho.localops import Discretization  # noqa: E402
from hho.mesh import generate_cubic, generate_tetrahedral  # noqa: E402
from hho.schemes import CaseOptions, cos_field, run_case, sin_potential  # noqa: E402
from hho.verify import condensation_gap  # noqa: E402


@pytest.mark.parametrize("formulation", ["field", "potential"])
@pytest.mark.parametrize("k", [0, 1])
def test_condensed_equals_monolithic(formulation, k):
    assert condensation_gap(generate_cubic(2), k, formulation) <= 1e-9


def test_condensed_equals_monolithic_on_tetrahedra():
    assert condensation_gap(generate_tetrahedral(1), 0, "potential") <= 1e-9


def _solve(mesh, formulation, **kw):
    case = cos_field() if formulation == "field" else sin_potential()
    stab = kw.pop("stabilization", "ch" if formulation == "field" else "dh")
    disc = Discretization(mesh, 0, formulation)
    system = assemble(disc, stab, source=case.f, **kw)
    apply_dirichlet(system, case.u, case.p)
    return disc, system, solve(system)


def test_symmetric_variant_same_solution():
    _, _, a = _solve(generate_cubic(2), "potential")
    _, _, b = _solve(generate_cubic(2), "potential", symmetric=True)
    assert np.allclose(a.u.values, b.u.values, atol=1e-11)
    assert np.allclose(a.p.values, b.p.values, atol=1e-11)


def test_boundary_blocks_hold_projected_data():
    disc, _, res = _solve(generate_cubic(2), "field")
    case = cos_field()
    for f in disc.mesh.boundary_faces:
        assert np.allclose(res.u.face(int(f)), disc.interpolate_face_X(int(f), case.u), atol=1e-14)
        assert np.allclose(res.p.face(int(f)), 0.0)


def test_local_equations_satisfied_after_recovery():
    _, system, res = _solve(generate_tetrahedral(1), "potential")
    assert res.residual <= 1e-10
    assert local_equation_residual(system, res) <= 1e-10


def test_condensed_system_size():
    mesh = generate_cubic(2)
    system = assemble_field(mesh, 0)
    lay = system.discretization.layout
    assert system.condensed
    assert system.n_dofs == len(mesh.interior_faces) * (lay.x_face + lay.y_face)


def test_element_permutation_invariance():
    mesh = generate_tetrahedral(1)
    order = [3, 0, 5, 1, 4, 2]
    a = run_case(mesh, 0, cos_field())
    b = run_case(mesh.reorder_elements(order), 0, cos_field())
    for key in ("energy", "l2", "lagrange"):
        assert abs(getattr(a, key) - getattr(b, key)) <= 1e-10 * max(1.0, getattr(a, key))


def test_assembly_deterministic_across_threads():
    mesh = generate_cubic(2)
    one = assemble_potential(mesh, 0, threads=1)
    many = assemble_potential(mesh, 0, threads=4)
    assert np.array_equal(one.matrix.indices, many.matrix.indices)
    assert np.array_equal(one.matrix.data, many.matrix.data)


def test_none_stabilization_needs_tetrahedra():
    with pytest.raises(ConfigError, match="tetrahedral"):
        assemble_potential(generate_cubic(2), 0, stabilization="none")
    with pytest.raises(ConfigError):
        assemble_field(generate_cubic(2), 0, stabilization="dh")


def test_singular_element_blocks_fall_back(monkeypatch, caplog):
    monkeypatch.setattr(assembly, "PIVOT_TOLERANCE", 1.0)
    with caplog.at_level(logging.WARNING, logger="hho.assembly"):
        disc, system, res = _solve(generate_cubic(2), "field")
    assert not system.condensed
    assert "falling back" in caplog.text
    monkeypatch.undo()
    _, _, ref = _solve(generate_cubic(2), "field")
    assert np.allclose(res.u.values, ref.u.values, atol=1e-10)


def test_triplet_dump_header():
    system = assemble_field(generate_cubic(2), 0, source=cos_field().f)
    buf = io.StringIO()
    write_triplets(system, buf)
    lines = buf.getvalue().splitlines()
    rows, cols, nnz = (int(x) for x in lines[1].split())
    assert rows == cols == system.n_dofs
    assert nnz == system.matrix.nnz
    assert lines[2 + nnz] == "# rhs"
    assert len(lines) == 3 + nnz + rows


def test_options_pass_through_to_solve():
    rep = run_case(generate_cubic(2), 0, sin_potential(), CaseOptions(symmetric=True, condensed=False))
    ref = run_case(generate_cubic(2), 0, sin_potential())
    assert abs(rep.energy - ref.energy) <= 1e-9 * ref.energy


def test_accurate_solve_reports_ok():
    _, _, res = _solve(generate_cubic(2), "field")
    assert res.status == "ok"
    assert res.converged
    assert res.residual <= assembly.RESIDUAL_TOLERANCE


def test_residual_above_tolerance_is_surfaced(monkeypatch, caplog):
    monkeypatch.setattr(assembly, "RESIDUAL_TOLERANCE", -1.0)
    with caplog.at_level(logging.WARNING, logger="hho.assembly"):
        _, system, res = _solve(generate_cubic(2), "field")
    assert res.status == "inaccurate"
    assert not res.converged
    assert "above" in caplog.text
    with pytest.raises(SolverError):
        solve(system, strict=True)
    rep = run_case(generate_cubic(2), 0, cos_field())
    assert rep.solver_status == "inaccurate"


if __name__ == "__main__":
    for formulation in ("field", "potential"):
        for k in (0, 1):
            test_condensed_equals_monolithic(formulation, k)
    test_condensed_equals_monolithic_on_tetrahedra()
    test_symmetric_variant_same_solution()
    test_boundary_blocks_hold_projected_data()
    test_local_equations_satisfied_after_recovery()
    test_condensed_system_size()
    test_element_permutation_invariance()
    test_assembly_deterministic_across_threads()
    test_none_stabilization_needs_tetrahedra()
    test_triplet_dump_header()
    test_options_pass_through_to_solve()
    test_accurate_solve_reports_ok()
    print("DONE.")
