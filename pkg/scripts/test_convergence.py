import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hho.mesh import generate_cubic  # noqa: E402
from hho.schemes import (  # noqa: E402
    CaseOptions,
    cos_field,
    default_refinements,
    eoc,
    gradient_source,
    polynomial_field,
    run_case,
    run_convergence,
    sin_potential,
)

CASE_OF = {"field": cos_field, "potential": sin_potential}

# (formulation, family, k, stabilization)
RATE_MATRIX = [
    pytest.param("field", "cubic", 0, None, marks=pytest.mark.slow),
    pytest.param("field", "cubic", 1, None, marks=pytest.mark.slow),
    pytest.param("field", "cubic", 2, None, marks=pytest.mark.slow),
    pytest.param("field", "tetrahedral", 0, None, marks=pytest.mark.slow),
    ("field", "tetrahedral", 1, None),
    pytest.param("field", "tetrahedral", 2, None, marks=pytest.mark.slow),
    pytest.param("potential", "cubic", 0, None, marks=pytest.mark.slow),
    pytest.param("potential", "cubic", 1, None, marks=pytest.mark.slow),
    pytest.param("potential", "cubic", 2, None, marks=pytest.mark.slow),
    pytest.param("potential", "tetrahedral", 0, None, marks=pytest.mark.slow),
    ("potential", "tetrahedral", 1, None),
    pytest.param("potential", "tetrahedral", 2, None, marks=pytest.mark.slow),
    pytest.param("potential", "tetrahedral", 0, "none", marks=pytest.mark.slow),
    pytest.param("potential", "tetrahedral", 1, "none", marks=pytest.mark.slow),
]


def finest_pair_rates(formulation, family, k, stabilization=None, case=None):
    case = case or CASE_OF[formulation]()
    refinements = default_refinements(family, k)[-2:]
    a, b = run_convergence(family, refinements, k, case, CaseOptions(stabilization=stabilization))
    return {
        "energy": eoc(a.energy_rel, b.energy_rel, a.meshsize, b.meshsize),
        "l2": eoc(a.l2_rel, b.l2_rel, a.meshsize, b.meshsize),
        "lagrange": eoc(a.lagrange, b.lagrange, a.meshsize, b.meshsize),
    }


@pytest.mark.parametrize("formulation, family, k, stabilization", RATE_MATRIX)
def test_observed_orders(formulation, family, k, stabilization):
    rates = finest_pair_rates(formulation, family, k, stabilization)
    assert rates["energy"] >= k + 0.8
    assert rates["l2"] >= k + 1.8
    if formulation == "potential":
        assert rates["lagrange"] >= k + 0.8


@pytest.mark.slow
@pytest.mark.parametrize("family", ["cubic", "tetrahedral"])
@pytest.mark.parametrize("k", [0, 1])
def test_multiplier_converges_for_gradient_source(family, k):
    rates = finest_pair_rates("potential", family, k, case=gradient_source())
    assert rates["lagrange"] >= k + 0.8


def test_relative_multiplier_error_uses_interpolant_norm():
    rep = run_case(generate_cubic(2), 1, sin_potential())
    assert rep.lagrange_ref > 0.0
    assert rep.lagrange_rel == pytest.approx(rep.lagrange / rep.lagrange_ref, rel=1e-14)


def test_reference_schedule_refines_k0_once_more():
    assert default_refinements("cubic", 0) == (2, 4, 8, 16)
    assert default_refinements("cubic", 1) == (2, 4, 8)
    assert default_refinements("tetrahedral", 0) == (1, 2, 4, 8)
    assert default_refinements("tetrahedral", 2) == (1, 2, 4)


@pytest.mark.parametrize(
    "case",
    [polynomial_field(1), cos_field(), sin_potential()],
    ids=["polynomial", "cos", "sin"],
)
def test_single_element_has_no_global_unknowns(case):
    rep = run_case(generate_cubic(1), 0, case)
    assert rep.n_dofs == 0
    assert rep.residual == 0.0
    assert rep.solver_status == "ok"
    assert all(np.isfinite([rep.energy, rep.l2, rep.lagrange]))


def test_single_element_recovers_polynomial_field():
    rep = run_case(generate_cubic(1), 0, polynomial_field(1))
    assert rep.energy <= 1e-9
    assert rep.l2 <= 1e-9


if __name__ == "__main__":
    test_reference_schedule_refines_k0_once_more()
    test_relative_multiplier_error_uses_interpolant_norm()
    for case in (polynomial_field(1), cos_field(), sin_potential()):
        test_single_element_has_no_global_unknowns(case)
    test_single_element_recovers_polynomial_field()
    print("[OK] single element")
    test_observed_orders("field", "tetrahedral", 1, None)
    test_observed_orders("potential", "tetrahedral", 1, None)
    print("DONE.")
