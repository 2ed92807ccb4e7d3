import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hho.errors import GeometryError  # noqa: E402
from hho.mesh import Mesh, generate_cubic, generate_tetrahedral  # noqa: E402
from hho.polyspaces import exponents  # noqa: E402
from hho.quadrature import (  # noqa: E402
    element_rule,
    face_rule,
    operator_degree,
    reference_tetrahedron,
    reference_triangle,
    rhs_degree,
)
from hho.verify import (  # noqa: E402
    check_quadrature,
    tetrahedron_oracle,
    triangle_oracle,
    unit_prism,
    unit_tetrahedron,
)


def test_degrees():
    assert operator_degree(0) == 4
    assert operator_degree(3) == 10
    assert rhs_degree(2, 8) == 12


@pytest.mark.parametrize("d", [0, 3, 8, 12])
def test_reference_tetrahedron_oracle(d):
    pts, w = reference_tetrahedron(d)
    assert np.all(w > 0.0)
    for a in exponents(3, d):
        got = w @ np.prod(pts**a, axis=1)
        assert abs(got - tetrahedron_oracle(*a)) <= 1e-12 * tetrahedron_oracle(*a)


@pytest.mark.parametrize("d", [0, 5, 12])
def test_reference_triangle_oracle(d):
    pts, w = reference_triangle(d)
    for a in exponents(2, d):
        got = w @ np.prod(pts**a, axis=1)
        assert abs(got - triangle_oracle(*a)) <= 1e-12 * triangle_oracle(*a)


def test_cube_x2y2():
    rule = element_rule(generate_cubic(1), 0, 4)
    x = rule.points
    assert abs(rule.integrate(x[:, 0] ** 2 * x[:, 1] ** 2) - 1.0 / 9.0) < 1e-15


def test_sum_over_elements_matches_cube():
    for mesh in (generate_cubic(2), generate_tetrahedral(2)):
        total = 0.0
        for t in range(mesh.n_elements):
            rule = element_rule(mesh, t, 6)
            x = rule.points
            total += rule.integrate(x[:, 0] ** 3 * x[:, 1] ** 2 * x[:, 2])
        assert abs(total - 1.0 / 24.0) < 1e-14


def test_prism_and_unit_tetrahedron_volumes():
    assert abs(element_rule(unit_prism(), 0, 2).measure - 0.5) < 1e-15
    assert abs(element_rule(unit_tetrahedron(), 0, 2).measure - 1.0 / 6.0) < 1e-15


def test_face_rule_is_centred_in_frame():
    mesh = generate_cubic(2)
    for f in range(mesh.n_faces):
        rule = face_rule(mesh, f, 3)
        assert rule.points.shape[1] == 2
        assert abs(rule.measure - mesh.face_area[f]) < 1e-15
        # first moments vanish around the centroid
        assert np.abs(rule.integrate(rule.points)).max() < 1e-15
        back = mesh.face_centroid[f] + rule.points @ mesh.face_frame[f]
        assert np.allclose(back, rule.embedded, atol=1e-15)


def test_inverted_element_raises():
    mesh = generate_tetrahedral(1)
    verts = mesh.vertices.copy()
    # push the far corner through the opposite face of the tetrahedra around it
    verts[-1] = [-0.5, -0.5, -0.5]
    bad = Mesh(verts, mesh.face_loops, mesh.element_faces, mesh.element_signs, check=False)
    with pytest.raises(GeometryError):
        for t in range(bad.n_elements):
            element_rule(bad, t, 2)


def test_quadrature_checks_pass():
    results = check_quadrature(k_max=3)
    assert all(r.passed for r in results), [r for r in results if not r.passed]


if __name__ == "__main__":
    test_degrees()
    for d in (0, 3, 8, 12):
        test_reference_tetrahedron_oracle(d)
        test_reference_triangle_oracle(d)
    print("[OK] reference rules")
    for name in ("test_cube_x2y2", "test_sum_over_elements_matches_cube", "test_prism_and_unit_tetrahedron_volumes",
                 "test_face_rule_is_centred_in_frame", "test_inverted_element_raises", "test_quadrature_checks_pass"):
        globals()[name]()
        print(f"[OK] {name}")
    print("DONE.")
