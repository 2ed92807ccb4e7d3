import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hho.mesh import generate_cubic, generate_tetrahedral  # noqa: E402
from hho.polyspaces import (  # noqa: E402
    PolynomialDecomposer,
    dim_scalar,
    expected_dimension,
    exponents,
    mass_matrix,
    project,
    scalar_basis,
    subspace_grad_F,
    subspace_grad_T,
    subspace_pflat_F,
    subspace_rot_T,
    vector_basis,
)
from hho.quadrature import element_rule, face_rule  # noqa: E402
from hho.verify import affine_cube, check_dimensions  # noqa: E402


def test_scalar_dimensions():
    assert dim_scalar(3, 2) == 10
    assert dim_scalar(2, 1) == 3
    assert dim_scalar(3, -1) == 0
    assert exponents(3, 1).tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert exponents(2, 2).tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]


def test_closed_form_subspace_dimensions():
    assert expected_dimension("rot-element", 2) == 26
    assert expected_dimension("grad-face", 1) == 5
    assert expected_dimension("flat-face", 1) == 5
    assert expected_dimension("flat-face", 2) == 10
    assert expected_dimension("grad-element", 1) == 9


def test_vector_p2_has_30_functions():
    mesh = generate_cubic(1)
    assert vector_basis(mesh, 2, element=0).dim == 30


@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_orthonormal_mass_is_identity(q):
    mesh = generate_tetrahedral(1)
    rule = element_rule(mesh, 0, 2 * q)
    basis = scalar_basis(mesh, q, element=0, rule=rule)
    assert np.allclose(mass_matrix(basis, rule), np.eye(basis.dim), atol=1e-12)
    frule = face_rule(mesh, 0, 2 * q)
    fbasis = scalar_basis(mesh, q, face=0, rule=frule)
    assert np.allclose(mass_matrix(fbasis, frule), np.eye(fbasis.dim), atol=1e-12)


def test_projection_reproduces_polynomials():
    mesh = generate_cubic(2)
    rule = element_rule(mesh, 3, 6)
    basis = scalar_basis(mesh, 3, element=3, rule=rule)
    x = rule.points3d
    vals = 1.0 + x[:, 0] ** 3 - 2.0 * x[:, 1] * x[:, 2]
    coeffs = project(basis, rule, vals)
    assert np.allclose(basis.values(x) @ coeffs, vals, atol=1e-12)


def test_curls_of_gradients_vanish():
    mesh = generate_cubic(1)
    rule = element_rule(mesh, 0, 6)
    vec = vector_basis(mesh, 2, element=0, rule=rule)
    grads = subspace_grad_T(vec)
    assert grads.dim == expected_dimension("grad-element", 2)
    assert np.abs(grads.curls(rule.points3d)).max() < 1e-10


def test_rot_space_is_divergence_free():
    mesh = generate_tetrahedral(1)
    rule = element_rule(mesh, 0, 6)
    vec = vector_basis(mesh, 2, element=0, rule=rule)
    rot = subspace_rot_T(vec)
    assert rot.dim == 26
    div = vec.divergences(rule.points3d) @ rot.columns
    assert np.abs(div).max() < 1e-9


@pytest.mark.parametrize("k", [0, 1, 2])
def test_face_gradient_space_inside_flat_space(k):
    mesh = generate_cubic(1)
    frule = face_rule(mesh, 0, 2 * (k + 2))
    tang = vector_basis(mesh, k + 1, face=0, rule=frule)
    grad, flat = subspace_grad_F(tang), subspace_pflat_F(tang)
    assert grad.dim == (k + 3) * (k + 4) // 2 - 1
    assert flat.dim == (k + 1) * (k + 2) + (k + 3)
    m = tang.mass
    proj = flat.columns @ (flat.columns.T @ m @ grad.columns)
    assert np.abs(proj - grad.columns).max() < 1e-10


def test_dimension_checks_pass():
    assert all(r.passed for r in check_dimensions(k_max=2))


@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_decomposition_bound(q):
    rng = np.random.default_rng(7)
    for mesh in (generate_cubic(1), generate_tetrahedral(1), affine_cube(rng)):
        dec = PolynomialDecomposer(mesh, 0, q)
        for _ in range(20):
            r = dec.decompose(rng.standard_normal(dec.vector.dim))
            assert r.residual <= 1e-10
            assert r.bound_ratio <= 2.0


def test_decomposition_of_gradient_has_no_rot_part():
    mesh = generate_cubic(1)
    dec = PolynomialDecomposer(mesh, 0, 2)
    g = dec._grad_cols @ np.arange(1.0, dec._grad_cols.shape[1] + 1)
    r = dec.decompose(g)
    assert r.norm_rot_part <= 1e-10 * r.norm_p
    assert r.norm_curl_p <= 1e-10 * r.norm_p


def test_orthonormal_and_raw_bases_span_the_same_space():
    mesh = generate_tetrahedral(1)
    rule = element_rule(mesh, 2, 4)
    x = rule.points3d
    vals = np.sin(x[:, 0]) + x[:, 1] ** 2
    a = scalar_basis(mesh, 2, element=2, rule=rule)
    b = scalar_basis(mesh, 2, element=2, rule=rule, orthonormal=False)
    pa = a.values(x) @ project(a, rule, vals)
    pb = b.values(x) @ project(b, rule, vals)
    assert np.allclose(pa, pb, atol=1e-11)


if __name__ == "__main__":
    test_scalar_dimensions()
    test_closed_form_subspace_dimensions()
    test_vector_p2_has_30_functions()
    for q in range(4):
        test_orthonormal_mass_is_identity(q)
        test_decomposition_bound(q)
    for k in range(3):
        test_face_gradient_space_inside_flat_space(k)
    test_projection_reproduces_polynomials()
    test_curls_of_gradients_vanish()
    test_rot_space_is_divergence_free()
    test_dimension_checks_pass()
    test_decomposition_of_gradient_has_no_rot_part()
    test_orthonormal_and_raw_bases_span_the_same_space()
    print("DONE.")
