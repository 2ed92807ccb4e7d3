import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hho.errors import ConfigError  # noqa: E402
from hho.localops import (  # noqa: E402
    DofLayout,
    Discretization,
    curl_reconstruction,
    grad_reconstruction,
    lagrange_forms,
    stabilization_field,
    stabilization_potential,
)
from hho.mesh import generate_cubic, generate_tetrahedral  # noqa: E402
from hho.quadrature import element_rule  # noqa: E402
from hho.verify import RandomPolynomial, RandomVectorPolynomial, commutation_errors  # noqa: E402

MESHES = {"cubic": lambda: generate_cubic(2), "tetrahedral": lambda: generate_tetrahedral(1)}


def _local(disc, t, u=None, p=None):
    faces = disc.mesh.element_faces[t]
    out = []
    if u is not None:
        out.append(np.concatenate([disc.interpolate_element_X(t, u)] + [disc.interpolate_face_X(int(f), u) for f in faces]))
    if p is not None:
        out.append(np.concatenate([disc.interpolate_element_Y(t, p)] + [disc.interpolate_face_Y(int(f), p) for f in faces]))
    return out


def test_layout_block_sizes():
    lay = DofLayout("field", 0, 8, 36)
    assert (lay.x_element, lay.x_face, lay.y_element, lay.y_face) == (12, 5, 1, 3)
    lay = DofLayout("potential", 1, 8, 36)
    assert (lay.x_element, lay.x_face, lay.y_element, lay.y_face) == (30, 10, 4, 6)
    assert lay.size("X") == 8 * 30 + 36 * 10
    with pytest.raises(ConfigError):
        DofLayout("mixed", 0, 1, 1)


@pytest.mark.parametrize("family", ["cubic", "tetrahedral"])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_commutation(family, k):
    rng = np.random.default_rng(11 + k)
    g, c = commutation_errors(MESHES[family](), 0, k, rng)
    assert g <= 1e-10
    assert c <= 1e-10


@pytest.mark.parametrize("k", [0, 1])
def test_full_curl_variant_commutes(k):
    rng = np.random.default_rng(3)
    _, c = commutation_errors(generate_tetrahedral(1), 2, k, rng, full_curl=True)
    assert c <= 1e-10


@pytest.mark.parametrize("formulation", ["field", "potential"])
def test_local_forms_symmetric_semidefinite(formulation):
    disc = Discretization(generate_cubic(2), 1, formulation)
    ops = disc.element_operators(5)
    for m in (ops.a, ops.stab, ops.c, ops.d):
        assert np.allclose(m, m.T, atol=1e-13)
        assert np.linalg.eigvalsh(m).min() >= -1e-10 * max(1.0, np.abs(m).max())
    nx = disc.layout.local_size("X", len(ops.faces))
    ny = disc.layout.local_size("Y", len(ops.faces))
    assert ops.b.shape == (nx, ny)
    assert np.all(ops.b[disc.layout.x_element:] == 0.0)


@pytest.mark.parametrize("formulation", ["field", "potential"])
def test_stabilizations_vanish_on_polynomials(formulation):
    mesh = generate_tetrahedral(1)
    k = 1
    disc = Discretization(mesh, k, formulation)
    rng = np.random.default_rng(5)
    v = RandomVectorPolynomial(k + 1, rng)
    q = RandomPolynomial(k, rng)
    x, y = _local(disc, 1, u=v, p=q)
    ops = disc.element_operators(1)
    scale = float(x @ x)
    assert abs(x @ ops.stab @ x) <= 1e-12 * scale
    assert abs(y @ ops.d @ y) <= 1e-12 * float(y @ y)


def test_field_energy_is_curl_norm_on_polynomials():
    mesh = generate_cubic(2)
    disc = Discretization(mesh, 1, "field")
    rng = np.random.default_rng(9)
    v = RandomVectorPolynomial(2, rng)
    (x,) = _local(disc, 0, u=v)
    ops = disc.element_operators(0)
    rule = element_rule(mesh, 0, 8)
    cv = v.curl(rule.points3d)
    exact = float(np.einsum("n,nc,nc->", rule.weights, cv, cv))
    assert abs(x @ ops.a @ x - exact) <= 1e-10 * exact


def test_potential_consistency_matches_curl_norm():
    mesh = generate_tetrahedral(1)
    disc = Discretization(mesh, 1, "potential")
    rng = np.random.default_rng(10)
    v = RandomVectorPolynomial(2, rng)
    (x,) = _local(disc, 4, u=v)
    ops = disc.element_operators(4)
    rule = element_rule(mesh, 4, 8)
    cv = v.curl(rule.points3d)
    exact = float(np.einsum("n,nc,nc->", rule.weights, cv, cv))
    assert abs(x @ ops.a @ x - exact) <= 1e-10 * exact


def test_b_is_vector_against_gradient():
    mesh = generate_cubic(2)
    disc = Discretization(mesh, 0, "field")
    rng = np.random.default_rng(12)
    v = RandomVectorPolynomial(1, rng)
    q = RandomPolynomial(2, rng)
    x, y = _local(disc, 6, u=v, p=q)
    ops = disc.element_operators(6)
    rule = element_rule(mesh, 6, 6)
    pts = rule.points3d
    exact = float(np.einsum("n,nc,nc->", rule.weights, v(pts), q.gradient(pts)))
    assert abs(x @ ops.b @ y - exact) <= 1e-10 * max(1.0, abs(exact))


def test_norms_agree_with_direct_quadrature():
    mesh = generate_cubic(2)
    disc = Discretization(mesh, 1, "field")
    ops = disc.element_operators(2)
    coeffs = np.random.default_rng(1).standard_normal(disc.layout.x_element)
    l2, curl = disc.element_field_norms(2, coeffs)
    assert abs(l2 - coeffs @ ops.vector_mass @ coeffs) <= 1e-12 * l2
    assert abs(curl - coeffs @ ops.curl_mass @ coeffs) <= 1e-12 * curl


def test_accessors_check_formulation():
    field = Discretization(generate_cubic(1), 0, "field")
    potential = Discretization(generate_cubic(1), 0, "potential")
    assert grad_reconstruction(field, 0).shape[0] == field.layout.x_element
    assert stabilization_field(field, 0).shape == field.element_operators(0).a.shape
    assert curl_reconstruction(potential, 0).shape[0] == 3  # dim R^0 = curl of P^1
    assert stabilization_potential(potential, 0).shape == potential.element_operators(0).a.shape
    c, d = lagrange_forms(field, 0)
    assert c.shape == d.shape
    with pytest.raises(ConfigError):
        curl_reconstruction(field, 0)
    with pytest.raises(ConfigError):
        stabilization_potential(field, 0)


def test_operators_independent_of_thread_count():
    disc = Discretization(generate_tetrahedral(1), 0, "potential")
    serial = disc.build_operators(1)
    pooled = disc.build_operators(3)
    for a, b in zip(serial.operators, pooled.operators):
        assert np.array_equal(a.a, b.a)
        assert np.array_equal(a.grad, b.grad)


if __name__ == "__main__":
    test_layout_block_sizes()
    for family in MESHES:
        for k in (0, 1, 2):
            test_commutation(family, k)
    print("[OK] commutation")
    for k in (0, 1):
        test_full_curl_variant_commutes(k)
    for formulation in ("field", "potential"):
        test_local_forms_symmetric_semidefinite(formulation)
        test_stabilizations_vanish_on_polynomials(formulation)
    test_field_energy_is_curl_norm_on_polynomials()
    test_potential_consistency_matches_curl_norm()
    test_b_is_vector_against_gradient()
    test_norms_agree_with_direct_quadrature()
    test_accessors_check_formulation()
    test_operators_independent_of_thread_count()
    print("DONE.")
