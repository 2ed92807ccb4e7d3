import io
import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hho.errors import MeshFormatError, MeshValidationError  # noqa: E402
from hho.mesh import Mesh, generate_cubic, generate_tetrahedral, load_mesh, validate  # noqa: E402


def _flipped(mesh: Mesh, t: int = 0, local: int = 0) -> Mesh:
    signs = [s.copy() for s in mesh.element_signs]
    signs[t][local] *= -1.0
    return Mesh(mesh.vertices, mesh.face_loops, mesh.element_faces, signs, check=False)


def test_cubic_counts():
    m1 = generate_cubic(1)
    assert (m1.n_elements, m1.n_faces) == (1, 6)
    m2 = generate_cubic(2)
    assert (m2.n_elements, m2.n_faces) == (8, 36)
    assert len(m2.interior_faces) == 12
    assert abs(m2.h - np.sqrt(3) / 2) < 1e-14


def test_tetrahedral_counts():
    m1 = generate_tetrahedral(1)
    assert (m1.n_elements, m1.n_faces) == (6, 18)
    assert len(m1.boundary_faces) == 12
    assert m1.is_tetrahedral
    assert generate_tetrahedral(2).n_elements == 48
    assert not generate_cubic(1).is_tetrahedral


def test_volumes_and_closure():
    for mesh in (generate_cubic(3), generate_tetrahedral(2)):
        rep = validate(mesh)
        assert abs(rep.volume - 1.0) < 1e-13
        assert rep.max_closure_residual < 1e-13
        assert rep.min_star_margin > 0.0
        assert rep.max_face_to_element_diameter <= 1.0 + 1e-12


def test_interface_signs_opposite():
    mesh = generate_tetrahedral(2)
    for f in mesh.interior_faces:
        t0, t1 = mesh.face_elements[int(f)]
        s0 = mesh.element_signs[t0][int(np.flatnonzero(mesh.element_faces[t0] == f)[0])]
        s1 = mesh.element_signs[t1][int(np.flatnonzero(mesh.element_faces[t1] == f)[0])]
        assert s0 * s1 < 0


def test_outward_normals_point_away_from_center():
    mesh = generate_cubic(2)
    for t in range(mesh.n_elements):
        for i, f in enumerate(mesh.element_faces[t]):
            d = mesh.face_centroid[int(f)] - mesh.element_center[t]
            assert d @ mesh.outward_normal(t, i) > 0.0


def test_flipped_sign_breaks_closure():
    with pytest.raises(MeshValidationError) as exc:
        validate(_flipped(generate_cubic(1)))
    assert exc.value.invariant == "element boundary not closed"
    assert exc.value.entity == "element 0"


def test_flipped_interface_sign_detected():
    mesh = generate_cubic(2)
    f = int(mesh.interior_faces[0])
    t = mesh.face_elements[f][0]
    local = int(np.flatnonzero(mesh.element_faces[t] == f)[0])
    with pytest.raises(MeshValidationError) as exc:
        validate(_flipped(mesh, t, local))
    assert exc.value.invariant == "interface orientations not opposite"


def test_nonplanar_face_rejected():
    mesh = generate_cubic(1)
    verts = mesh.vertices.copy()
    verts[-1] += np.array([0.0, 0.0, 0.2])
    with pytest.raises(MeshValidationError) as exc:
        Mesh(verts, mesh.face_loops, mesh.element_faces, mesh.element_signs)
    assert exc.value.invariant == "face not planar"


def test_dump_load_round_trip():
    mesh = generate_tetrahedral(2)
    back = load_mesh(io.StringIO(mesh.dumps()))
    assert back.n_elements == mesh.n_elements
    assert back.n_faces == mesh.n_faces
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.allclose(back.element_volume, mesh.element_volume, rtol=0, atol=1e-15)
    assert back.dumps() == mesh.dumps()


@pytest.mark.parametrize(
    "text, line",
    [
        ("polymesh v2\n", 1),
        ("polymesh v1\nvertices 1\n0 0\n", 3),
        ("polymesh v1\nvertices 3\n0 0 0\n1 0 0\n0 1 0\nfaces 1\n3 0 1 2\nelements 1\n1 0\n", 9),
    ],
)
def test_format_errors_carry_line(text, line):
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(io.StringIO(text))
    assert exc.value.line == line


def test_reorder_elements_keeps_geometry():
    mesh = generate_cubic(2)
    order = list(range(mesh.n_elements))[::-1]
    back = mesh.reorder_elements(order)
    assert np.allclose(back.element_volume, mesh.element_volume[order])
    assert np.allclose(back.element_center, mesh.element_center[order])


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn) and not hasattr(fn, "pytestmark"):
            fn()
            print(f"[OK] {name}")
    print("DONE.")
