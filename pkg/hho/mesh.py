"""
Polyhedral meshes of 3D domains.

A mesh is built once from its topology (vertex coordinates, planar face loops,
signed element face lists) and is read-only afterwards. All geometric
quantities used by the discretization are precomputed on construction:
face areas, centroids, diameters, unit normals and tangent frames, element
volumes, star points x_T (the centroid) and diameters.

Text format (``polymesh v1``)::

    polymesh v1
    # comment lines and blank lines are ignored
    vertices N
    x y z                 (N lines)
    faces M
    m v0 v1 ... v{m-1}    (M lines, cyclic vertex loop)
    elements K
    m +f0 -f1 ...         (K lines, face ids with explicit orientation sign)

The sign of an element face entry is + when the face normal (right-hand rule
on the loop) points out of the element.
"""

from __future__ import annotations

import io
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np
from numpy.typing import NDArray

from hho.errors import MeshFormatError, MeshValidationError

logger = logging.getLogger(__name__)

FORMAT_HEADER = "polymesh v1"
PLANAR_TOLERANCE = 1e-9
CLOSURE_TOLERANCE = 1e-10


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


def canonical_loop(loop: Sequence[int]) -> tuple[int, ...]:
    """Rotate a vertex loop so the lowest vertex id comes first, keeping orientation."""
    i = int(np.argmin(loop))
    return tuple(int(v) for v in loop[i:]) + tuple(int(v) for v in loop[:i])


def tangent_frame(normal: NDArray) -> NDArray:
    """Orthonormal (t1, t2) with t1 x t2 = normal, from the smallest normal component."""
    axis = int(np.argmin(np.abs(normal)))
    e = np.zeros(3)
    e[axis] = 1.0
    t1 = e - np.dot(e, normal) * normal
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    t2 /= np.linalg.norm(t2)
    return np.vstack([t1, t2])


@dataclass(frozen=True)
class MeshReport:
    n_vertices: int
    n_faces: int
    n_elements: int
    n_boundary_faces: int
    n_interior_faces: int
    meshsize: float
    volume: float
    min_faces_per_element: int
    max_faces_per_element: int
    min_inradius_ratio: float
    min_star_margin: float
    max_closure_residual: float
    max_face_to_element_diameter: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class Mesh:
    """Immutable polyhedral mesh with precomputed geometry."""

    def __init__(
        self,
        vertices: NDArray,
        faces: Sequence[Sequence[int]],
        elements: Sequence[Sequence[int]],
        signs: Sequence[Sequence[int]],
        check: bool = True,
    ) -> None:
        self.vertices = _readonly(np.array(vertices, dtype=float).reshape(-1, 3))
        self.face_loops: tuple[tuple[int, ...], ...] = tuple(canonical_loop(f) for f in faces)
        self.element_faces: tuple[NDArray, ...] = tuple(
            _readonly(np.asarray(e, dtype=np.int64)) for e in elements
        )
        self.element_signs: tuple[NDArray, ...] = tuple(
            _readonly(np.asarray(s, dtype=float)) for s in signs
        )
        if len(self.element_faces) != len(self.element_signs):
            raise MeshValidationError("element sign list mismatch", "mesh")
        for t, (fs, ss) in enumerate(zip(self.element_faces, self.element_signs)):
            if fs.shape != ss.shape:
                raise MeshValidationError("element sign list mismatch", f"element {t}")
            if np.any((fs < 0) | (fs >= len(self.face_loops))):
                raise MeshValidationError("face id out of range", f"element {t}")
        for f, loop in enumerate(self.face_loops):
            if len(loop) < 3 or len(set(loop)) != len(loop):
                raise MeshValidationError("face loop degenerate", f"face {f}")
            if max(loop) >= len(self.vertices):
                raise MeshValidationError("vertex id out of range", f"face {f}")

        self._compute_face_geometry()
        self._compute_element_geometry()

        incidence: list[list[int]] = [[] for _ in self.face_loops]
        for t, fs in enumerate(self.element_faces):
            for f in fs:
                incidence[int(f)].append(t)
        self.face_elements: tuple[tuple[int, ...], ...] = tuple(tuple(x) for x in incidence)
        self.boundary = _readonly(np.array([len(x) == 1 for x in incidence], dtype=bool))
        self.interior_faces = _readonly(np.flatnonzero(~self.boundary))
        self.boundary_faces = _readonly(np.flatnonzero(self.boundary))
        self.h = float(self.element_diameter.max())

        if check:
            validate(self)

    # -- geometry ---------------------------------------------------------

    def _compute_face_geometry(self) -> None:
        nf = len(self.face_loops)
        area = np.empty(nf)
        centroid = np.empty((nf, 3))
        diameter = np.empty(nf)
        normal = np.empty((nf, 3))
        frames = np.empty((nf, 2, 3))
        for f, loop in enumerate(self.face_loops):
            pts = self.vertices[list(loop)]
            nxt = np.roll(pts, -1, axis=0)
            vec = 0.5 * np.cross(pts, nxt).sum(axis=0)
            a = float(np.linalg.norm(vec))
            if a <= 0.0:
                raise MeshValidationError("face has zero area", f"face {f}")
            n = vec / a
            m = pts.mean(axis=0)
            tri = 0.5 * np.cross(pts - m, nxt - m) @ n
            c = (tri[:, None] * (m + pts + nxt) / 3.0).sum(axis=0) / tri.sum()
            d = max(float(np.linalg.norm(p - q)) for p, q in itertools.combinations(pts, 2))
            area[f], centroid[f], diameter[f], normal[f] = a, c, d, n
            frames[f] = tangent_frame(n)
        self.face_area = _readonly(area)
        self.face_centroid = _readonly(centroid)
        self.face_diameter = _readonly(diameter)
        self.face_normal = _readonly(normal)
        self.face_frame = _readonly(frames)

    def _compute_element_geometry(self) -> None:
        ne = len(self.element_faces)
        volume = np.empty(ne)
        center = np.empty((ne, 3))
        diameter = np.empty(ne)
        for t in range(ne):
            verts = self.element_vertex_ids(t)
            pts = self.vertices[verts]
            x0 = pts.mean(axis=0)
            vol = 0.0
            moment = np.zeros(3)
            for f, s in zip(self.element_faces[t], self.element_signs[t]):
                loop = self.vertices[list(self.face_loops[int(f)])]
                c = self.face_centroid[int(f)]
                for a, b in zip(loop, np.roll(loop, -1, axis=0)):
                    v = s * float(np.dot(np.cross(a - c, b - c), c - x0)) / 6.0
                    vol += v
                    moment += v * (x0 + c + a + b) / 4.0
            volume[t] = vol
            center[t] = moment / vol if vol != 0.0 else x0
            diameter[t] = max(
                float(np.linalg.norm(p - q)) for p, q in itertools.combinations(pts, 2)
            )
        self.element_volume = _readonly(volume)
        self.element_center = _readonly(center)
        self.element_diameter = _readonly(diameter)

    # -- accessors --------------------------------------------------------

    @property
    def n_elements(self) -> int:
        return len(self.element_faces)

    @property
    def n_faces(self) -> int:
        return len(self.face_loops)

    @property
    def is_tetrahedral(self) -> bool:
        return all(
            len(fs) == 4 and all(len(self.face_loops[int(f)]) == 3 for f in fs)
            for fs in self.element_faces
        )

    def element_vertex_ids(self, t: int) -> list[int]:
        ids: set[int] = set()
        for f in self.element_faces[t]:
            ids.update(self.face_loops[int(f)])
        return sorted(ids)

    def outward_normal(self, t: int, local: int) -> NDArray:
        """n_TF for the local-th face of element t."""
        f = int(self.element_faces[t][local])
        return self.element_signs[t][local] * self.face_normal[f]

    def reorder_elements(self, order: Sequence[int]) -> "Mesh":
        """Same mesh with elements listed in the given order."""
        return Mesh(
            self.vertices,
            self.face_loops,
            [self.element_faces[i] for i in order],
            [self.element_signs[i] for i in order],
        )

    # -- serialization ----------------------------------------------------

    def dump(self, stream: TextIO) -> None:
        stream.write(f"{FORMAT_HEADER}\n")
        stream.write(f"vertices {len(self.vertices)}\n")
        for x, y, z in self.vertices:
            stream.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        stream.write(f"\nfaces {self.n_faces}\n")
        for loop in self.face_loops:
            stream.write(" ".join(str(v) for v in (len(loop), *loop)) + "\n")
        stream.write(f"\nelements {self.n_elements}\n")
        for fs, ss in zip(self.element_faces, self.element_signs):
            items = [f"{'+' if s > 0 else '-'}{int(f)}" for f, s in zip(fs, ss)]
            stream.write(f"{len(items)} " + " ".join(items) + "\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()


# -- validation -------------------------------------------------------------


def validate(mesh: Mesh) -> MeshReport:
    """Check the hard mesh invariants and return regularity metrics."""
    for f, loop in enumerate(mesh.face_loops):
        pts = mesh.vertices[list(loop)]
        dev = np.abs((pts - mesh.face_centroid[f]) @ mesh.face_normal[f]).max()
        if dev > PLANAR_TOLERANCE * mesh.face_diameter[f]:
            raise MeshValidationError("face not planar", f"face {f}", f"deviation {dev:.3e}")

    for f, elems in enumerate(mesh.face_elements):
        if len(elems) == 0:
            raise MeshValidationError("face not used by any element", f"face {f}")
        if len(elems) > 2:
            raise MeshValidationError("face shared by more than two elements", f"face {f}")
        if len(elems) == 2:
            s = [
                mesh.element_signs[t][int(np.flatnonzero(mesh.element_faces[t] == f)[0])]
                for t in elems
            ]
            if s[0] * s[1] > 0:
                raise MeshValidationError("interface orientations not opposite", f"face {f}")

    max_closure = 0.0
    min_margin = np.inf
    min_inradius = np.inf
    max_ratio = 0.0
    counts = []
    for t in range(mesh.n_elements):
        fs = mesh.element_faces[t]
        if len(set(int(f) for f in fs)) != len(fs):
            raise MeshValidationError("element lists a face twice", f"element {t}")
        counts.append(len(fs))
        hT = mesh.element_diameter[t]
        closure = sum(mesh.face_area[int(f)] * mesh.outward_normal(t, i) for i, f in enumerate(fs))
        res = float(np.linalg.norm(closure))
        max_closure = max(max_closure, res)
        if res > CLOSURE_TOLERANCE * hT**2:
            raise MeshValidationError("element boundary not closed", f"element {t}", f"residual {res:.3e}")
        if mesh.element_volume[t] <= 0.0:
            raise MeshValidationError("non-positive element volume", f"element {t}")
        surface = 0.0
        xT = mesh.element_center[t]
        for i, f in enumerate(fs):
            f = int(f)
            n = mesh.outward_normal(t, i)
            surface += mesh.face_area[f]
            pts = np.vstack([mesh.face_centroid[f], mesh.vertices[list(mesh.face_loops[f])]])
            margin = float(((pts - xT) @ n).min()) / hT
            min_margin = min(min_margin, margin)
            if margin <= 0.0:
                raise MeshValidationError(
                    "element not star-shaped with respect to its centroid", f"element {t}",
                    f"face {f}",
                )
            ratio = mesh.face_diameter[f] / hT
            max_ratio = max(max_ratio, ratio)
            if ratio > 1.0 + 1e-12:
                raise MeshValidationError("face diameter exceeds element diameter", f"element {t}")
        min_inradius = min(min_inradius, 3.0 * mesh.element_volume[t] / surface / hT)

    return MeshReport(
        n_vertices=len(mesh.vertices),
        n_faces=mesh.n_faces,
        n_elements=mesh.n_elements,
        n_boundary_faces=int(mesh.boundary.sum()),
        n_interior_faces=int((~mesh.boundary).sum()),
        meshsize=mesh.h,
        volume=float(mesh.element_volume.sum()),
        min_faces_per_element=min(counts) if counts else 0,
        max_faces_per_element=max(counts) if counts else 0,
        min_inradius_ratio=float(min_inradius),
        min_star_margin=float(min_margin),
        max_closure_residual=max_closure,
        max_face_to_element_diameter=float(max_ratio),
    )


# -- generators -------------------------------------------------------------


class _Builder:
    """Collects cells given as vertex loops and deduplicates shared faces."""

    def __init__(self, vertices: NDArray) -> None:
        self.vertices = vertices
        self.faces: list[tuple[int, ...]] = []
        self.index: dict[frozenset[int], int] = {}
        self.elements: list[list[int]] = []
        self.signs: list[list[int]] = []

    def add_element(self, loops: Iterable[Sequence[int]]) -> None:
        loops = [canonical_loop(l) for l in loops]
        inside = self.vertices[sorted({v for l in loops for v in l})].mean(axis=0)
        ids, signs = [], []
        for loop in loops:
            key = frozenset(loop)
            f = self.index.get(key)
            if f is None:
                f = len(self.faces)
                self.index[key] = f
                self.faces.append(loop)
            pts = self.vertices[list(self.faces[f])]
            area_vec = np.cross(pts, np.roll(pts, -1, axis=0)).sum(axis=0)
            ids.append(f)
            signs.append(1 if float(np.dot(area_vec, pts.mean(axis=0) - inside)) > 0.0 else -1)
        self.elements.append(ids)
        self.signs.append(signs)

    def build(self) -> Mesh:
        return Mesh(self.vertices, self.faces, self.elements, self.signs)


def _grid(n: int) -> tuple[NDArray, Callable[[int, int, int], int]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    ticks = np.linspace(0.0, 1.0, n + 1)
    z, y, x = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def vid(i: int, j: int, k: int) -> int:
        return i + (n + 1) * (j + (n + 1) * k)

    return vertices, vid


def generate_cubic(n: int) -> Mesh:
    """Uniform n x n x n partition of the unit cube into axis-aligned cubes."""
    vertices, vid = _grid(n)
    b = _Builder(vertices)
    for k in range(n):
        for j in range(n):
            for i in range(n):
                c = {
                    (a, bb, cc): vid(i + a, j + bb, k + cc)
                    for a in (0, 1) for bb in (0, 1) for cc in (0, 1)
                }
                b.add_element([
                    (c[0, 0, 0], c[0, 1, 0], c[0, 1, 1], c[0, 0, 1]),
                    (c[1, 0, 0], c[1, 1, 0], c[1, 1, 1], c[1, 0, 1]),
                    (c[0, 0, 0], c[1, 0, 0], c[1, 0, 1], c[0, 0, 1]),
                    (c[0, 1, 0], c[1, 1, 0], c[1, 1, 1], c[0, 1, 1]),
                    (c[0, 0, 0], c[1, 0, 0], c[1, 1, 0], c[0, 1, 0]),
                    (c[0, 0, 1], c[1, 0, 1], c[1, 1, 1], c[0, 1, 1]),
                ])
    mesh = b.build()
    logger.info("cubic mesh n=%d: %d elements, %d faces", n, mesh.n_elements, mesh.n_faces)
    return mesh


def generate_tetrahedral(n: int) -> Mesh:
    """Kuhn split of the n^3 cube grid: 6 tetrahedra per cube sharing the main diagonal."""
    vertices, vid = _grid(n)
    b = _Builder(vertices)
    for k in range(n):
        for j in range(n):
            for i in range(n):
                for perm in itertools.permutations(range(3)):
                    corner = [0, 0, 0]
                    path = [vid(i, j, k)]
                    for axis in perm:
                        corner[axis] = 1
                        path.append(vid(i + corner[0], j + corner[1], k + corner[2]))
                    b.add_element([tuple(tri) for tri in itertools.combinations(path, 3)])
    mesh = b.build()
    logger.info("tetrahedral mesh n=%d: %d elements, %d faces", n, mesh.n_elements, mesh.n_faces)
    return mesh


# -- loading ----------------------------------------------------------------


def _section(lines: list[tuple[int, str]], pos: int, name: str) -> tuple[int, int]:
    if pos >= len(lines):
        raise MeshFormatError(f"missing '{name}' section", lines[-1][0] if lines else None)
    lineno, text = lines[pos]
    parts = text.split()
    if len(parts) != 2 or parts[0] != name:
        raise MeshFormatError(f"expected '{name} <count>', got {text!r}", lineno)
    try:
        count = int(parts[1])
    except ValueError:
        raise MeshFormatError(f"invalid {name} count {parts[1]!r}", lineno)
    if count < 0 or pos + 1 + count > len(lines):
        raise MeshFormatError(f"{name} section truncated", lineno)
    return count, pos + 1


def load_mesh(stream: TextIO) -> Mesh:
    """Parse a ``polymesh v1`` stream; geometry is recomputed and validated."""
    lines = []
    for lineno, raw in enumerate(stream, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text))
    if not lines or lines[0][1] != FORMAT_HEADER:
        raise MeshFormatError(f"missing header '{FORMAT_HEADER}'", lines[0][0] if lines else 1)

    nv, pos = _section(lines, 1, "vertices")
    vertices = np.empty((nv, 3))
    for i in range(nv):
        lineno, text = lines[pos + i]
        try:
            coords = [float(x) for x in text.split()]
        except ValueError:
            raise MeshFormatError(f"invalid vertex coordinates {text!r}", lineno)
        if len(coords) != 3:
            raise MeshFormatError("vertex needs 3 coordinates", lineno)
        vertices[i] = coords
    pos += nv

    nf, pos = _section(lines, pos, "faces")
    faces = []
    for i in range(nf):
        lineno, text = lines[pos + i]
        try:
            items = [int(x) for x in text.split()]
        except ValueError:
            raise MeshFormatError(f"invalid face entry {text!r}", lineno)
        if not items or items[0] != len(items) - 1 or items[0] < 3:
            raise MeshFormatError("face vertex count does not match its loop", lineno)
        if min(items[1:]) < 0 or max(items[1:]) >= nv:
            raise MeshFormatError("face references unknown vertex", lineno)
        faces.append(items[1:])
    pos += nf

    ne, pos = _section(lines, pos, "elements")
    elements, signs = [], []
    for i in range(ne):
        lineno, text = lines[pos + i]
        parts = text.split()
        try:
            m = int(parts[0])
        except (ValueError, IndexError):
            raise MeshFormatError(f"invalid element entry {text!r}", lineno)
        if m != len(parts) - 1 or m < 4:
            raise MeshFormatError("element face count does not match its list", lineno)
        ids, sg = [], []
        for tok in parts[1:]:
            if tok[0] not in "+-" or not tok[1:].isdigit():
                raise MeshFormatError(f"element face {tok!r} needs an explicit sign", lineno)
            f = int(tok[1:])
            if f >= nf:
                raise MeshFormatError(f"element references unknown face {f}", lineno)
            ids.append(f)
            sg.append(1 if tok[0] == "+" else -1)
        elements.append(ids)
        signs.append(sg)
    pos += ne
    if pos != len(lines):
        raise MeshFormatError("unexpected trailing content", lines[pos][0])

    return Mesh(vertices, faces, elements, signs)


def build_mesh(vertices: NDArray, cells: Sequence[Sequence[Sequence[int]]]) -> Mesh:
    """Mesh from convex cells given as lists of face vertex loops; shared faces are merged."""
    b = _Builder(np.asarray(vertices, dtype=float))
    for cell in cells:
        b.add_element(cell)
    return b.build()
