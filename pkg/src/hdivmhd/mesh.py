"""Tetrahedral meshes with oriented face topology.

Faces are keyed by their sorted vertex triple.  The owner of a face is the
incident tet with the smaller index; the face normal ``n_f`` is the owner's
outward normal, which on the boundary is outward to the domain.  With this
convention the jump of a piecewise function across a face is
``value_on_owner - value_on_neighbor`` and equals the trace on boundary faces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOUNDARY = -1

# local face j of a tet is opposite local vertex j
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


class MeshError(ValueError):
    pass


class NonConformingMeshError(MeshError):
    pass


class DegenerateElementError(MeshError):
    pass


class TetgenParseError(MeshError):
    pass


class UnsupportedFormatError(MeshError):
    pass


class MeshConsistencyError(MeshError):
    pass


@dataclass(frozen=True)
class FaceRecord:
    vertex_ids: tuple[int, int, int]
    owner_tet: int
    neighbor_tet: int
    n_f: np.ndarray
    area: float
    h_f: float
    is_boundary: bool


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray  # (nv, 3)
    tets: np.ndarray  # (ne, 4), positively oriented
    face_vertices: np.ndarray = field(repr=False)  # (nf, 3) sorted
    face_owner: np.ndarray = field(repr=False)
    face_neighbor: np.ndarray = field(repr=False)  # BOUNDARY on the boundary
    face_normal: np.ndarray = field(repr=False)  # (nf, 3)
    face_area: np.ndarray = field(repr=False)
    face_h: np.ndarray = field(repr=False)
    tet_faces: np.ndarray = field(repr=False)  # (ne, 4) global face of local face j
    tet_face_sign: np.ndarray = field(repr=False)  # n_f . n_E for each local face
    h_E: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def is_boundary_face(self) -> np.ndarray:
        return self.face_neighbor == BOUNDARY

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor != BOUNDARY)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor == BOUNDARY)

    def face(self, i: int) -> FaceRecord:
        return FaceRecord(
            vertex_ids=tuple(int(v) for v in self.face_vertices[i]),
            owner_tet=int(self.face_owner[i]),
            neighbor_tet=int(self.face_neighbor[i]),
            n_f=self.face_normal[i].copy(),
            area=float(self.face_area[i]),
            h_f=float(self.face_h[i]),
            is_boundary=bool(self.face_neighbor[i] == BOUNDARY),
        )

    @property
    def faces(self) -> list[FaceRecord]:
        return [self.face(i) for i in range(self.n_faces)]

    def jacobians(self) -> np.ndarray:
        """Affine map x = v0 + J xhat per tet, shape (ne, 3, 3)."""
        v = self.vertices[self.tets]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=-1)

    def boundary_vertex_flags(self, tol: float = 1e-12) -> np.ndarray:
        """(nv, 3) boolean: vertex lies on an axis-aligned boundary plane normal to axis a."""
        flags = np.zeros((self.n_vertices, 3), dtype=bool)
        for f in self.boundary_faces:
            axis = int(np.argmax(np.abs(self.face_normal[f])))
            if abs(abs(self.face_normal[f, axis]) - 1.0) < tol:
                flags[self.face_vertices[f], axis] = True
        return flags

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique sorted edges (n_edges, 2) and the (ne, 6) tet-to-edge map."""
        pairs = np.sort(self.tets[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1, 6)


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
                     v[:, 3] - v[:, 0]) / 6.0


def build_faces(vertices: np.ndarray, tets: np.ndarray) -> TetMesh:
    """Assemble a TetMesh with full face topology from raw arrays."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshConsistencyError("tets must have shape (n, 4)")
    if tets.min(initial=0) < 0 or tets.max(initial=-1) >= len(vertices):
        raise MeshConsistencyError("tet references a vertex index outside the vertex list")
    vols = signed_volumes(vertices, tets)
    if np.any(vols <= 0):
        raise DegenerateElementError(
            f"tet {int(np.argmin(vols))} has non-positive signed volume")

    ne = len(tets)
    local = tets[:, LOCAL_FACES]  # (ne, 4, 3)
    keys = np.sort(local, axis=2).reshape(-1, 3)
    uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        bad = uniq[np.argmax(counts)]
        raise NonConformingMeshError(f"face {tuple(bad)} shared by more than two tets")
    nf = len(uniq)
    tet_of = np.repeat(np.arange(ne), 4)
    # rows are in ascending tet order, so the first hit per face is the owner
    order = np.argsort(inv, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    owner = np.empty(nf, dtype=np.int64)
    owner[inv[order][first]] = tet_of[order][first]
    neighbor = np.full(nf, BOUNDARY, dtype=np.int64)
    second = ~first
    neighbor[inv[order][second]] = tet_of[order][second]

    fv = vertices[uniq]
    e1 = fv[:, 1] - fv[:, 0]
    e2 = fv[:, 2] - fv[:, 0]
    cr = np.cross(e1, e2)
    area2 = np.linalg.norm(cr, axis=1)
    normal = cr / area2[:, None]
    tet_faces = inv.reshape(ne, 4)
    is_owner = owner[tet_faces] == np.arange(ne)[:, None]
    # orient n_f away from the owner's vertex opposite the face
    opp = np.empty(nf, dtype=np.int64)
    opp[tet_faces[is_owner]] = tets[is_owner]
    outward = np.einsum("ij,ij->i", normal, fv[:, 0] - vertices[opp])
    normal = normal * np.sign(outward)[:, None]
    sign = np.where(is_owner, 1.0, -1.0)

    edges = np.stack([fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0], fv[:, 2] - fv[:, 1]], axis=1)
    face_h = np.linalg.norm(edges, axis=2).max(axis=1)
    tv = vertices[tets]
    tet_edges = tv[:, LOCAL_EDGES[:, 1]] - tv[:, LOCAL_EDGES[:, 0]]
    h_E = np.linalg.norm(tet_edges, axis=2).max(axis=1)

    return TetMesh(vertices, tets, uniq, owner, neighbor, normal, 0.5 * area2, face_h,
                   tet_faces, sign, h_E, vols)


def generate_structured_cube(n: int) -> TetMesh:
    """Kuhn (Freudenthal) split of an n^3 grid of the unit cube into 6 n^3 tets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    unit = np.eye(3, dtype=int)
    patterns = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner = corner + unit[axis]
            path.append(corner.copy())
        patterns.append(np.array(path))
    patterns = np.array(patterns)  # (6, 4, 3)

    I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)  # (n^3, 3)
    c = base[:, None, None, :] + patterns[None]  # (n^3, 6, 4, 3)
    tets = vid(c[..., 0], c[..., 1], c[..., 2]).reshape(-1, 4)
    tets = _orient(vertices, tets)
    return build_faces(vertices, tets)


def _orient(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = tets.copy()
    neg = signed_volumes(vertices, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def mesh_metrics(mesh: TetMesh) -> dict[str, float]:
    v = mesh.vertices[mesh.tets]
    faces = v[:, LOCAL_FACES]
    areas = 0.5 * np.linalg.norm(
        np.cross(faces[:, :, 1] - faces[:, :, 0], faces[:, :, 2] - faces[:, :, 0]), axis=2)
    rho = 3.0 * mesh.volumes / areas.sum(axis=1)
    bad = rho < 1e-14 * mesh.h_E
    if np.any(bad):
        raise DegenerateElementError(f"tet {int(np.argmax(bad))} is degenerate")
    return {
        "h_max": float(mesh.h_E.max()),
        "h_min": float(mesh.h_E.min()),
        "h_mean": float(mesh.h_E.mean()),
        "shape_regularity": float(np.max(mesh.h_E / rho)),
    }


# ---------------------------------------------------------------- tetgen I/O

def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _header(lines, what: str, width: int):
    try:
        lineno, toks = next(lines)
    except StopIteration:
        raise TetgenParseError(f"{what}: empty file") from None
    try:
        vals = [int(t) for t in toks[:width]]
    except ValueError:
        raise TetgenParseError(f"{what}: malformed header at line {lineno}: {' '.join(toks)}") from None
    if len(vals) < 2:
        raise TetgenParseError(f"{what}: malformed header at line {lineno}: {' '.join(toks)}")
    return lineno, vals + [0] * (width - len(vals))


def load_tetgen(node_text: str, ele_text: str) -> TetMesh:
    """Parse tetgen ASCII .node/.ele contents.

    The index base (0 or 1) comes from the first node index.  Attributes and
    boundary markers are read past and ignored.
    """
    lines = _data_lines(node_text)
    _, (nn, dim, nattr, nmark) = _header(lines, "node file", 4)
    if dim != 3:
        raise UnsupportedFormatError(f"node file dimension {dim} unsupported (need 3)")
    ids = np.empty(nn, dtype=np.int64)
    coords = np.empty((nn, 3))
    for i in range(nn):
        try:
            lineno, toks = next(lines)
        except StopIteration:
            raise TetgenParseError(f"node file: expected {nn} nodes, found {i}") from None
        if len(toks) < 4:
            raise TetgenParseError(f"node file: malformed node at line {lineno}")
        try:
            ids[i] = int(toks[0])
            coords[i] = [float(t) for t in toks[1:4]]
        except ValueError:
            raise TetgenParseError(f"node file: malformed node at line {lineno}") from None
    base = int(ids[0]) if nn else 0
    if base not in (0, 1):
        raise TetgenParseError(f"node file: first node index {base} is neither 0 nor 1")
    if not np.array_equal(ids, np.arange(base, base + nn)):
        raise MeshConsistencyError("node file: node indices are not consecutive")

    lines = _data_lines(ele_text)
    _, (ne, npt, _nattr) = _header(lines, "ele file", 3)
    if npt not in (4, 10):
        raise UnsupportedFormatError(f"ele file: {npt} nodes per tet unsupported")
    tets = np.empty((ne, 4), dtype=np.int64)
    for i in range(ne):
        try:
            lineno, toks = next(lines)
        except StopIteration:
            raise TetgenParseError(f"ele file: expected {ne} tets, found {i}") from None
        if len(toks) < 1 + npt:
            raise TetgenParseError(f"ele file: malformed tet at line {lineno}")
        try:
            tets[i] = [int(t) for t in toks[1:5]]
        except ValueError:
            raise TetgenParseError(f"ele file: malformed tet at line {lineno}") from None
    tets -= base
    if ne and (tets.min() < 0 or tets.max() >= nn):
        raise MeshConsistencyError("ele file: tet references a vertex that does not exist")
    vols = signed_volumes(coords, tets)
    if np.any(vols == 0):
        raise DegenerateElementError(f"tet {int(np.argmin(np.abs(vols)))} has zero volume")
    return build_faces(coords, _orient(coords, tets))


def load_tetgen_files(node_path, ele_path) -> TetMesh:
    return load_tetgen(Path(node_path).read_text(), Path(ele_path).read_text())


def to_tetgen(mesh: TetMesh) -> tuple[str, str]:
    """Serialize to tetgen .node/.ele text (0-based, no attributes or markers)."""
    node = [f"{mesh.n_vertices} 3 0 0"]
    node += [f"{i} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    ele = [f"{mesh.n_tets} 4 0"]
    ele += [f"{i} {a} {b} {c} {d}" for i, (a, b, c, d) in enumerate(mesh.tets.tolist())]
    return "\n".join(node) + "\n", "\n".join(ele) + "\n"


def dump_mesh(mesh: TetMesh) -> str:
    """Plain-text dump: 'v x y z' per vertex, then 't a b c d' per tet."""
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"t {a} {b} {c} {d}" for a, b, c, d in mesh.tets.tolist()]
    return "\n".join(out) + "\n"


def read_dump(text: str) -> TetMesh:
    verts, tets = [], []
    for lineno, toks in _data_lines(text):
        if toks[0] == "v":
            verts.append([float(t) for t in toks[1:4]])
        elif toks[0] == "t":
            tets.append([int(t) for t in toks[1:5]])
        else:
            raise TetgenParseError(f"mesh dump: unknown record at line {lineno}")
    return build_faces(np.array(verts), np.array(tets, dtype=np.int64))
