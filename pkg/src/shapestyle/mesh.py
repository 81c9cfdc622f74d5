"""Fixed-template triangle meshes: representation, OBJ I/O, topology queries."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction and I/O failures."""


class InvalidMeshError(MeshError):
    """Mesh violates a structural invariant (empty, bad dtype, orphan vertices)."""


class NonTriangularFaceError(MeshError):
    """An OBJ face line has a vertex count other than three."""


class FaceIndexError(MeshError):
    """A face references a vertex index outside [0, num_vertices)."""


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh on a shared connectivity template.

    vertices are meters, shape (N, 3); faces are 0-based index triples,
    shape (F, 3). Two meshes with the same template_id carry bit-identical
    faces arrays. Instances are immutable after construction.
    """

    vertices: np.ndarray
    faces: np.ndarray
    template_id: str = "untemplated"

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
            raise InvalidMeshError(f"vertices must be (N, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3 or faces.shape[0] == 0:
            raise InvalidMeshError(f"faces must be (F, 3) with F >= 1, got {faces.shape}")
        if faces.min() < 0 or faces.max() >= len(verts):
            raise FaceIndexError(
                f"face index out of range [0, {len(verts)}): "
                f"min {faces.min()}, max {faces.max()}"
            )
        referenced = np.zeros(len(verts), dtype=bool)
        referenced[faces.reshape(-1)] = True
        if not referenced.all():
            orphans = np.flatnonzero(~referenced)
            raise InvalidMeshError(
                f"{orphans.size} vertices unreferenced by any face (first: {orphans[:5]})"
            )
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same connectivity, new vertex positions."""
        return Mesh(vertices=vertices, faces=self.faces, template_id=self.template_id)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def edge_set(mesh: Mesh) -> np.ndarray:
    """Unique undirected edges of the face set, one row per edge.

    Rows are (a, b) with a < b, sorted lexicographically; this is the one-ring
    adjacency used by the edge-length regularizer.
    """
    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def vertex_degrees(mesh: Mesh) -> np.ndarray:
    """Number of one-ring neighbors per vertex."""
    edges = edge_set(mesh)
    return np.bincount(edges.reshape(-1), minlength=mesh.num_vertices)


def distance_matrix(vertices: "Mesh | np.ndarray") -> np.ndarray:
    """Dense all-pairs Euclidean distances, shape (N, N), zero diagonal.

    Accepts a Mesh or an (N, 3) array. Computed on demand, never cached,
    so it stays valid on generated vertex sets.
    """
    if isinstance(vertices, Mesh):
        vertices = vertices.vertices
    v = np.asarray(vertices, dtype=np.float64)
    diff = v[:, None, :] - v[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(d, 0.0)
    return d


def upper_triangle_count(num_vertices: int) -> int:
    """Entry count of the strict upper triangle of an N x N matrix."""
    return num_vertices * (num_vertices - 1) // 2


def _parse_vertex_ref(token: str, num_vertices: int, lineno: int) -> int:
    # accepts "i", "i/t", "i//n", "i/t/n"; only the vertex index is kept
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise FaceIndexError(f"line {lineno}: unparseable face index {token!r}") from None
    if idx < 1 or idx > num_vertices:
        raise FaceIndexError(
            f"line {lineno}: face index {idx} outside [1, {num_vertices}]"
        )
    return idx - 1


def load_mesh(path: str | os.PathLike, template_id: str | None = None) -> Mesh:
    """Read an ASCII OBJ with triangular faces.

    Vertices keep file order; indices are converted to 0-based. A
    "# template_id: <id>" comment, when present, names the connectivity
    template; otherwise the file stem is used.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such mesh file: {path}")
    vertices: list[tuple[float, float, float]] = []
    raw_faces: list[tuple[int, list[str]]] = []
    file_template = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                comment = stripped[1:].strip()
                if comment.startswith("template_id:"):
                    file_template = comment.split(":", 1)[1].strip()
                continue
            parts = stripped.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise InvalidMeshError(f"line {lineno}: malformed vertex line {stripped!r}")
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise NonTriangularFaceError(
                        f"line {lineno}: face with {len(parts) - 1} vertices; only triangles supported"
                    )
                raw_faces.append((lineno, parts[1:]))
            # other directives (vn, vt, o, g, s, usemtl, mtllib) are ignored
    n = len(vertices)
    faces = [
        [_parse_vertex_ref(tok, n, lineno) for tok in toks] for lineno, toks in raw_faces
    ]
    if template_id is None:
        template_id = file_template or os.path.splitext(os.path.basename(path))[0]
    return Mesh(
        vertices=np.array(vertices, dtype=np.float64),
        faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
        template_id=template_id,
    )


def save_mesh(mesh: Mesh, path: str | os.PathLike) -> None:
    """Write an ASCII OBJ (1-based indices, 9 significant digits per coordinate)."""
    path = os.fspath(path)
    lines = [f"# template_id: {mesh.template_id}\n"]
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)
