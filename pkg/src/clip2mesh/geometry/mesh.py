"""Triangle meshes: validation, derived normals, sampling, OBJ/PLY I/O."""

from __future__ import annotations

import numpy as np

_AREA_EPS = 1e-12


class TriMesh:
    """Indexed triangle mesh (float64 vertices, int64 faces).

    Face normals are derived on construction and unit length; degenerate
    faces (area <= 1e-12) are rejected. Vertex normals are angle weighted.
    """

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (V,3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F,3)")
        self._face_normals = None
        self._face_areas = None
        self._vertex_normals = None
        if len(self.faces):
            cross = self._cross()
            areas = 0.5 * np.linalg.norm(cross, axis=1)
            if np.any(areas <= _AREA_EPS):
                raise ValueError("degenerate face (area <= 1e-12)")
            self._face_areas = areas
            self._face_normals = cross / (2.0 * areas[:, None])

    def _cross(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return np.cross(b - a, c - a)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @property
    def face_normals(self) -> np.ndarray:
        return self._face_normals

    @property
    def face_areas(self) -> np.ndarray:
        return self._face_areas

    @property
    def vertex_normals(self) -> np.ndarray:
        """Angle-weighted, renormalized per-vertex normals."""
        if self._vertex_normals is None:
            vn = np.zeros_like(self.vertices)
            v = self.vertices
            tri = v[self.faces]  # (F,3,3)
            for corner in range(3):
                p = tri[:, corner]
                e1 = tri[:, (corner + 1) % 3] - p
                e2 = tri[:, (corner + 2) % 3] - p
                e1n = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
                e2n = e2 / np.linalg.norm(e2, axis=1, keepdims=True)
                ang = np.arccos(np.clip((e1n * e2n).sum(axis=1), -1.0, 1.0))
                np.add.at(vn, self.faces[:, corner], self._face_normals * ang[:, None])
            norms = np.linalg.norm(vn, axis=1, keepdims=True)
            self._vertex_normals = vn / np.maximum(norms, 1e-30)
        return self._vertex_normals

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (E,2) index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def edge_face_counts(self) -> np.ndarray:
        """How many faces share each unique undirected edge."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        """Closed 2-manifold test: every edge shared by exactly two faces."""
        if self.is_empty:
            return False
        return bool(np.all(self.edge_face_counts() == 2))

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return int(len(used) - len(self.edges()) + len(self.faces))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def scaled(self, s: float) -> "TriMesh":
        return TriMesh(self.vertices * float(s), self.faces)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted uniform surface samples (n,3)."""
        points, _ = self.sample_surface_with_faces(n, rng)
        return points

    def sample_surface_with_faces(self, n: int, rng: np.random.Generator):
        if self.is_empty:
            raise ValueError("cannot sample an empty mesh")
        probs = self._face_areas / self._face_areas.sum()
        fi = rng.choice(len(self.faces), size=n, p=probs)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        tri = self.vertices[self.faces[fi]]
        w0 = 1.0 - r1
        w1 = r1 * (1.0 - r2)
        w2 = r1 * r2
        pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
        return pts, fi


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron with outward normals (vertices on the sphere)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        vlist = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = vlist[i] + vlist[j]
                m /= np.linalg.norm(m)
                cache[key] = len(vlist)
                vlist.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    return TriMesh(verts * radius, faces)


# -- I/O -------------------------------------------------------------------


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        return empty_mesh()
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_ply(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def load_ply(path) -> TriMesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ValueError("not a PLY file")
    n_v = n_f = 0
    body = 0
    for i, ln in enumerate(lines):
        if ln.startswith("element vertex"):
            n_v = int(ln.split()[-1])
        elif ln.startswith("element face"):
            n_f = int(ln.split()[-1])
        elif ln == "end_header":
            body = i + 1
            break
    verts = np.array([[float(x) for x in lines[body + i].split()[:3]] for i in range(n_v)])
    faces = np.array([[int(x) for x in lines[body + n_v + i].split()[1:4]] for i in range(n_f)],
                     dtype=np.int64).reshape(-1, 3)
    if n_v == 0:
        return empty_mesh()
    return TriMesh(verts, faces)
