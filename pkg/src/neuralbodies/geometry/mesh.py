"""Triangle meshes, analytic test bodies and OBJ input/output."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError

MIN_AREA = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    """Polyhedral body in the body-fixed frame, counter-clockwise outward faces."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ConfigurationError("vertices must be an (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ConfigurationError("faces must be an (m, 3) array of triangles")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ConfigurationError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if f.size and np.any(self.face_areas() <= MIN_AREA):
            raise ConfigurationError("degenerate triangle (area <= 1e-12)")

    @property
    def triangles(self):
        """(m, 3, 3) array of face corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self, unit=True):
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if unit:
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def signed_volume(self):
        """Divergence-theorem volume; positive for outward winding."""
        tri = self.triangles
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def is_watertight(self):
        """Every undirected edge shared by exactly two faces."""
        if not len(self.faces):
            return False
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def circumscribing_radius(self):
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def normalized(self, half_extent=0.8):
        """Centre the bounding box and scale the longest half-extent to ``half_extent``."""
        lo, hi = self.bounds()
        centre = 0.5 * (lo + hi)
        scale = half_extent / (0.5 * (hi - lo).max())
        return TriangleMesh((self.vertices - centre) * scale, self.faces)

    def transformed(self, rotation):
        return TriangleMesh(self.vertices @ np.asarray(rotation).T, self.faces)

    def is_empty(self):
        return len(self.faces) == 0


def empty_mesh():
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def make_cube(side=1.0):
    if side <= 0:
        raise ConfigurationError("cube side must be positive")
    h = 0.5 * side
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # vertex index = 4*ix + 2*iy + iz
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # x = -h
        [4, 6, 7], [4, 7, 5],  # x = +h
        [0, 4, 5], [0, 5, 1],  # y = -h
        [2, 3, 7], [2, 7, 6],  # y = +h
        [0, 2, 6], [0, 6, 4],  # z = -h
        [1, 5, 7], [1, 7, 3],  # z = +h
    ])
    return TriangleMesh(v, faces)


def make_icosphere(radius=1.0, subdivisions=3):
    """Subdivided icosahedron with every vertex projected onto the sphere."""
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    if not 0 <= subdivisions <= 6:
        raise ConfigurationError("subdivisions must be in [0, 6]")
    phi = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
             [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
             [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    v = np.asarray(verts) * radius
    return TriangleMesh(v, np.asarray(faces))


def load_obj(path):
    """Read ``v`` and ``f`` records (1-based, triangles only, ``a/b/c`` allowed)."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise ConfigurationError(f"{path}:{lineno}: only triangular faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts or not faces:
        raise ConfigurationError(f"{path}: no vertices or faces")
    return TriangleMesh(np.asarray(verts), np.asarray(faces))


def save_obj(mesh, path):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
