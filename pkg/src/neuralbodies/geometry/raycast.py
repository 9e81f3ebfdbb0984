"""Moller-Trumbore ray casting, chord extraction and inside/outside tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..errors import ConfigurationError, GeometryDegeneracyError

MERGE_TOL = 1e-9
SURFACE_TOL = 1e-9
MAX_JITTERS = 8
_PARALLEL_EPS = 1e-14
_BARY_EPS = 1e-12
# irrational-ish fixed direction, unlikely to align with mesh features
_BASE_DIRECTION = np.array([0.5773502691896258, 0.6154797086703873, 0.5366563145999495])
_BASE_DIRECTION = _BASE_DIRECTION / np.linalg.norm(_BASE_DIRECTION)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise ConfigurationError("ray direction must be nonzero")
        if abs(n - 1.0) > 1e-12:
            d = d / n
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + t * self.direction


class Hit(NamedTuple):
    t: float
    u: float
    v: float


def _mt(origin, direction, v0, v1, v2):
    """Vectorised Moller-Trumbore over triangles; returns t, u, v, hit mask."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("...i,...i->...", e1, p)
    ok = np.abs(det) > _PARALLEL_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.einsum("...i,...i->...", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("...i,...i->...", direction, q) * inv
    t = np.einsum("...i,...i->...", e2, q) * inv
    hit = ok & (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS) & (t >= 0.0)
    return t, u, v, hit


def ray_triangle_intersect(ray, tri) -> Optional[Hit]:
    """Intersection ``origin + t*direction`` with a triangle, or None.

    ``u`` and ``v`` are the barycentric weights of the second and third
    corner.  Hits behind the origin (t < 0) are misses.
    """
    tri = np.asarray(tri, dtype=np.float64)
    t, u, v, hit = _mt(ray.origin, ray.direction, tri[0], tri[1], tri[2])
    if not hit:
        return None
    return Hit(float(t), float(min(max(u, 0.0), 1.0)), float(min(max(v, 0.0), 1.0)))


def _crossings(mesh, origin, direction):
    tri = mesh.triangles
    t, _, _, hit = _mt(origin, direction, tri[:, 0], tri[:, 1], tri[:, 2])
    ts = np.sort(t[hit])
    if ts.size < 2:
        return ts
    keep = np.concatenate([[True], np.diff(ts) > MERGE_TOL])
    return ts[keep]


def ray_mesh_chords(mesh, ray):
    """Sorted entry/exit parameters; pairs bound the interior segments.

    Near-coincident crossings (edge or vertex hits) are merged first.  An odd
    count after merging means the ray grazed the surface.
    """
    ts = _crossings(mesh, ray.origin, ray.direction)
    if ts.size % 2:
        raise GeometryDegeneracyError(f"odd number of crossings ({ts.size}) along ray")
    return ts.tolist()


def chord_length(mesh, ray):
    ts = np.asarray(ray_mesh_chords(mesh, ray))
    return float((ts[1::2] - ts[0::2]).sum()) if ts.size else 0.0


def jitter_directions(count=MAX_JITTERS, seed=7):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


_JITTERS = jitter_directions()


def point_inside(mesh, p):
    """Parity of surface crossings along a fixed direction from ``p``.

    A ray whose crossing is ambiguous (hit within 1e-9 of the origin, or an
    odd count after merging duplicates) is re-cast along a jittered direction.
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    for direction in [_BASE_DIRECTION, *_JITTERS]:
        tri = mesh.triangles
        t, u, v, hit = _mt(p, direction, tri[:, 0], tri[:, 1], tri[:, 2])
        if np.any(hit & (t < SURFACE_TOL)) or _near_edge(u, v, hit):
            continue
        ts = np.sort(t[hit])
        return bool(ts.size % 2)
    raise GeometryDegeneracyError(f"inside test degenerate after {MAX_JITTERS} jitters at {p}")


def _near_edge(u, v, hit, tol=1e-9):
    if not np.any(hit):
        return False
    uu, vv = u[hit], v[hit]
    return bool(np.any((uu < tol) | (vv < tol) | (uu + vv > 1.0 - tol)))


def points_inside(mesh, points):
    """Vectorised :func:`point_inside` with per-point fallback on ambiguity."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    chunk = max(1, min(512, 2 ** 18 // max(len(tri), 1)))
    v0, v1, v2 = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    out = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk, None, :]
        t, u, v, hit = _mt(p, _BASE_DIRECTION, v0, v1, v2)
        tol = 1e-9
        edgy = hit & ((u < tol) | (v < tol) | (u + v > 1.0 - tol) | (t < SURFACE_TOL))
        parity = hit.sum(axis=1) % 2 == 1
        bad = edgy.any(axis=1)
        out[start:start + len(p)] = parity
        for k in np.nonzero(bad)[0]:
            out[start + k] = point_inside(mesh, points[start + k])
    return out
