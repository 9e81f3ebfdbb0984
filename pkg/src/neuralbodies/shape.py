"""Signed distance reconstruction of a body surface from a point cloud.

Sign convention: distances are POSITIVE INSIDE the body and negative
outside (the opposite of the usual graphics convention).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .diffcore import MlpModel, OptimizerState, Tape, backward, fit, forward, forward_with_input_gradient
from .diffcore import ops as T
from .errors import ConfigurationError
from .geometry import TriangleMesh, empty_mesh, points_inside
from .rng import stream

log = logging.getLogger(__name__)


# point clouds ---------------------------------------------------------------

@dataclass
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not len(self.points):
            raise ConfigurationError("point cloud is empty")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ConfigurationError("normals and points differ in count")
            if np.max(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)) > 1e-9:
                raise ConfigurationError("normals must be unit vectors")

    def __len__(self):
        return len(self.points)

    def save_csv(self, path):
        if self.normals is None:
            data, header = self.points, "x,y,z"
        else:
            data, header = np.hstack([self.points, self.normals]), "x,y,z,nx,ny,nz"
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] == 3:
            return cls(data)
        if data.shape[1] == 6:
            normals = data[:, 3:] / np.linalg.norm(data[:, 3:], axis=1, keepdims=True)
            return cls(data[:, :3], normals)
        raise ConfigurationError(f"{path}: expected columns x,y,z[,nx,ny,nz]")

    @classmethod
    def load(cls, path):
        return load_ply(path) if str(path).lower().endswith(".ply") else cls.load_csv(path)


def load_ply(path):
    """Minimal ASCII PLY reader: the ``vertex`` element's x, y, z (and nx, ny, nz)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ConfigurationError(f"{path}: not a PLY file")
    elements, props, current = [], {}, None
    body_start = None
    for i, line in enumerate(lines[1:], 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise ConfigurationError(f"{path}: only ASCII PLY is supported")
        elif parts[0] == "element":
            current = parts[1]
            elements.append((current, int(parts[2])))
            props[current] = []
        elif parts[0] == "property":
            if parts[1] == "list":
                props[current].append(parts[4])
            else:
                props[current].append(parts[2])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if body_start is None:
        raise ConfigurationError(f"{path}: missing end_header")
    pos = body_start
    for name, count in elements:
        if name == "vertex":
            names = props[name]
            rows = np.array([[float(x) for x in lines[pos + k].split()[: len(names)]] for k in range(count)])
            col = {n: rows[:, j] for j, n in enumerate(names)}
            pts = np.column_stack([col["x"], col["y"], col["z"]])
            normals = None
            if all(k in col for k in ("nx", "ny", "nz")):
                normals = np.column_stack([col["nx"], col["ny"], col["nz"]])
                normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            return PointCloud(pts, normals)
        pos += count
    raise ConfigurationError(f"{path}: no vertex element")


def save_ply(cloud, path):
    has_n = cloud.normals is not None
    head = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
            "property double x", "property double y", "property double z"]
    if has_n:
        head += ["property double nx", "property double ny", "property double nz"]
    head.append("end_header")
    data = np.hstack([cloud.points, cloud.normals]) if has_n else cloud.points
    rows = [" ".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(head + rows) + "\n")


# mesh distance oracle -------------------------------------------------------

def closest_point_distance2(points, tri):
    """Squared distance from points (n, 3) to triangles (m, 3, 3); returns (n, m).

    Region classification of the closest feature (vertex, edge or face).
    """
    p = points[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]

    def dot(x, y):
        return np.einsum("...i,...i->...", x, y)

    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    closest = a + ab * v[..., None] + ac * w[..., None]

    def put(mask, value):
        nonlocal closest
        closest = np.where(mask[..., None], value, closest)

    # edge regions (assigned first, vertices override)
    def safe(num, den):
        return num / np.where(den == 0, 1.0, den)

    m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    put(m_bc, b + (c - b) * safe(d4 - d3, (d4 - d3) + (d5 - d6))[..., None])
    m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    put(m_ac, a + ac * safe(d2, d2 - d6)[..., None])
    m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    put(m_ab, a + ab * safe(d1, d1 - d3)[..., None])
    put((d6 >= 0) & (d5 <= d6), np.broadcast_to(c, closest.shape))
    put((d3 >= 0) & (d4 <= d3), np.broadcast_to(b, closest.shape))
    put((d1 <= 0) & (d2 <= 0), np.broadcast_to(a, closest.shape))
    diff = p - closest
    return dot(diff, diff)


def unsigned_distance(mesh, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    chunk = max(1, 2 ** 17 // len(tri))
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        out[start:start + chunk] = closest_point_distance2(points[start:start + chunk], tri).min(axis=1)
    return np.sqrt(out)


def sdf_oracle_mesh(mesh, x):
    """Signed Euclidean distance to the mesh surface, positive inside."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    d = unsigned_distance(mesh, pts)
    # points on the surface can defeat the parity test; their distance is ~0 anyway
    off = d >= 1e-12
    out = np.zeros(len(pts))
    out[off] = np.where(points_inside(mesh, pts[off]), 1.0, -1.0) * d[off]
    return float(out[0]) if single else out


def sample_lidar(mesh, n, seed=0, stream_name="lidar"):
    """Area-weighted uniform surface samples with face normals."""
    if n < 1:
        raise ConfigurationError("need at least one point")
    rng = stream(seed, stream_name)
    areas = mesh.face_areas()
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    tri = mesh.triangles[face]
    pts = ((1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1]
           + (r1 * r2)[:, None] * tri[:, 2])
    cloud = PointCloud(pts, mesh.face_normals()[face])
    cloud.faces = face
    return cloud


# network --------------------------------------------------------------------

@dataclass
class SdfNetwork:
    model: MlpModel
    positive_inside: bool = True

    def __post_init__(self):
        if self.model.input_dim != 3 or self.model.output_dim != 1:
            raise ConfigurationError("an SDF network maps R^3 to R")
        if self.model.output_transform != "identity":
            raise ConfigurationError("an SDF network needs the identity output transform")

    @classmethod
    def create(cls, hidden=(50,) * 6, seed=0):
        return cls(MlpModel.create(3, 1, hidden, "tanh", "identity", seed))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = forward(self.model, x.reshape(-1, 3))[:, 0]
        return float(out[0]) if single else out

    def gradient(self, x):
        tape = Tape()
        _, g = forward_with_input_gradient(self.model, np.asarray(x, dtype=np.float64).reshape(-1, 3), tape)
        return g.value

    def to_dict(self):
        return {"kind": "sdf-net", "positive_inside": self.positive_inside, "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(MlpModel.from_dict(data["model"]), data.get("positive_inside", True))


@dataclass
class SdfConfig:
    iterations: int = 2000
    batch_size: int = 2500
    eikonal_weight: float = 0.1
    lr: float = 1e-3
    domain_halfwidth: float = 1.0
    seed: int = 0
    monitor_every: int = 100
    n_eval: int = 5000


def sdf_loss(net, surface, uniform, weight, tape):
    """``mean phi(x_i)^2 + weight * mean (|grad phi(u)| - 1)^2``."""
    phi = forward(net.model, surface, tape)
    _, grad = forward_with_input_gradient(net.model, uniform, tape)
    eik = T.square(T.norm(grad, axis=1) - 1.0)
    return T.mean(T.square(phi)) + weight * T.mean(eik)


def sdf_metrics(net, cloud, eval_points):
    phi = net(cloud.points)
    g = np.linalg.norm(net.gradient(eval_points), axis=1)
    return {
        "surface_rms": float(np.sqrt(np.mean(phi ** 2))),
        "eikonal_rms": float(np.sqrt(np.mean((g - 1.0) ** 2))),
    }


def _orient_positive_inside(net, halfwidth):
    """Negate the last layer if the domain corners read as inside.

    The training loss is symmetric under ``phi -> -phi``; the corners of the
    domain cube are outside the body, so they fix the sign.
    """
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * halfwidth
    if np.mean(net(corners)) > 0:
        last = net.model.layers[-1]
        last["weights"] = -last["weights"]
        last["bias"] = -last["bias"]
        return True
    return False


def train_sdf(cloud, net, config=None, state=None, start=0, history=None, best=None):
    """Fit a signed distance network to a surface point cloud.

    Surface points and eikonal points are redrawn each iteration from named
    streams indexed by the iteration number.  Returns
    ``(net, TrainResult, metrics, last_params)``.
    """
    config = config or SdfConfig()
    if not len(cloud):
        raise ConfigurationError("empty point cloud")
    hw = config.domain_halfwidth
    pts = cloud.points
    batch = min(config.batch_size, len(pts))
    eval_pts = stream(config.seed, "sdf-eval").uniform(-hw, hw, size=(config.n_eval, 3))
    state = state or OptimizerState(lr=config.lr)

    def loss_and_grads(it):
        idx = stream(config.seed, "sdf-batch", it).choice(len(pts), batch, replace=False)
        uni = stream(config.seed, "sdf-eikonal", it).uniform(-hw, hw, size=(batch, 3))
        tape = Tape()
        loss = sdf_loss(net, pts[idx], uni, config.eikonal_weight, tape)
        return float(loss.value), backward(tape, output=loss)

    def monitor():
        m = sdf_metrics(net, cloud, eval_pts)
        return m["surface_rms"] ** 2 + config.eikonal_weight * m["eikonal_rms"] ** 2

    result, best_params = fit(net.model, loss_and_grads, config.iterations, state, start=start,
                              history=history, monitor=monitor, monitor_every=config.monitor_every,
                              best=best)
    last = {k: v.copy() for k, v in net.model.parameters().items()}
    net.model.set_parameters(best_params)
    flipped = _orient_positive_inside(net, hw)
    metrics = sdf_metrics(net, cloud, eval_pts)
    if flipped:
        log.info("negated the output layer so the interior reads positive")
    metrics.update(best_loss=result.best_loss, best_iteration=result.best_iteration)
    return net, result, metrics, last


# marching cubes and Chamfer distance ----------------------------------------

def marching_cubes(field_fn, halfwidth=1.0, resolution=32, center=(0.0, 0.0, 0.0)):
    """Triangulate the zero level set of ``field_fn`` (positive inside).

    ``field_fn`` maps (n, 3) points to (n,) values; the field is sampled on
    ``resolution`` points per axis spanning the cube and edge crossings are
    linearly interpolated.  Faces come out wound outward.  Returns an empty
    mesh when the field never changes sign.
    """
    from skimage import measure

    if resolution < 2:
        raise ConfigurationError("marching cubes needs at least 2 samples per axis")
    center = np.asarray(center, dtype=np.float64)
    c = np.linspace(-halfwidth, halfwidth, resolution)
    g = np.meshgrid(c, c, c, indexing="ij")
    pts = np.stack([x.ravel() for x in g], axis=1) + center
    values = np.asarray(field_fn(pts), dtype=np.float64).reshape(resolution, resolution, resolution)
    if values.min() > 0.0 or values.max() < 0.0 or values.min() == values.max():
        return empty_mesh()
    step = c[1] - c[0]
    verts, faces, _, _ = measure.marching_cubes(values, level=0.0, spacing=(step, step, step),
                                                gradient_direction="descent", allow_degenerate=False)
    verts = verts - halfwidth + center
    mesh = TriangleMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(verts, faces[:, ::-1])
    return mesh


def _nearest_bruteforce(a, b, chunk=512):
    idx = np.empty(len(a), dtype=np.int64)
    d2 = np.empty(len(a))
    for start in range(0, len(a), chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        dd = np.sum(diff * diff, axis=-1)
        k = np.argmin(dd, axis=1)
        idx[start:start + chunk] = k
        d2[start:start + chunk] = dd[np.arange(len(k)), k]
    return idx, d2


def _nearest_tree(a, b, candidates=4):
    from scipy.spatial import cKDTree

    k = min(candidates, len(b))
    _, cand = cKDTree(b).query(a, k=k)
    cand = cand.reshape(len(a), k)
    # re-score candidates exactly as the brute force does; ties go to the lower index
    diff = a[:, None, :] - b[cand]
    dd = np.sum(diff * diff, axis=-1)
    perm = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, perm, axis=1)
    dd = np.take_along_axis(dd, perm, axis=1)
    j = np.argmin(dd, axis=1)
    rows = np.arange(len(a))
    best, d2 = cand[rows, j], dd[rows, j]
    return best, d2


def nearest_neighbors(a, b, accelerated=True):
    """Index in ``b`` of each point of ``a``'s nearest neighbour and the squared distance."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    return _nearest_tree(a, b) if accelerated else _nearest_bruteforce(a, b)


def chamfer_distance(a, b, accelerated=True):
    """Symmetric mean squared nearest-neighbour distance between two clouds."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if not len(pa) or not len(pb):
        raise ConfigurationError("Chamfer distance needs two nonempty clouds")
    _, dab = nearest_neighbors(pa, pb, accelerated)
    _, dba = nearest_neighbors(pb, pa, accelerated)
    return float(np.mean(dab) + np.mean(dba))
