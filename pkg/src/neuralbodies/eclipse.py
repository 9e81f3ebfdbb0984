"""Eclipse functions: exact ray-cast oracle, datasets and the learned surrogate.

Sign convention: ``sun`` points from the body toward the Sun, and a point r
is in shadow when the ray ``r + t*sun`` (t > 0) meets the body.  The eclipse
function is then minus the length of that ray inside the body.  Lit points
get the distance of their projection (onto the plane orthogonal to ``sun``)
from the projected body outline; lit points on the Sun side whose
projection falls inside the outline get the distance back along ``-sun`` to
the body, floored at ``AXIAL_FLOOR``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil
from typing import Callable, Optional

import numpy as np

from .diffcore import MlpModel, OptimizerState, Tape, backward, fit, forward
from .diffcore import ops as T
from .errors import ConfigurationError, GeometryDegeneracyError
from .geometry import fibonacci_directions, points_inside, uniform_in_ball
from .geometry.raycast import MERGE_TOL, _mt
from .rng import stream

log = logging.getLogger(__name__)

AXIAL_FLOOR = 1e-6


def orthonormal_basis(s):
    """Two unit vectors spanning the plane orthogonal to ``s``."""
    s = np.asarray(s, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(s[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(s, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(s, e1)
    return e1, e2


def _unit(s):
    s = np.asarray(s, dtype=np.float64).reshape(3)
    n = np.linalg.norm(s)
    if n == 0:
        raise ConfigurationError("sun direction must be nonzero")
    return s / n


# 2-D point to triangle distance --------------------------------------------

def _segment_distance2(p, a, b):
    ab = b - a
    ap = p - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.clip(np.einsum("...i,...i->...", ap, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.einsum("...i,...i->...", d, d)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def point_triangle_distance_2d(p, tri):
    """Distances from points (n, 2) to triangles (m, 3, 2); returns (n, m)."""
    p = p[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    d2 = np.minimum(np.minimum(_segment_distance2(p, a, b), _segment_distance2(p, b, c)),
                    _segment_distance2(p, c, a))
    w0 = _cross2(b - a, p - a)
    w1 = _cross2(c - b, p - b)
    w2 = _cross2(a - c, p - c)
    inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
    area = _cross2(b - a, c - a)
    inside &= np.abs(area) > 0
    return np.where(inside, 0.0, np.sqrt(d2))


# oracle ---------------------------------------------------------------------

def _chord_from(ts):
    ts = np.sort(ts)
    if ts.size > 1:
        ts = ts[np.concatenate([[True], np.diff(ts) > MERGE_TOL])]
    return ts


def eclipse_oracle_batch(mesh, points, sun, allow_inside=False, check_inside=True):
    """Exact eclipse function at many points for one sun direction.

    With ``allow_inside`` points inside the body are accepted and get minus
    the length of the sun-ward ray that remains inside the body.
    """
    sun = _unit(sun)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = points_inside(mesh, points) if (check_inside or allow_inside) else np.zeros(len(points), bool)
    if np.any(inside) and not allow_inside:
        raise ConfigurationError("eclipse function requested for a point inside the body")
    tri = mesh.triangles
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = orthonormal_basis(sun)
    proj = np.stack([tri @ e1, tri @ e2], axis=-1)
    out = np.empty(len(points))
    chunk = max(1, min(256, 2 ** 18 // len(tri)))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        t, _, _, hit = _mt(p[:, None, :], sun, v0[None], v1[None], v2[None])
        tb, _, _, hitb = _mt(p[:, None, :], -sun, v0[None], v1[None], v2[None])
        p2 = np.stack([p @ e1, p @ e2], axis=-1)
        dist = point_triangle_distance_2d(p2, proj).min(axis=1)
        for k in range(len(p)):
            i = start + k
            ts = _chord_from(t[k][hit[k]])
            if inside[i]:
                ts = np.concatenate([[0.0], ts])
            if ts.size:
                if ts.size % 2:
                    # tangential touch of the outline: on the shadow boundary
                    if ts.size == 1:
                        out[i] = 0.0
                        continue
                    raise GeometryDegeneracyError(f"odd crossing count along sun ray from {p[k]}")
                out[i] = -float((ts[1::2] - ts[0::2]).sum())
            elif dist[k] > 0.0:
                out[i] = float(dist[k])
            else:
                back = tb[k][hitb[k]]
                out[i] = max(AXIAL_FLOOR, float(back.min())) if back.size else AXIAL_FLOOR
    return out


def eclipse_function_oracle(mesh, r, sun):
    """Eclipse function of one point (see module docstring for the convention)."""
    return float(eclipse_oracle_batch(mesh, np.asarray(r).reshape(1, 3), sun)[0])


def sphere_eclipse_function(r, sun, radius=1.0, allow_inside=False):
    """Closed-form eclipse function of a sphere centred at the origin.

    Vectorised over rows of ``r``.  With ``allow_inside`` interior points get
    minus the sun-ward length still inside the sphere, as the mesh oracle does.
    """
    sun = _unit(sun)
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = r.reshape(-1, 3)
    inside = np.einsum("ij,ij->i", r, r) < radius * radius
    if np.any(inside) and not allow_inside:
        raise ConfigurationError("eclipse function requested inside the sphere")
    axial = r @ sun
    perp = r - axial[:, None] * sun
    b = np.linalg.norm(perp, axis=1)
    half = np.sqrt(np.maximum(radius * radius - b * b, 0.0))
    out = np.where(b >= radius, b - radius,
                   np.where(axial < 0, -2.0 * half, np.maximum(AXIAL_FLOOR, axial - half)))
    out = np.where(inside, -(half - axial), out)
    return float(out[0]) if single else out


def sphere_eclipse_source(radius=1.0, allow_inside=False):
    return lambda r, sun: sphere_eclipse_function(r, sun, radius, allow_inside)


# datasets -------------------------------------------------------------------

@dataclass
class EclipseDataset:
    positions: np.ndarray
    sun_directions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.sun_directions = np.asarray(self.sun_directions, dtype=np.float64).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        n = len(self.positions)
        if len(self.sun_directions) != n or len(self.values) != n:
            raise ConfigurationError("eclipse dataset columns differ in length")
        if n and np.max(np.abs(np.linalg.norm(self.sun_directions, axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("sun directions must be unit vectors")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, idx):
        return EclipseDataset(self.positions[idx], self.sun_directions[idx], self.values[idx])

    @property
    def inputs(self):
        return np.hstack([self.positions, self.sun_directions])

    @property
    def shadow_fraction(self):
        return float(np.mean(self.values < 0)) if len(self) else 0.0

    def save_csv(self, path):
        np.savetxt(path, np.column_stack([self.positions, self.sun_directions, self.values]),
                   fmt="%.17g", delimiter=",", header="x,y,z,sx,sy,sz,F", comments="")

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 7:
            raise ConfigurationError(f"{path}: expected columns x,y,z,sx,sy,sz,F")
        sun = data[:, 3:6]
        # text round trip can leave the norm off by an ulp
        sun = sun / np.linalg.norm(sun, axis=1, keepdims=True)
        return cls(data[:, :3], sun, data[:, 6])


def _view_counts(n_views, n_total):
    base, extra = divmod(n_total, n_views)
    return [base + (1 if k < extra else 0) for k in range(n_views)]


def generate_eclipse_dataset(mesh, n_views=300, n_total=10000, sampling_radius=3.0, seed=0,
                             balance=False):
    """Oracle-labelled samples for ``n_views`` Fibonacci-spiral sun directions.

    Each view receives ``floor`` or ``ceil`` of ``n_total / n_views`` points,
    uniform in the sampling ball with interior points rejected.  With
    ``balance`` each view is filled half with shadowed and half with lit points.
    """
    if n_views < 1 or n_total < n_views:
        raise ConfigurationError("need n_total >= n_views >= 1")
    if sampling_radius <= mesh.circumscribing_radius():
        raise ConfigurationError("sampling radius must exceed the body's circumscribing radius")
    views = fibonacci_directions(n_views)
    pos, suns, vals = [], [], []
    for k, (sun, count) in enumerate(zip(views, _view_counts(n_views, n_total))):
        if count == 0:
            continue
        rng = stream(seed, "eclipse-points", k)
        if balance:
            p, f = _balanced_view(mesh, sun, count, sampling_radius, rng)
        else:
            p = _outside_points(mesh, rng, count, sampling_radius)
            f = eclipse_oracle_batch(mesh, p, sun, check_inside=False)
        pos.append(p)
        suns.append(np.broadcast_to(sun, p.shape))
        vals.append(f)
    data = EclipseDataset(np.vstack(pos), np.vstack(suns), np.concatenate(vals))
    log.info("eclipse dataset: %d samples, shadow fraction %.4f", len(data), data.shadow_fraction)
    return data


def _outside_points(mesh, rng, count, radius):
    got = []
    need = count
    while need > 0:
        cand = uniform_in_ball(rng, max(2 * need, 16), radius)
        cand = cand[~points_inside(mesh, cand)][:need]
        got.append(cand)
        need -= len(cand)
    return np.vstack(got)


def _balanced_view(mesh, sun, count, radius, rng, max_rounds=200):
    n_shadow = count // 2
    shadow, lit = [], []
    ns = nl = 0
    for _ in range(max_rounds):
        p = _outside_points(mesh, rng, max(count, 32), radius)
        f = eclipse_oracle_batch(mesh, p, sun, check_inside=False)
        s_mask = f < 0
        take_s = p[s_mask][: n_shadow - ns], f[s_mask][: n_shadow - ns]
        take_l = p[~s_mask][: count - n_shadow - nl], f[~s_mask][: count - n_shadow - nl]
        shadow.append(take_s)
        lit.append(take_l)
        ns += len(take_s[0])
        nl += len(take_l[0])
        if ns == n_shadow and nl == count - n_shadow:
            break
    else:
        raise ConfigurationError("could not balance shadow/lit samples for a view")
    parts = shadow + lit
    return np.vstack([a for a, _ in parts]), np.concatenate([b for _, b in parts])


# network --------------------------------------------------------------------

@dataclass
class EclipseNet:
    model: MlpModel

    def __post_init__(self):
        if self.model.input_dim != 6 or self.model.output_dim != 1:
            raise ConfigurationError("an eclipse network maps (r, sun) in R^6 to R")

    @classmethod
    def create(cls, hidden=(50,) * 6, seed=0):
        return cls(MlpModel.create(6, 1, hidden, "tanh", "identity", seed))

    def __call__(self, r, sun):
        """Network eclipse value for points ``r`` and matching or shared ``sun``."""
        r = np.asarray(r, dtype=np.float64)
        single = r.ndim == 1
        r = r.reshape(-1, 3)
        sun = np.broadcast_to(np.asarray(sun, dtype=np.float64).reshape(-1, 3), r.shape)
        out = forward(self.model, np.hstack([r, sun]))[:, 0]
        return float(out[0]) if single else out

    def to_dict(self):
        return {"kind": "eclipse-net", "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(MlpModel.from_dict(data["model"]))


def eclipse_factor(source, r, sun):
    """Binary SRP gate: 1 when the eclipse value is >= 0 (lit), else 0."""
    value = source(r, sun)
    return np.where(np.asarray(value) >= 0.0, 1, 0) if np.ndim(value) else int(value >= 0.0)


def mesh_eclipse_source(mesh, allow_inside=False):
    """Callable ``(r, sun) -> F`` backed by the ray-cast oracle."""

    def source(r, sun):
        r = np.asarray(r, dtype=np.float64)
        vals = eclipse_oracle_batch(mesh, r.reshape(-1, 3), sun, allow_inside=allow_inside)
        return float(vals[0]) if r.ndim == 1 else vals

    return source


# training -------------------------------------------------------------------

@dataclass
class EclipseConfig:
    iterations: int = 4000
    lr: float = 1e-3
    batch_size: int = 0  # 0 = full batch
    holdout: float = 0.1
    seed: int = 0
    monitor_every: int = 100


def split_holdout(n, fraction, seed):
    perm = stream(seed, "eclipse-holdout").permutation(n)
    n_test = int(round(fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def eclipse_metrics(net, data):
    pred = net(data.positions, data.sun_directions) if len(data) else np.zeros(0)
    truth = data.values
    if not len(truth):
        return {"rmse": float("nan"), "sign_accuracy": float("nan"), "count": 0}
    shadow = truth < 0
    pred_shadow = pred < 0
    recall_s = float(np.mean(pred_shadow[shadow])) if shadow.any() else float("nan")
    recall_l = float(np.mean(~pred_shadow[~shadow])) if (~shadow).any() else float("nan")
    return {
        "rmse": float(np.sqrt(np.mean((pred - truth) ** 2))),
        "sign_accuracy": float(np.mean(pred_shadow == shadow)),
        "shadow_recall": recall_s,
        "lit_recall": recall_l,
        "count": int(len(truth)),
    }


def train_eclipsenet(samples, net, config=None, state=None, start=0, history=None, best=None):
    """MSE regression of eclipse values.

    Returns ``(net, TrainResult, metrics, last_params)``; the net holds the
    best parameters by training-set MSE.
    """
    config = config or EclipseConfig()
    if len(samples) < 100:
        raise ConfigurationError("need at least 100 eclipse samples")
    train_idx, test_idx = split_holdout(len(samples), config.holdout, config.seed)
    train, test = samples[train_idx], samples[test_idx]
    x, y = train.inputs, train.values[:, None]
    state = state or OptimizerState(lr=config.lr)
    full = config.batch_size <= 0 or config.batch_size >= len(train)

    def loss_and_grads(it):
        if full:
            xb, yb = x, y
        else:
            idx = stream(config.seed, "eclipse-batch", it).choice(len(train), config.batch_size, replace=False)
            xb, yb = x[idx], y[idx]
        tape = Tape()
        loss = T.mean(T.square(forward(net.model, xb, tape) - yb))
        return float(loss.value), backward(tape, output=loss)

    def train_mse():
        return float(np.mean((forward(net.model, x) - y) ** 2))

    result, best_params = fit(
        net.model, loss_and_grads, config.iterations, state, start=start, history=history,
        monitor=None if full else train_mse, monitor_every=config.monitor_every, best=best,
    )
    last = {k: v.copy() for k, v in net.model.parameters().items()}
    net.model.set_parameters(best_params)
    metrics = {
        "train": eclipse_metrics(net, train),
        "heldout": eclipse_metrics(net, test),
        "shadow_fraction": samples.shadow_fraction,
        "best_loss": result.best_loss,
        "best_iteration": result.best_iteration,
    }
    return net, result, metrics, last


# zero-level slices ----------------------------------------------------------

@dataclass(frozen=True)
class SlicePlane:
    """Square window ``origin + a*u_axis + b*v_axis`` with ``|a|, |b| <= half_size``."""

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    half_size: float = 3.0

    @classmethod
    def axis_aligned(cls, normal="z", offset=0.0, half_size=3.0):
        axes = {"x": (1, 2, 0), "y": (2, 0, 1), "z": (0, 1, 2)}[normal]
        eye = np.eye(3)
        origin = eye[axes[2]] * offset
        return cls(origin, eye[axes[0]], eye[axes[1]], half_size)

    def grid(self, resolution):
        c = np.linspace(-self.half_size, self.half_size, resolution)
        a, b = np.meshgrid(c, c, indexing="ij")
        pts = (self.origin[None, :] + a.ravel()[:, None] * self.u_axis[None, :]
               + b.ravel()[:, None] * self.v_axis[None, :])
        return c, pts


def zero_level_slice(field_fn, sun, plane, resolution=200):
    """Polylines (in plane coordinates) where the eclipse field crosses zero.

    ``field_fn(points, sun)`` evaluates the field on (n, 3) points; linear
    interpolation along grid edges locates the crossings (marching squares).
    """
    from skimage import measure

    c, pts = plane.grid(resolution)
    values = np.asarray(field_fn(pts, sun), dtype=np.float64).reshape(resolution, resolution)
    if values.min() > 0 or values.max() < 0:
        return []
    step = c[1] - c[0]
    curves = measure.find_contours(values, 0.0)
    return [c[0] + curve * step for curve in curves]


def curve_distance(curves_a, curves_b):
    """Mean distance from points of ``curves_a`` to the polylines of ``curves_b``."""
    pts = np.vstack(curves_a)
    segs = [(c[:-1], c[1:]) for c in curves_b if len(c) > 1]
    a = np.vstack([s[0] for s in segs])
    b = np.vstack([s[1] for s in segs])
    best = np.full(len(pts), np.inf)
    for start in range(0, len(a), 2048):
        d2 = _segment_distance2(pts[:, None, :], a[None, start:start + 2048], b[None, start:start + 2048])
        best = np.minimum(best, d2.min(axis=1))
    return float(np.sqrt(best).mean())


def save_contours(curves, path):
    rows = [(k, x, y) for k, c in enumerate(curves) for x, y in c]
    with open(path, "w") as fh:
        fh.write("curve_id,x,y\n")
        for k, x, y in rows:
            fh.write(f"{k},{float(x)!r},{float(y)!r}\n")
