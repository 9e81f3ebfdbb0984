"""Neural density fields learned from gravitational acceleration samples.

Units are nondimensional throughout: G = 1, body mass 1, lengths in L.
The network density is integrated over a fixed quadrature grid on the cube
``[-halfwidth, halfwidth]^3``; the resulting acceleration is a linear map of
the density values at the grid nodes, so it stays differentiable with
respect to the network parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .diffcore import MlpModel, OptimizerState, Tape, backward, fit, forward
from .diffcore import ops as T
from .errors import ConfigurationError, SingularityError
from .geometry import MasconModel, TriangleMesh, points_inside, uniform_in_shell
from .rng import stream

log = logging.getLogger(__name__)

MASCON_MIN_DISTANCE = 1e-9
NODE_MIN_DISTANCE = 1e-3
LOSS_EPS = 1e-12


# ground truth ---------------------------------------------------------------

def mascon_acceleration(model, X):
    """Newtonian acceleration ``-sum m_j (X - x_j)/|X - x_j|^3`` at one or more points."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(-1, 3)
    out = np.empty_like(X)
    for start in range(0, len(X), 256):
        d = X[start:start + 256, None, :] - model.points[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
        if np.any(r < MASCON_MIN_DISTANCE):
            raise SingularityError("evaluation point coincides with a mascon")
        out[start:start + 256] = -np.einsum("j,ijk->ik", model.masses, d / (r ** 3)[..., None])
    return out[0] if single else out


# quadrature -----------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    halfwidth: float
    kind: str = "regular"

    @classmethod
    def regular(cls, halfwidth=1.0, n=32):
        """Cell-centred ``n^3`` grid with equal weights."""
        h = 2.0 * halfwidth / n
        c = -halfwidth + (np.arange(n) + 0.5) * h
        g = np.meshgrid(c, c, c, indexing="ij")
        nodes = np.stack([x.ravel() for x in g], axis=1)
        return cls(nodes, np.full(len(nodes), h ** 3), float(halfwidth), "regular")

    @classmethod
    def low_discrepancy(cls, halfwidth=1.0, n_points=4096, seed=0):
        from scipy.stats import qmc

        sobol = qmc.Sobol(d=3, scramble=True, seed=seed)
        nodes = (sobol.random(n_points) * 2.0 - 1.0) * halfwidth
        vol = (2.0 * halfwidth) ** 3
        return cls(nodes, np.full(n_points, vol / n_points), float(halfwidth), "low-discrepancy")

    def __len__(self):
        return len(self.nodes)


# density field --------------------------------------------------------------

@dataclass
class DensityField:
    """Network density on the domain cube.

    ``absolute`` mode: density = network output (kept nonnegative by the
    output transform).  ``differential`` mode: density = ``rho_u`` + network
    output inside ``shape`` and zero outside.
    """

    model: MlpModel
    domain_halfwidth: float = 1.0
    mode: str = "absolute"
    rho_u: float = 0.0
    shape: Optional[TriangleMesh] = None
    _masks: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.model.input_dim != 3 or self.model.output_dim != 1:
            raise ConfigurationError("density network must map R^3 -> R")
        if self.mode not in ("absolute", "differential"):
            raise ConfigurationError(f"unknown density mode {self.mode!r}")
        if self.mode == "absolute" and self.model.output_transform == "identity":
            raise ConfigurationError("absolute density needs a nonnegative output transform")
        if self.mode == "differential" and self.shape is None:
            raise ConfigurationError("differential mode needs the body shape")

    @classmethod
    def create(cls, hidden=(50,) * 6, seed=0, output_transform="abs", **kw):
        mode = kw.get("mode", "absolute")
        if mode == "differential":
            output_transform = "identity"
        model = MlpModel.create(3, 1, hidden, "tanh", output_transform, seed)
        return cls(model, **kw)

    def mask(self, points, key=None):
        """1.0 where ``points`` lie inside the known shape (differential mode only)."""
        if self.mode == "absolute":
            return None
        if key is not None and key in self._masks:
            return self._masks[key]
        m = points_inside(self.shape, points).astype(np.float64)[:, None]
        if key is not None:
            self._masks[key] = m
        return m

    def node_density(self, grid, tape=None):
        """Density at the quadrature nodes, (N, 1); a tape tensor when ``tape`` is given."""
        mask = self.mask(grid.nodes, key=("grid", id(grid)))
        if tape is None:
            out = forward(self.model, grid.nodes)
            return out if mask is None else mask * (self.rho_u + out)
        out = forward(self.model, grid.nodes, tape)
        return out if mask is None else (out + self.rho_u) * mask

    def to_dict(self):
        return {
            "kind": "density-field",
            "domain_halfwidth": self.domain_halfwidth,
            "mode": self.mode,
            "rho_u": self.rho_u,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, data, shape=None):
        return cls(MlpModel.from_dict(data["model"]), data["domain_halfwidth"], data["mode"],
                   data["rho_u"], shape)


def _kernel(X, grid):
    """(B*3, N) matrix mapping node densities to accelerations at ``X``."""
    nodes = grid.nodes
    k = np.empty((len(X), 3, len(nodes)))
    for c in range(3):
        np.subtract(X[:, c, None], nodes[None, :, c], out=k[:, c])
    r2 = np.einsum("icn,icn->in", k, k)
    if r2.min() < NODE_MIN_DISTANCE ** 2:
        raise SingularityError("evaluation point within 1e-3 L of a quadrature node")
    np.multiply(r2, np.sqrt(r2), out=r2)
    np.divide(-grid.weights[None, :], r2, out=r2)
    k *= r2[:, None, :]
    return k.reshape(-1, len(nodes))


def predicted_acceleration(field, X, grid, tape=None, density=None):
    """Quadrature acceleration ``-sum_k w_k rho(node_k) (X - node_k)/|X - node_k|^3``.

    ``X`` is (3,) or (B, 3).  Pass ``density`` (from :meth:`DensityField.node_density`)
    to reuse node evaluations across calls.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(-1, 3)
    if density is None:
        density = field.node_density(grid, tape)
    if tape is None:
        out = np.empty_like(X)
        for start in range(0, len(X), 64):
            xb = X[start:start + 64]
            out[start:start + 64] = (_kernel(xb, grid) @ density).reshape(-1, 3)
        return out[0] if single else out
    acc = T.reshape(T.matmul(tape.constant(_kernel(X, grid)), density), (len(X), 3))
    return acc


# datasets -------------------------------------------------------------------

class AccelerationSample(NamedTuple):
    position: np.ndarray
    acceleration: np.ndarray


@dataclass
class AccelerationDataset:
    positions: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.accelerations = np.asarray(self.accelerations, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.accelerations):
            raise ConfigurationError("positions and accelerations differ in length")
        if not np.all(np.isfinite(self.accelerations)):
            raise ConfigurationError("non-finite acceleration sample")

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return AccelerationSample(self.positions[idx], self.accelerations[idx])
        return AccelerationDataset(self.positions[idx], self.accelerations[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def split(self, n_first):
        return self[:n_first], self[n_first:]

    def save_csv(self, path):
        np.savetxt(path, np.hstack([self.positions, self.accelerations]), fmt="%.17g",
                   delimiter=",", header="x,y,z,ax,ay,az", comments="")

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 6:
            raise ConfigurationError(f"{path}: expected columns x,y,z,ax,ay,az")
        return cls(data[:, :3], data[:, 3:])


def generate_acceleration_dataset(truth, n, shell=(1.5, 3.0), seed=0, body_radius=None,
                                  noise_sigma=0.0):
    """Positions uniform in the spherical shell, labelled by the mascon truth.

    ``noise_sigma`` adds isotropic Gaussian noise to each acceleration component.
    """
    r_min, r_max = shell
    if n < 1:
        raise ConfigurationError("need at least one sample")
    if not 0 < r_min <= r_max:
        raise ConfigurationError("shell radii must satisfy 0 < r_min <= r_max")
    radius = truth.circumscribing_radius() if body_radius is None else body_radius
    if r_min <= radius:
        raise ConfigurationError(f"measurement shell r_min={r_min} intersects the body (radius {radius:.4g})")
    X = uniform_in_shell(stream(seed, "gravity-positions"), n, r_min, r_max)
    a = mascon_acceleration(truth, X)
    if noise_sigma > 0:
        a = a + noise_sigma * stream(seed, "gravity-noise").normal(size=a.shape)
    return AccelerationDataset(X, a)


# training -------------------------------------------------------------------

@dataclass
class GeodesyConfig:
    iterations: int = 3000
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    monitor_every: int = 100


def geodesy_loss(field, data, grid, tape):
    """Normalised MSE ``mean |a_hat - a|^2 / (|a|^2 + eps)`` as a tape scalar."""
    a_hat = predicted_acceleration(field, data.positions, grid, tape)
    a = data.accelerations
    inv = 1.0 / (np.einsum("ij,ij->i", a, a) + LOSS_EPS)
    err = T.sum(T.square(a_hat - a), axis=1)
    return T.mean(err * inv)


def dataset_loss(field, data, grid, chunk=100):
    density = field.node_density(grid)
    a_hat = predicted_acceleration(field, data.positions, grid, density=density)
    a = data.accelerations
    err = np.sum((a_hat - a) ** 2, axis=1) / (np.sum(a * a, axis=1) + LOSS_EPS)
    return float(err.mean())


def _batch_indices(seed, n, batch, iteration):
    if batch >= n:
        return np.arange(n)
    return np.sort(stream(seed, "gravity-batch", iteration).choice(n, size=batch, replace=False))


def train_geodesynet(samples, field, grid, config=None, state=None, start=0, history=None, best=None):
    """Fit ``field`` so its quadrature acceleration matches ``samples``.

    Minibatches are drawn per iteration from the ``gravity-batch`` stream, so
    a run resumed at ``start`` with the saved optimizer state reproduces an
    uninterrupted run.  The model ends holding the best parameters as judged
    by the full training-set loss.  Returns ``(field, TrainResult, last_params)``.
    """
    config = config or GeodesyConfig()
    if len(samples) < 10:
        raise ConfigurationError("need at least 10 acceleration samples")
    if not len(grid):
        raise ConfigurationError("empty quadrature grid")
    state = state or OptimizerState(lr=config.lr)
    model = field.model

    def loss_and_grads(it):
        idx = _batch_indices(config.seed, len(samples), config.batch_size, it)
        tape = Tape()
        loss = geodesy_loss(field, samples[idx], grid, tape)
        return float(loss.value), backward(tape, output=loss)

    result, best_params = fit(
        model, loss_and_grads, config.iterations, state, start=start, history=history,
        monitor=lambda: dataset_loss(field, samples, grid), monitor_every=config.monitor_every,
        best=best,
    )
    last = {k: v.copy() for k, v in model.parameters().items()}
    model.set_parameters(best_params)
    return field, result, last


# evaluation -----------------------------------------------------------------

def evaluate_density(field, p):
    """Density at ``p`` ((3,) or (n, 3)) inside the domain cube."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    if np.any(np.abs(p) > field.domain_halfwidth):
        raise ConfigurationError("density requested outside the domain cube")
    rho = forward(field.model, p)[:, 0]
    if field.mode == "differential":
        rho = field.mask(p)[:, 0] * (field.rho_u + rho)
    return float(rho[0]) if single else rho


def evaluate_field_error(field, truth, test, grid):
    """Median and 95th percentile of ``|a_hat - a| / |a|`` on held-out samples.

    ``truth`` may be a :class:`MasconModel` (labels recomputed) or None to use
    the accelerations stored in ``test``.
    """
    a = test.accelerations if truth is None else mascon_acceleration(truth, test.positions)
    a_hat = predicted_acceleration(field, test.positions, grid)
    rel = np.linalg.norm(a_hat - a, axis=1) / np.linalg.norm(a, axis=1)
    return {"median": float(np.median(rel)), "p95": float(np.percentile(rel, 95)),
            "max": float(rel.max())}


def mean_density_in_ball(field, radius, n=20000, seed=0):
    """Monte-Carlo mean density over the ball of ``radius`` about the origin."""
    from .geometry import uniform_in_ball

    p = uniform_in_ball(stream(seed, "density-ball"), n, radius)
    return float(np.mean(evaluate_density(field, p)))
