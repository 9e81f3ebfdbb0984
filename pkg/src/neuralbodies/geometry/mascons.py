"""Point-mass (mascon) bodies built on a regular interior lattice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .raycast import points_inside


@dataclass(frozen=True)
class MasconModel:
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        m = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if len(p) != len(m) or not len(m):
            raise ConfigurationError("need one positive mass per point")
        if np.any(m <= 0):
            raise ConfigurationError("mascon masses must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def circumscribing_radius(self):
        return float(np.linalg.norm(self.points, axis=1).max())


def lattice(lo, hi, spacing):
    """Cell-centred lattice ``(k + 1/2) * spacing`` covering the box [lo, hi]."""
    axes = []
    for a, b in zip(lo, hi):
        k0 = int(np.floor(a / spacing - 0.5))
        k1 = int(np.ceil(b / spacing - 0.5))
        ks = np.arange(k0, k1 + 1)
        c = (ks + 0.5) * spacing
        axes.append(c[(c > a) & (c < b)])
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


def mesh_to_mascons(mesh, grid_spacing, total_mass=1.0):
    """Equal masses on the lattice points strictly inside ``mesh``."""
    if grid_spacing <= 0:
        raise ConfigurationError("grid spacing must be positive")
    lo, hi = mesh.bounds()
    candidates = lattice(lo, hi, grid_spacing)
    inside = candidates[points_inside(mesh, candidates)] if len(candidates) else candidates
    if not len(inside):
        raise ConfigurationError("no lattice point falls inside the mesh; reduce grid spacing")
    masses = np.full(len(inside), total_mass / len(inside))
    # absorb rounding so the sum is exact to the last bit where possible
    masses[-1] = total_mass - masses[:-1].sum()
    return MasconModel(inside, masses)


def save_mascons(model, path):
    data = np.column_stack([model.points, model.masses])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header="x,y,z,mass", comments="")


def load_mascons(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise ConfigurationError(f"{path}: expected columns x,y,z,mass")
    return MasconModel(data[:, :3], data[:, 3])
