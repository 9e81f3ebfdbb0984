"""Direction and volume sampling helpers."""

import numpy as np

from ..errors import ConfigurationError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def fibonacci_directions(n):
    """``n`` quasi-uniform unit vectors on a golden-angle spiral.

    Heights are the midpoints ``z_k = 1 - (2k + 1)/n`` so no point sits on a pole.
    """
    if n < 1:
        raise ConfigurationError("need at least one direction")
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    rho = np.sqrt(1.0 - z * z)
    theta = GOLDEN_ANGLE * k
    d = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def random_unit_vectors(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def uniform_in_shell(rng, n, r_min, r_max):
    """Points uniform in volume between two concentric spheres."""
    u = rng.uniform(size=n)
    r = np.cbrt(r_min ** 3 + u * (r_max ** 3 - r_min ** 3))
    return random_unit_vectors(rng, n) * r[:, None]


def uniform_in_ball(rng, n, radius):
    return uniform_in_shell(rng, n, 0.0, radius)
