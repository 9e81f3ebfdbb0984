"""Quick invariant checks runnable from an installed package (``neuralbodies selftest``)."""

from __future__ import annotations

import numpy as np


def _ad():
    from .diffcore import MlpModel, forward, grad_check
    from .diffcore import ops as T

    model = MlpModel.create(3, 1, (8, 8), seed=1)
    x = np.random.default_rng(0).normal(size=(5, 3))
    err = grad_check(lambda tape, xt: T.sum(T.square(forward(model, xt, tape))), x)
    return err < 1e-6, f"max relative gradient error {err:.2e}"


def _cube():
    from .geometry import make_cube

    cube = make_cube(1.0)
    vol = cube.signed_volume()
    return cube.is_watertight() and abs(vol - 1.0) < 1e-12, f"unit cube volume {vol!r}"


def _shell():
    from .geometry import make_icosphere, mesh_to_mascons
    from .gravity import mascon_acceleration

    body = mesh_to_mascons(make_icosphere(1.0, 3), 0.1)
    a = mascon_acceleration(body, np.array([2.0, 0.0, 0.0]))
    rel = abs(np.linalg.norm(a) - 0.25) / 0.25
    return rel < 0.01, f"shell theorem relative error {rel:.2e}"


def _eclipse():
    from .eclipse import sphere_eclipse_function

    f = [sphere_eclipse_function(np.array(p), np.array([1.0, 0.0, 0.0])) for p in
         ([-2.0, 0.0, 0.0], [0.0, 2.0, 0.0])]
    ok = abs(f[0] + 2.0) < 1e-12 and abs(f[1] - 1.0) < 1e-12
    return ok, f"sphere eclipse values {f[0]!r}, {f[1]!r}"


def _kepler():
    from .dynamics import RotatingFrameConfig, State, propagate
    from .geometry import MasconModel

    cfg = RotatingFrameConfig(gravity=MasconModel(np.zeros((1, 3)), np.array([1.0])))
    period = 2 * np.pi * 2.0 ** 1.5
    traj = propagate(State(0.0, [2.0, 0, 0], [0, np.sqrt(0.5), 0]), period, cfg)
    err = float(np.linalg.norm(traj.final.r - [2.0, 0, 0]))
    return err < 1e-6, f"Kepler period position error {err:.2e}"


def _chamfer():
    from .shape import chamfer_distance

    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(200, 3)), rng.uniform(size=(300, 3))
    fast, slow = chamfer_distance(a, b), chamfer_distance(a, b, accelerated=False)
    sym = chamfer_distance(b, a) == fast
    return abs(fast - slow) <= 1e-12 and sym, f"accelerated {fast!r} brute force {slow!r}"


CHECKS = [("ad-gradient", _ad), ("cube-volume", _cube), ("shell-theorem", _shell),
          ("sphere-eclipse", _eclipse), ("kepler-period", _kepler), ("chamfer", _chamfer)]


def run_selftest():
    """List of ``(name, passed, detail)`` for every check."""
    out = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
