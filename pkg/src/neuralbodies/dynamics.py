"""Rotating-frame propagation with eclipse-gated solar radiation pressure.

Equations of motion in the frame of a uniformly rotating body::

    r'' = a_g(r) - 2 w x v - w x (w x r) - eta * nu(r, t) * sun(t)

``nu`` is 1 in sunlight and 0 in umbra.  It is held constant over each
integration step; a sign change of the eclipse function across a step is
located by bisection on the Dormand-Prince dense output and the step is
re-taken up to the event, so no step ever integrates across a switch.
Event location is therefore accurate to the bisection width but not
certified: two crossings inside one step go unnoticed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import RK45

from .eclipse import EclipseNet, mesh_eclipse_source
from .errors import ConfigurationError, StepSizeUnderflowError
from .geometry import MasconModel, TriangleMesh, point_inside
from .gravity import DensityField, QuadratureGrid, mascon_acceleration, predicted_acceleration

log = logging.getLogger(__name__)

MIN_STEP = 1e-14
IMPACT_BAND = 1.05

# Dormand-Prince 5(4) tableau with its quartic dense output
_A, _B, _C, _E, _P = RK45.A, RK45.B, RK45.C, RK45.E, RK45.P


def rotate_about(axis, angle, vec):
    """Rodrigues rotation of ``vec`` by ``angle`` about unit ``axis``."""
    c, s = np.cos(angle), np.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1.0 - c)


def default_sun_direction(sun0, omega):
    """Body-frame sun direction for an inertially fixed Sun.

    The body turns by ``|omega| t`` about ``omega``, so the Sun appears to
    turn by ``-|omega| t``; for ``omega`` along z this is ``R_z(-|omega| t) sun0``.
    """
    sun0 = np.asarray(sun0, dtype=np.float64)
    sun0 = sun0 / np.linalg.norm(sun0)
    omega = np.asarray(omega, dtype=np.float64)
    rate = np.linalg.norm(omega)
    if rate == 0:
        return lambda t: sun0
    axis = omega / rate
    return lambda t: rotate_about(axis, -rate * t, sun0)


@dataclass
class RotatingFrameConfig:
    """Forces acting on a particle in the body frame.

    ``gravity`` is a :class:`MasconModel`, a :class:`DensityField` (with
    ``grid``) or any callable ``r -> a``.  ``eclipse`` is an
    :class:`EclipseNet`, a :class:`TriangleMesh` (ray-cast oracle) or a
    callable ``(r, sun) -> F``; None means always lit.  ``body`` (mesh or
    sphere radius) enables impact detection.
    """

    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta: float = 0.0
    sun0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    gravity: object = None
    eclipse: object = None
    body: Union[TriangleMesh, float, None] = None
    grid: Optional[QuadratureGrid] = None
    sun_direction_fn: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        if self.eta < 0:
            raise ConfigurationError("SRP magnitude eta must be nonnegative")
        if self.sun_direction_fn is None:
            self.sun_direction_fn = default_sun_direction(self.sun0, self.omega)
        self._gravity = self._make_gravity()
        self._eclipse = self._make_eclipse()
        if isinstance(self.body, TriangleMesh):
            self._body_radius = self.body.circumscribing_radius()
        elif self.body is not None:
            self._body_radius = float(self.body)

    def _make_gravity(self):
        g = self.gravity
        if g is None:
            return lambda r: np.zeros(3)
        if isinstance(g, MasconModel):
            return lambda r: mascon_acceleration(g, r)
        if isinstance(g, DensityField):
            grid = self.grid or QuadratureGrid.regular(g.domain_halfwidth, 32)
            density = g.node_density(grid)
            return lambda r: predicted_acceleration(g, r, grid, density=density)
        if callable(g):
            return g
        raise ConfigurationError(f"unsupported gravity source {type(g).__name__}")

    def _make_eclipse(self):
        e = self.eclipse
        if e is None:
            return None
        if isinstance(e, TriangleMesh):
            return mesh_eclipse_source(e)
        if isinstance(e, EclipseNet) or callable(e):
            return e
        raise ConfigurationError(f"unsupported eclipse source {type(e).__name__}")

    def sun(self, t):
        return self.sun_direction_fn(t)

    def gravity_at(self, r):
        return self._gravity(r)

    def eclipse_value(self, r, t):
        """Eclipse function at ``r`` for the sun direction at time ``t`` (+inf if no source)."""
        if self._eclipse is None:
            return np.inf
        return float(self._eclipse(r, self.sun(t)))

    def impacted(self, r):
        if self.body is None:
            return False
        radius = np.linalg.norm(r)
        if isinstance(self.body, TriangleMesh):
            return radius < IMPACT_BAND * self._body_radius and point_inside(self.body, r)
        return radius < self._body_radius


@dataclass
class State:
    t: float
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).reshape(3)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.t) and np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))):
            raise ConfigurationError("state must be finite")

    @property
    def y(self):
        return np.concatenate([self.r, self.v])


@dataclass
class EventRecord:
    t_event: float
    r_event: np.ndarray
    kind: str
    refinement_width: float = 0.0


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    nu: np.ndarray
    events: list
    stats: dict

    def state(self, k):
        return State(self.t[k], self.y[k, :3], self.y[k, 3:])

    @property
    def final(self):
        return self.state(-1)

    def save_csv(self, path):
        data = np.column_stack([self.t, self.y, self.nu])
        np.savetxt(path, data, fmt=["%.17g"] * 7 + ["%d"], delimiter=",",
                   header="t,x,y,z,vx,vy,vz,nu", comments="")

    def save_events_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,kind,x,y,z\n")
            for ev in self.events:
                x, y, z = (float(c) for c in ev.r_event)
                fh.write(f"{float(ev.t_event)!r},{ev.kind},{x!r},{y!r},{z!r}\n")


def total_acceleration(state, cfg, nu=None):
    """Gravity + Coriolis + centrifugal + eclipse-gated SRP at ``state``.

    ``nu`` defaults to the sign test of the eclipse source (F >= 0 is lit).
    """
    r, v, w = state.r, state.v, cfg.omega
    acc = np.asarray(cfg.gravity_at(r), dtype=np.float64) - 2.0 * np.cross(w, v) - np.cross(w, np.cross(w, r))
    if cfg.eta > 0:
        if nu is None:
            nu = 1 if cfg.eclipse_value(r, state.t) >= 0.0 else 0
        acc = acc - cfg.eta * nu * cfg.sun(state.t)
    return acc


def jacobi_constant(state, cfg):
    """``sum m/|r - x| + |w x r|^2 / 2 - |v|^2 / 2``, conserved when eta = 0.

    Requires mascon gravity.
    """
    if cfg.eta != 0:
        raise ConfigurationError("the Jacobi integral needs eta = 0")
    if not isinstance(cfg.gravity, MasconModel):
        raise ConfigurationError("the Jacobi integral needs mascon gravity")
    m = cfg.gravity
    potential = float(np.sum(m.masses / np.linalg.norm(state.r - m.points, axis=1)))
    wr = np.cross(cfg.omega, state.r)
    return potential + 0.5 * float(wr @ wr) - 0.5 * float(state.v @ state.v)


class _Stepper:
    """Dormand-Prince 5(4) step with dense output."""

    def __init__(self, rhs, rtol, atol):
        self.rhs = rhs
        self.rtol = rtol
        self.atol = atol

    def step(self, t, y, f0, h):
        K = np.empty((7, len(y)))
        K[0] = f0
        for s in range(1, 6):
            dy = h * (K[:s].T @ _A[s, :s])
            K[s] = self.rhs(t + _C[s] * h, y + dy)
        y1 = y + h * (K[:6].T @ _B)
        K[6] = self.rhs(t + h, y1)
        err = h * (K.T @ _E)
        scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y1))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        return y1, K, err_norm

    @staticmethod
    def dense(t, y, h, K):
        Q = K.T @ _P

        def interp(tau):
            x = (tau - t) / h
            return y + h * (Q @ np.array([x, x * x, x ** 3, x ** 4]))

        return interp


def propagate(state0, t_end, cfg, tol=1e-12, event_tol=1e-10, first_step=None,
              max_steps=5_000_000):
    """Integrate from ``state0`` to ``t_end`` with eclipse event handling.

    Returns a :class:`Trajectory` holding every accepted step (and every
    event state), the eclipse factor in force on the step that ended there,
    and the list of :class:`EventRecord`.  Propagation stops early with an
    ``impact`` event if the particle enters the body.
    """
    if tol <= 0:
        raise ConfigurationError("tolerance must be positive")
    t = float(state0.t)
    if not t_end > t:
        raise ConfigurationError("t_end must exceed the initial time")
    y = state0.y
    stats = {"accepted": 0, "rejected": 0, "eclipse_evals": 0, "unrefined_crossings": 0,
             "bisections": 0}

    def eclipse_at(tau, yy):
        stats["eclipse_evals"] += 1
        return cfg.eclipse_value(yy[:3], tau)

    f_ecl = eclipse_at(t, y)
    nu = 1 if f_ecl >= 0.0 else 0
    regime = nu

    def rhs(tau, yy):
        st = State.__new__(State)
        st.t, st.r, st.v = tau, yy[:3], yy[3:]
        return np.concatenate([yy[3:], total_acceleration(st, cfg, nu)])

    stepper = _Stepper(rhs, tol, tol)
    times, states, nus, events = [t], [y.copy()], [nu], []
    f0 = rhs(t, y)
    h = first_step or _initial_step(rhs, t, y, f0, tol)
    track = cfg._eclipse is not None

    for _ in range(max_steps):
        if t >= t_end:
            break
        h = min(h, t_end - t)
        if h < MIN_STEP:
            raise StepSizeUnderflowError(f"step size {h:.3e} below {MIN_STEP} at t={t}")
        y1, K, err = stepper.step(t, y, f0, h)
        if not np.isfinite(err) or err > 1.0:
            stats["rejected"] += 1
            factor = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
            h *= factor
            continue
        t1 = t + h
        event = None
        if track:
            f1 = eclipse_at(t1, y1)
            if (f1 >= 0.0) != (regime == 1):
                interp = _Stepper.dense(t, y, h, K)
                a, b = t, t1
                while b - a > event_tol:
                    stats["bisections"] += 1
                    mid = 0.5 * (a + b)
                    if (eclipse_at(mid, interp(mid)) >= 0.0) == (regime == 1):
                        a = mid
                    else:
                        b = mid
                t_ev = 0.5 * (a + b)
                h_ev = t_ev - t
                if h_ev > 0:
                    y1, K, _ = stepper.step(t, y, f0, h_ev)
                else:
                    y1 = y.copy()
                t1 = t_ev
                kind = "shadow_entry" if regime == 1 else "shadow_exit"
                event = EventRecord(t_ev, y1[:3].copy(), kind, b - a)
        stats["accepted"] += 1
        times.append(t1)
        states.append(y1.copy())
        nus.append(nu)
        t, y = t1, y1
        if event is not None:
            events.append(event)
            regime = 1 - regime
            nu = regime
            f0 = rhs(t, y)
        else:
            f0 = K[6]
            if track and (f1 >= 0.0) != (regime == 1):
                stats["unrefined_crossings"] += 1
            h *= min(10.0, 0.9 * err ** -0.2) if err > 0 else 10.0
        if cfg.impacted(y[:3]):
            events.append(EventRecord(t, y[:3].copy(), "impact", 0.0))
            break
    else:
        raise StepSizeUnderflowError(f"exceeded {max_steps} steps before t_end")

    return Trajectory(np.asarray(times), np.asarray(states), np.asarray(nus, dtype=int), events, stats)


def _initial_step(rhs, t, y, f0, tol):
    """Hairer-Wanner starting step estimate."""
    scale = tol + tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = rhs(t + h0, y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)
