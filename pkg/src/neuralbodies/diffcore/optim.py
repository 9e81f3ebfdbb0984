"""Adaptive-moment first-order optimizer and a generic training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step,
            "m": {k: _encode(a) for k, a in self.m.items()},
            "v": {k: _encode(a) for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["lr"], data["beta1"], data["beta2"], data["eps"], data["step"],
                   {k: _decode(a) for k, a in data["m"].items()},
                   {k: _decode(a) for k, a in data["v"].items()})


def _encode(a):
    return {"shape": list(a.shape), "values": [float(x) for x in a.ravel()]}


def _decode(d):
    return np.asarray(d["values"], dtype=np.float64).reshape(d["shape"])


def optimizer_step(params, grads, state):
    """One Adam update.  Returns a new parameter dict; ``state`` is updated in place."""
    for name, g in grads.items():
        if name not in params:
            continue
        if g.shape != params[name].shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}", parameter=name)

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new


@dataclass
class TrainResult:
    history: list
    best_loss: float
    best_iteration: int
    monitor: list = field(default_factory=list)
    # best over the regular monitor schedule only; a resumed run continues from this
    resume_best: tuple = None


def fit(model, loss_and_grads, iterations, state, *, start=0, history=None,
        monitor=None, monitor_every=0, best=None):
    """Run ``iterations`` optimizer steps on ``model`` in place.

    ``loss_and_grads(iteration)`` returns ``(loss, grads)`` for the current
    parameters; iteration-indexed randomness inside it keeps resumed runs
    identical to uninterrupted ones.  The best checkpoint is chosen on
    ``monitor()`` when given (evaluated every ``monitor_every`` iterations and
    after the last), otherwise on the per-iteration loss.  An evaluation after
    the last iteration that falls off the regular schedule counts towards the
    returned best but not towards ``resume_best`` or the monitor record, so
    stopping early and resuming gives the same result as one long run.

    Returns the :class:`TrainResult` and the best parameters.
    """
    history = [] if history is None else list(history)
    best_loss, best_iter, best_params = (math.inf, -1, None) if best is None else best
    monitored = []
    for it in range(start, iterations):
        loss, grads = loss_and_grads(it)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {it}", iteration=it)
        history.append(float(loss))
        if monitor is None and loss < best_loss:
            best_loss, best_iter, best_params = loss, it, _snapshot(model)
        try:
            model.set_parameters(optimizer_step(model.parameters(), grads, state))
        except NumericalError as exc:
            exc.iteration = it
            raise
        done = it + 1
        on_schedule = bool(monitor_every) and done % monitor_every == 0
        if monitor is not None and on_schedule:
            value = float(monitor())
            monitored.append((done, value))
            if value < best_loss:
                best_loss, best_iter, best_params = value, done, _snapshot(model)
        if done % 500 == 0:
            log.info("iteration %d loss %.6e", done, loss)
    resume_best = (float(best_loss), best_iter, best_params)
    if monitor is not None and iterations > start and not (monitor_every and iterations % monitor_every == 0):
        value = float(monitor())
        if value < best_loss:
            best_loss, best_iter, best_params = value, iterations, _snapshot(model)
    if best_params is None:
        best_params = _snapshot(model)
    if resume_best[2] is None:
        resume_best = (resume_best[0], resume_best[1], best_params)
    return TrainResult(history, float(best_loss), best_iter, monitored, resume_best), best_params


def _snapshot(model):
    return {k: v.copy() for k, v in model.parameters().items()}
