"""Central finite-difference check of tape gradients."""

import numpy as np

from ..errors import ConfigurationError, NumericalError
from .tape import Tape, backward


def grad_check(fn, point, h=1e-5):
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``.

    ``fn(tape, x)`` builds a scalar from the tape leaf ``x``.
    """
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    point = np.asarray(point, dtype=np.float64)

    def value(x):
        tape = Tape()
        out = fn(tape, tape.variable(x, "x"))
        v = float(np.asarray(out.value).reshape(()))
        if not np.isfinite(v):
            raise NumericalError("non-finite function value in grad_check")
        return v

    tape = Tape()
    out = fn(tape, tape.variable(point, "x"))
    if out.value.size != 1:
        raise ConfigurationError("grad_check needs a scalar-valued function")
    value(point)
    analytic = backward(tape, output=out)["x"]

    worst = 0.0
    for idx in np.ndindex(point.shape):
        xp, xm = point.copy(), point.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (value(xp) - value(xm)) / (2.0 * h)
        a = analytic[idx]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
