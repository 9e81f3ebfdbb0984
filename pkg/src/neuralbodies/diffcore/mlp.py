"""Feedforward network shared by the density, eclipse and distance fields."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericalError
from . import tape as T

HIDDEN_ACTIVATIONS = ("tanh", "softplus")
OUTPUT_TRANSFORMS = ("identity", "abs", "softplus")
CHECKPOINT_FORMAT = "neuralbodies-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    """Dense network: ``hidden_activation`` after every layer but the last.

    ``layers`` holds dicts with ``weights`` of shape (out, in) and ``bias``
    of shape (out,).  A model with a single layer is an affine map followed by
    the output transform.
    """

    layers: list
    hidden_activation: str = "tanh"
    output_transform: str = "identity"
    input_dim: int = field(init=False)
    output_dim: int = field(init=False)

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ConfigurationError(f"unknown output transform {self.output_transform!r}")
        if not self.layers:
            raise ConfigurationError("model needs at least one layer")
        for k, layer in enumerate(self.layers):
            w = np.asarray(layer["weights"], dtype=np.float64)
            b = np.asarray(layer["bias"], dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {k}: weights {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != self.layers[k - 1]["weights"].shape[0]:
                raise ConfigurationError(f"layer {k} input does not chain with layer {k - 1}")
            layer["weights"], layer["bias"] = w, b
        self.input_dim = self.layers[0]["weights"].shape[1]
        self.output_dim = self.layers[-1]["weights"].shape[0]

    @classmethod
    def create(cls, input_dim, output_dim, hidden=(50,) * 6, hidden_activation="tanh",
               output_transform="identity", seed=0):
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        dims = [input_dim, *hidden, output_dim]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            layers.append({
                "weights": rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                "bias": rng.uniform(-bound, bound, size=fan_out),
            })
        return cls(layers, hidden_activation, output_transform)

    @property
    def hidden(self):
        return tuple(layer["weights"].shape[0] for layer in self.layers[:-1])

    def parameters(self):
        params = {}
        for k, layer in enumerate(self.layers):
            params[f"layers.{k}.weights"] = layer["weights"]
            params[f"layers.{k}.bias"] = layer["bias"]
        return params

    def set_parameters(self, params):
        for k, layer in enumerate(self.layers):
            for key in ("weights", "bias"):
                new = np.asarray(params[f"layers.{k}.{key}"], dtype=np.float64)
                if new.shape != layer[key].shape:
                    raise ConfigurationError(f"parameter layers.{k}.{key} has shape {new.shape}")
                layer[key] = new

    def copy(self):
        layers = [{"weights": l["weights"].copy(), "bias": l["bias"].copy()} for l in self.layers]
        return MlpModel(layers, self.hidden_activation, self.output_transform)

    def flat_parameters(self):
        return np.concatenate([p.ravel() for p in self.parameters().values()])

    def __call__(self, inputs):
        return forward(self, inputs)

    # checkpoint ------------------------------------------------------------

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "precision": "float64",
            "encoding": "json-decimal-roundtrip",
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "hidden_activation": self.hidden_activation,
            "output_transform": self.output_transform,
            "parameters": [float(x) for x in self.flat_parameters()],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError("not a version-1 MLP checkpoint")
        dims = [data["input_dim"], *data["hidden"], data["output_dim"]]
        flat = np.asarray(data["parameters"], dtype=np.float64)
        expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
        if flat.size != expected:
            raise ConfigurationError(f"checkpoint has {flat.size} parameters, expected {expected}")
        layers, pos = [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = flat[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = flat[pos:pos + fan_out]
            pos += fan_out
            layers.append({"weights": w.copy(), "bias": b.copy()})
        return cls(layers, data["hidden_activation"], data["output_transform"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_inputs(model, inputs):
    value = inputs.value if isinstance(inputs, T.Tensor) else np.asarray(inputs, dtype=np.float64)
    if value.ndim != 2 or value.shape[1] != model.input_dim:
        raise ConfigurationError(f"inputs of shape {value.shape} for a model with input_dim {model.input_dim}")
    return value


def forward(model, inputs, tape=None):
    """Evaluate the network on a ``(batch, input_dim)`` array.

    With a tape, parameters are registered under their ``parameters()`` names
    and every operation is recorded; without one the evaluation is plain
    numpy and safe to call from several threads.
    """
    x = _check_inputs(model, inputs)
    if tape is None:
        h = x
        last = len(model.layers) - 1
        for k, layer in enumerate(model.layers):
            h = h @ layer["weights"].T + layer["bias"]
            if k < last:
                h = np.tanh(h) if model.hidden_activation == "tanh" else T._softplus(h)
        return _transform_array(model.output_transform, h)

    h = inputs if isinstance(inputs, T.Tensor) else tape.constant(x)
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        w = tape.parameter(f"layers.{k}.weights", layer["weights"])
        b = tape.parameter(f"layers.{k}.bias", layer["bias"])
        h = T.matmul(h, T.transpose(w)) + b
        if k < last:
            h = T.tanh(h) if model.hidden_activation == "tanh" else T.softplus(h)
    out = _transform_tensor(model.output_transform, h)
    if not np.all(np.isfinite(out.value)):
        raise NumericalError("non-finite network output")
    return out


def forward_with_input_gradient(model, inputs, tape):
    """Network output and its gradient with respect to the inputs.

    The input Jacobian is carried forward layer by layer with ordinary tape
    operations, so both returned tensors are themselves differentiable with
    respect to the parameters.  Requires ``output_dim == 1``.

    Returns ``(outputs (batch, 1), gradient (batch, input_dim))``.
    """
    if model.output_dim != 1:
        raise ConfigurationError("input gradient needs a scalar-output model")
    x = _check_inputs(model, inputs)
    batch, d = x.shape
    h = inputs if isinstance(inputs, T.Tensor) else tape.constant(x)
    # jac[b, i, :] = d h / d x_i
    jac = tape.constant(np.broadcast_to(np.eye(d), (batch, d, d)).copy())
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        w = tape.parameter(f"layers.{k}.weights", layer["weights"])
        b = tape.parameter(f"layers.{k}.bias", layer["bias"])
        wt = T.transpose(w)
        z = T.matmul(h, wt) + b
        jac = T.matmul(jac, wt)
        if k < last:
            if model.hidden_activation == "tanh":
                h = T.tanh(z)
                slope = 1.0 - T.square(h)
            else:
                h = T.softplus(z)
                slope = T.sigmoid(z)
            jac = jac * T.reshape(slope, (batch, 1, slope.shape[1]))
    out = _transform_tensor(model.output_transform, z)
    if model.output_transform == "softplus":
        jac = jac * T.reshape(T.sigmoid(z), (batch, 1, 1))
    elif model.output_transform == "abs":
        jac = jac * T.reshape(z * T.reciprocal(out), (batch, 1, 1))
    grad = T.reshape(jac, (batch, d))
    return out, grad


def _transform_tensor(kind, h):
    if kind == "abs":
        return T.smooth_abs(h)
    if kind == "softplus":
        return T.softplus(h)
    return h


def _transform_array(kind, h):
    if kind == "abs":
        return np.sqrt(h * h + T.ABS_DELTA ** 2)
    if kind == "softplus":
        return T._softplus(h)
    return h
