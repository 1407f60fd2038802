"""Fully connected networks used for the hypernetwork and the predictor."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

ACTIVATIONS = ("relu", "sigmoid", "none")


@dataclass(frozen=True)
class LayerSpec:
    out_dim: int
    activation: str = "none"

    def __post_init__(self):
        if int(self.out_dim) < 1:
            raise ConfigError(f"layer out_dim must be >= 1, got {self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def parse(cls, obj) -> "LayerSpec":
        if isinstance(obj, LayerSpec):
            return obj
        if isinstance(obj, dict):
            return cls(int(obj["out_dim"]), obj.get("activation", "none"))
        out_dim, activation = obj
        return cls(int(out_dim), activation)

    def to_json(self) -> dict:
        return {"out_dim": self.out_dim, "activation": self.activation}


@dataclass
class Layer:
    weight: Tensor  # out x in
    bias: Tensor  # out
    activation: str


@dataclass
class Mlp:
    in_dim: int
    layers: list[Layer] = field(default_factory=list)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.weight, layer.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def build_mlp(in_dim: int, specs, seed=0) -> Mlp:
    """Glorot-uniform weights, zero biases.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    specs = [LayerSpec.parse(s) for s in specs]
    if not specs:
        raise ConfigError("build_mlp needs at least one layer spec")
    if in_dim < 1:
        raise ConfigError(f"in_dim must be >= 1, got {in_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers, fan_in = [], in_dim
    for spec in specs:
        bound = xavier_bound(fan_in, spec.out_dim)
        w = rng.uniform(-bound, bound, size=(spec.out_dim, fan_in))
        layers.append(Layer(Tensor(w, requires_grad=True),
                            Tensor(np.zeros(spec.out_dim), requires_grad=True),
                            spec.activation))
        fan_in = spec.out_dim
    return Mlp(in_dim, layers)


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return T.relu(x)
    if activation == "sigmoid":
        return T.sigmoid(x)
    return x


def forward(net: Mlp, x: Tensor, return_hidden: bool = False):
    """Batch forward pass.

    With ``return_hidden`` also returns the input to the last layer (the
    penultimate activation; the raw input when there is a single layer).
    """
    x = T.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionError(f"network expects input of width {net.in_dim}, got shape {x.shape}")
    h = x
    penultimate = x
    for layer in net.layers:
        penultimate = h
        h = _activate(T.matmul(h, layer.weight.T) + layer.bias, layer.activation)
    return (h, penultimate) if return_hidden else h


def mlp_to_json(net: Mlp) -> dict:
    return {
        "in_dim": net.in_dim,
        "layers": [
            {
                "rows": layer.weight.shape[0],
                "cols": layer.weight.shape[1],
                "activation": layer.activation,
                "weights": layer.weight.data.ravel().tolist(),
                "bias": layer.bias.data.tolist(),
            }
            for layer in net.layers
        ],
    }


def mlp_from_json(doc: dict) -> Mlp:
    try:
        in_dim = int(doc["in_dim"])
        layers, fan_in = [], in_dim
        for i, entry in enumerate(doc["layers"]):
            rows, cols = int(entry["rows"]), int(entry["cols"])
            if cols != fan_in:
                raise FormatError(f"layer {i}: cols={cols} does not chain with width {fan_in}")
            w = np.asarray(entry["weights"], dtype=np.float64)
            b = np.asarray(entry["bias"], dtype=np.float64)
            if w.size != rows * cols or b.size != rows:
                raise FormatError(f"layer {i}: weight/bias sizes do not match {rows}x{cols}")
            if entry["activation"] not in ACTIVATIONS:
                raise FormatError(f"layer {i}: unknown activation {entry['activation']!r}")
            layers.append(Layer(Tensor(w.reshape(rows, cols), requires_grad=True),
                                Tensor(b, requires_grad=True), entry["activation"]))
            fan_in = rows
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed network checkpoint: {exc}") from None
    return Mlp(in_dim, layers)


def save_mlp(net: Mlp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_json(net), fh)


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        return mlp_from_json(json.load(fh))
