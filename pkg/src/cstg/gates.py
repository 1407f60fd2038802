"""Gaussian-relaxed stochastic gates: global STG, conditional and weighted conditional."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .networks import LayerSpec, Mlp, build_mlp, forward, mlp_from_json, mlp_to_json, xavier_bound
from .tensor import Tensor

KINDS = ("global_stg", "cstg", "weighted_cstg")


@dataclass
class GateModel:
    kind: str
    sigma: float
    n_features: int
    context_dim: int
    hyper: Mlp | None = None
    global_mu: Tensor | None = None
    weight_W: Tensor | None = None  # n_features x H
    weight_b: Tensor | None = None  # n_features

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown gate kind {self.kind!r}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if (self.kind == "global_stg") != (self.global_mu is not None) or \
                (self.kind != "global_stg") != (self.hyper is not None):
            raise ConfigError(f"{self.kind} gate model has the wrong parameter set")
        if (self.kind == "weighted_cstg") != (self.weight_W is not None):
            raise ConfigError("weight head present iff kind is weighted_cstg")

    @property
    def has_weights(self) -> bool:
        return self.weight_W is not None

    def parameters(self) -> list[Tensor]:
        params = self.hyper.parameters() if self.hyper is not None else [self.global_mu]
        if self.has_weights:
            params += [self.weight_W, self.weight_b]
        return [p for p in params if p.requires_grad]


@dataclass
class GateOutput:
    mu: Tensor
    gate: Tensor
    weight: Tensor | None = None


def hyper_specs(hyper_arch, n_features: int) -> list[LayerSpec]:
    """Append a sigmoid projection to ``n_features`` unless the arch already ends there."""
    specs = [LayerSpec.parse(s) for s in hyper_arch]
    if not specs or specs[-1].out_dim != n_features:
        specs.append(LayerSpec(n_features, "sigmoid"))
    elif specs[-1].activation != "sigmoid":
        raise ConfigError("the hypernetwork's final layer must use a sigmoid activation")
    return specs


def build_gate_model(kind: str, n_features: int, context_dim: int, hyper_arch=(),
                     sigma: float = 0.5, seed=0) -> GateModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if kind == "global_stg":
        mu = Tensor(np.full(n_features, 0.5), requires_grad=True)
        return GateModel(kind, sigma, n_features, context_dim, global_mu=mu)
    if context_dim < 1:
        raise ConfigError(f"{kind} needs at least one context variable")
    specs = hyper_specs(hyper_arch, n_features)
    hyper = build_mlp(context_dim, specs, rng)
    W = b = None
    if kind == "weighted_cstg":
        h = specs[-2].out_dim if len(specs) > 1 else context_dim
        bound = xavier_bound(h, n_features)
        W = Tensor(rng.uniform(-bound, bound, size=(n_features, h)), requires_grad=True)
        b = Tensor(np.zeros(n_features), requires_grad=True)
    return GateModel(kind, sigma, n_features, context_dim, hyper=hyper, weight_W=W, weight_b=b)


def _check_z(gm: GateModel, z: Tensor) -> Tensor:
    z = T.as_tensor(z)
    if z.data.ndim != 2:
        raise DimensionError(f"contexts must be a batch x L matrix, got shape {z.shape}")
    if gm.kind != "global_stg" and z.shape[1] != gm.context_dim:
        raise DimensionError(f"gate model expects context width {gm.context_dim}, got {z.shape[1]}")
    return z


def gate_means(gm: GateModel, z) -> tuple[Tensor, Tensor | None]:
    """Return (mu, penultimate hypernetwork activation)."""
    z = _check_z(gm, z)
    if gm.kind == "global_stg":
        return Tensor(np.zeros((z.shape[0], gm.n_features))) + gm.global_mu, None
    return forward(gm.hyper, z, return_hidden=True)


def gate_forward(gm: GateModel, z, mode: str = "eval", rng=None, noise=None) -> GateOutput:
    """Compute mu(z), the relaxed gate, and (for the weighted variant) w(z).

    In train mode the gate is ``clamp01(mu + eps)`` with ``eps ~ N(0, sigma^2)``
    drawn per row and feature from ``rng``; ``noise`` overrides the draw.
    In eval mode the gate is ``clamp01(mu)``.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    mu, hidden = gate_means(gm, z)
    if mode == "train":
        if noise is None:
            if rng is None:
                raise ConfigError("train mode needs a seeded rng")
            noise = rng.normal(0.0, gm.sigma, size=mu.shape)
        gate = T.clamp01(mu + np.broadcast_to(np.asarray(noise, dtype=np.float64), mu.shape))
    else:
        gate = T.clamp01(mu)
    weight = None
    if gm.has_weights:
        weight = T.matmul(hidden, gm.weight_W.T) + gm.weight_b
    return GateOutput(mu, gate, weight)


def apply_gates(x, go: GateOutput) -> Tensor:
    x = T.as_tensor(x)
    if x.shape != go.gate.shape:
        raise DimensionError(f"features {x.shape} do not match gates {go.gate.shape}")
    out = x * go.gate
    if go.weight is not None:
        out = out * go.weight
    return out


def open_gate_count(mu: Tensor, sigma: float) -> Tensor:
    """Row-wise sum over features of Phi(mu / sigma)."""
    return T.tsum(T.normal_cdf(T.scale(mu, 1.0 / sigma)), axis=1)


def expected_open_gates(gm: GateModel, z) -> Tensor:
    mu, _ = gate_means(gm, z)
    return open_gate_count(mu, gm.sigma)


def _check_tau(tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")


def select_features(gm: GateModel, z, tau: float = 0.5) -> tuple[set[int], np.ndarray]:
    """Features whose eval-mode gate is strictly above ``tau`` for a single context row."""
    _check_tau(tau)
    with T.no_grad():
        gate = gate_forward(gm, z, "eval").gate.data[0]
    return {int(d) for d in np.flatnonzero(gate > tau)}, gate


# -- serialization ------------------------------------------------------------


def gate_model_to_json(gm: GateModel) -> dict:
    doc = {"kind": gm.kind, "sigma": gm.sigma, "n_features": gm.n_features,
           "context_dim": gm.context_dim, "hyper": None, "global_mu": None, "weight_head": None}
    if gm.hyper is not None:
        doc["hyper"] = mlp_to_json(gm.hyper)
    if gm.global_mu is not None:
        doc["global_mu"] = gm.global_mu.data.tolist()
    if gm.has_weights:
        doc["weight_head"] = {"rows": gm.weight_W.shape[0], "cols": gm.weight_W.shape[1],
                              "weights": gm.weight_W.data.ravel().tolist(),
                              "bias": gm.weight_b.data.tolist()}
    return doc


def gate_model_from_json(doc: dict) -> GateModel:
    try:
        hyper = mlp_from_json(doc["hyper"]) if doc.get("hyper") else None
        mu = Tensor(doc["global_mu"], requires_grad=True) if doc.get("global_mu") is not None else None
        W = b = None
        if doc.get("weight_head"):
            wh = doc["weight_head"]
            W = Tensor(np.asarray(wh["weights"], dtype=np.float64).reshape(wh["rows"], wh["cols"]),
                       requires_grad=True)
            b = Tensor(wh["bias"], requires_grad=True)
        return GateModel(doc["kind"], float(doc["sigma"]), int(doc["n_features"]),
                         int(doc["context_dim"]), hyper=hyper, global_mu=mu, weight_W=W, weight_b=b)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed gate checkpoint: {exc}") from None


def save_gate_model(gm: GateModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(gate_model_to_json(gm), fh)


def load_gate_model(path) -> GateModel:
    with open(path) as fh:
        return gate_model_from_json(json.load(fh))


# -- gates.csv ----------------------------------------------------------------


def gate_rows(gm: GateModel, contexts, tau: float = 0.5, feature_names=None) -> list[dict]:
    """One row per (context, feature) with the eval-mode mu, gate, weight and selection flag."""
    _check_tau(tau)
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    with T.no_grad():
        go = gate_forward(gm, Tensor(contexts), "eval")
    rows = []
    for i, zrow in enumerate(contexts):
        for d in range(gm.n_features):
            g = float(go.gate.data[i, d])
            rows.append({
                "context_id": i,
                "z": [float(v) for v in zrow],
                "feature": feature_names[d] if feature_names else d,
                "mu": float(go.mu.data[i, d]),
                "gate": g,
                "weight": float(go.weight.data[i, d]) if go.weight is not None else None,
                "selected": int(g > tau),
            })
    return rows


def write_gates_csv(rows: list[dict], fh=None) -> str:
    """Write rows to ``fh`` (or return the CSV text when ``fh`` is None)."""
    buf = io.StringIO() if fh is None else fh
    width = len(rows[0]["z"]) if rows else 0
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["context_id", *[f"z_{j}" for j in range(width)],
                     "feature", "mu", "gate", "weight", "selected"])
    for r in rows:
        writer.writerow([r["context_id"], *map(repr, r["z"]), r["feature"], repr(r["mu"]),
                         repr(r["gate"]), "" if r["weight"] is None else repr(r["weight"]),
                         r["selected"]])
    return buf.getvalue() if fh is None else ""


def read_gates_csv(fh) -> list[dict]:
    reader = csv.reader(fh)
    header = next(reader)
    zcols = [i for i, h in enumerate(header) if h.startswith("z_")]
    idx = {h: i for i, h in enumerate(header)}
    rows = []
    for rec in reader:
        feat = rec[idx["feature"]]
        rows.append({
            "context_id": int(rec[idx["context_id"]]),
            "z": [float(rec[i]) for i in zcols],
            "feature": int(feat) if feat.lstrip("-").isdigit() else feat,
            "mu": float(rec[idx["mu"]]),
            "gate": float(rec[idx["gate"]]),
            "weight": float(rec[idx["weight"]]) if rec[idx["weight"]] else None,
            "selected": int(rec[idx["selected"]]),
        })
    return rows
