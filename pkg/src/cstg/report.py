"""Metrics, selected-feature summaries, exports and the STG/c-STG mean-gate experiment."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, SplitPlan, one_hot, split
from .errors import DataError, DimensionError, UndefinedMetricError
from .gates import gate_means
from .networks import Layer, Mlp
from .tensor import Tensor


def accuracy(yhat_prob, y) -> float:
    """Percentage of rows where the 0.5-thresholded probability equals the label."""
    yhat_prob = np.asarray(yhat_prob, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if yhat_prob.size == 0:
        raise DataError("accuracy of an empty prediction set")
    if yhat_prob.shape != y.shape:
        raise DimensionError(f"predictions {yhat_prob.shape} and labels {y.shape} differ")
    return 100.0 * float(np.mean((yhat_prob > 0.5) == (y == 1)))


def r2_score(yhat, y) -> float:
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if yhat.shape != y.shape:
        raise DimensionError(f"predictions {yhat.shape} and targets {y.shape} differ")
    if y.size < 2:
        raise UndefinedMetricError("r2 needs at least two targets")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedMetricError("r2 is undefined for constant targets")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def task_metric(task: str, yhat, y) -> tuple[str, float]:
    if task == "bce":
        return "accuracy", accuracy(yhat, y)
    return "r2", r2_score(yhat, y)


# -- gate summaries -------------------------------------------------------------


@dataclass
class GateSummary:
    contexts: np.ndarray
    gates: np.ndarray  # m x D, eval-mode
    mu: np.ndarray
    weights: np.ndarray | None
    selected: list[set[int]]
    tau: float
    rows: list[dict] = field(default_factory=list)

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.selected]

    @property
    def mean_count(self) -> float:
        return float(np.mean(self.counts))

    @property
    def union(self) -> set[int]:
        return set().union(*self.selected)

    @property
    def union_count(self) -> int:
        return len(self.union)


def gate_summary(gm, contexts, tau: float = 0.5, n_explanatory: int | None = None,
                 feature_names=None) -> GateSummary:
    """Eval-mode gates per context; selection uses the strict rule gate > tau.

    Only the first ``n_explanatory`` gates are counted, which excludes context
    columns concatenated onto the features.
    """
    from . import tensor as T
    from .gates import gate_forward, gate_rows

    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if contexts.shape[0] == 0:
        raise DataError("gate_summary needs at least one context")
    with T.no_grad():
        go = gate_forward(gm, T.Tensor(contexts), "eval")
    d = gm.n_features if n_explanatory is None else n_explanatory
    gates, mu = go.gate.data[:, :d], go.mu.data[:, :d]
    weights = go.weight.data[:, :d] if go.weight is not None else None
    selected = [set(np.flatnonzero(g > tau).tolist()) for g in gates]
    rows = [r for r in gate_rows(gm, contexts, tau, feature_names)
            if not isinstance(r["feature"], int) or r["feature"] < d]
    return GateSummary(contexts, gates, mu, weights, selected, tau, rows)


# -- exports --------------------------------------------------------------------


def metrics_document(metric_name: str, value: float, std: float | None = None,
                     per_fold=None, **extra) -> dict:
    doc = {"metric_name": metric_name, "value": value, "std": std,
           "per_fold": list(per_fold) if per_fold is not None else []}
    doc.update(extra)
    return doc


def write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_plot_data(summary: GateSummary, path, features=None, context_names=None,
                    use_weighted: bool = False) -> None:
    """Long-format gate values: context columns, feature, value."""
    m, d = summary.gates.shape
    names = context_names or [f"z_{j}" for j in range(summary.contexts.shape[1])]
    values = summary.gates
    if use_weighted and summary.weights is not None:
        values = summary.gates * summary.weights
    features = range(d) if features is None else features
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "feature", "value"])
        for i in range(m):
            for f in features:
                w.writerow([*map(repr, summary.contexts[i].tolist()), f, repr(float(values[i, f]))])


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_risk", "val_metric", "expected_open_gates"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_risk"]), repr(h["val_metric"]),
                        repr(h["expected_open_gates"])])


# -- mean-gate relation between global and conditional gates --------------------


def theorem34_data(n: int = 2000, seed: int = 0, noise_std: float = 0.1):
    """Linear regression with two equiprobable contexts and disjoint supports.

    Context 0 uses features 0 and 1, context 1 uses features 2 and 3 (all with
    coefficient 1); features 4 and 5 never matter.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 6))
    label = rng.integers(0, 2, size=n)
    support = np.array([[1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0]], dtype=np.float64)
    y = np.einsum("nd,nd->n", x, support[label]) + rng.normal(0.0, noise_std, size=n)
    return Dataset(x, one_hot(label, 2), y, "mse", context_label=label)


def theorem34_experiment(seed: int = 0, n: int = 2000, lam: float = 1e-2, eta: float = 0.05,
                         max_epochs: int = 300, sigma: float = 0.5) -> dict:
    """Train global STG and c-STG on the same linear problem and compare gate means.

    Both models share one frozen linear predictor with unit coefficients, the
    common-coefficient premise under which the global gate mean should equal the
    context average of the conditional gate means.  Returns the two mean
    vectors and their largest componentwise gap between clamp01(mu_stg) and
    the context-averaged mu(z) (sigmoid outputs, already inside [0, 1]).
    """
    from .training import TrainConfig, build_model, fit, seed_streams  # training imports this module

    ds = theorem34_data(n, seed)
    tr, va, _ = split(ds, SplitPlan(seed=seed, fractions=(0.8, 0.2, 0.0)))
    ds_tr, ds_va = ds.subset(tr), ds.subset(va)

    def frozen_linear():
        return Mlp(6, [Layer(Tensor(np.ones((1, 6))), Tensor(np.zeros(1)), "none")])

    mus = {}
    for method in ("global_stg", "cstg"):
        cfg = TrainConfig(method=method, eta=eta, lam=lam, sigma=sigma, batch_size=64,
                          max_epochs=max_epochs, patience=max_epochs, seed=seed)
        init_rng, shuffle_rng, noise_rng = seed_streams(seed)
        model = build_model(cfg, 6, 2, "mse", init_rng)
        model.predictor = frozen_linear()
        fit(model, ds_tr, ds_va, cfg, shuffle_rng, noise_rng)
        if method == "global_stg":
            mus[method] = model.gate.global_mu.data.copy()
        else:
            with T.no_grad():
                mu, _ = gate_means(model.gate, Tensor(np.eye(2)))
            mus[method] = mu.data.mean(axis=0)  # contexts are equiprobable
    # Gaps are taken on the effective gate clamp01(mu): an unconstrained global mu
    # keeps drifting below 0 once a gate is closed, without changing the model.
    gap = float(np.max(np.abs(np.clip(mus["global_stg"], 0, 1) - mus["cstg"])))
    return {"mu_stg": mus["global_stg"], "mean_mu_cstg": mus["cstg"], "max_abs_gap": gap}
