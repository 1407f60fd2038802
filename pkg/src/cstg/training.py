"""End-to-end training of gated predictors, cross-validation and grid search."""

from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import Dataset, SplitPlan, complement, split
from .errors import ConfigError, TrainingError
from .gates import GateModel, apply_gates, build_gate_model, gate_forward, open_gate_count
from .networks import LayerSpec, Mlp, build_mlp, forward
from .objective import LassoModel, check_loss_kind, empirical_risk, lasso_fit, task_loss
from .report import task_metric
from .tensor import Tensor

logger = logging.getLogger(__name__)

METHODS = ("global_stg", "cstg", "weighted_cstg", "lasso", "plain")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    method: str = "cstg"
    with_context: bool = False
    eta: float = 1e-2
    lam: float = 0.1
    sigma: float = 0.5
    batch_size: int = 64
    max_epochs: int = 2000
    patience: int = 50
    seed: int = 0
    hyper_arch: list = field(default_factory=list)
    pred_arch: list = field(default_factory=list)
    tau: float = 0.5
    optimizer: str = "sgd"
    loss: str | None = None  # defaults to the dataset's task
    monitor: str = "loss"  # early-stopping criterion: validation "loss" or "risk"
    lasso_iters: int = 10_000
    restarts: int = 1  # independent initializations; the best validation score is kept

    def __post_init__(self):
        self.hyper_arch = [LayerSpec.parse(s) for s in self.hyper_arch]
        self.pred_arch = [LayerSpec.parse(s) for s in self.pred_arch]
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss is not None:
            check_loss_kind(self.loss)
        for name in ("eta", "sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        for name in ("batch_size", "max_epochs", "patience", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.monitor not in ("loss", "risk"):
            raise ConfigError(f"monitor must be 'loss' or 'risk', got {self.monitor!r}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        doc["hyper_arch"] = [s.to_json() for s in self.hyper_arch]
        doc["pred_arch"] = [s.to_json() for s in self.pred_arch]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        return cls(**doc)


@dataclass
class Model:
    """A trained (or trainable) predictor together with its gate mechanism."""

    method: str
    task: str
    n_features: int  # explanatory features, excluding concatenated context
    with_context: bool = False
    gate: GateModel | None = None
    predictor: Mlp | None = None
    lasso: LassoModel | None = None

    @property
    def gated(self) -> bool:
        return self.gate is not None

    def parameters(self) -> list[Tensor]:
        params = self.predictor.parameters() if self.predictor is not None else []
        if self.gate is not None:
            params = self.gate.parameters() + params
        return [p for p in params if p.requires_grad]

    def inputs(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return np.hstack([x, z]) if self.with_context else x

    def forward(self, x, z, mode="eval", rng=None):
        """Return (yhat as a batch vector, gate output or None)."""
        xin = Tensor(self.inputs(x, z))
        go = None
        if self.gate is not None:
            go = gate_forward(self.gate, Tensor(z), mode, rng)
            xin = apply_gates(xin, go)
        out = forward(self.predictor, xin)
        return T.reshape(out, (out.shape[0],)), go

    def predict(self, x, z) -> np.ndarray:
        if self.lasso is not None:
            return self.lasso.predict(self.inputs(x, z))
        with T.no_grad():
            yhat, _ = self.forward(x, z, "eval")
        return yhat.data

    def mean_open_gates(self, z) -> float:
        if self.gate is None:
            return float("nan")
        with T.no_grad():
            go = gate_forward(self.gate, Tensor(z), "eval")
            count = open_gate_count(go.mu, self.gate.sigma).data
        return float(np.mean(count))


@dataclass
class TrainResult:
    model: Model
    config: TrainConfig
    history: list[dict]
    best_epoch: int
    metrics: dict
    score: float = math.inf  # monitored validation score at best_epoch

    @property
    def gate_model(self) -> GateModel | None:
        return self.model.gate

    @property
    def predictor(self):
        return self.model.predictor if self.model.lasso is None else self.model.lasso


def pred_specs(pred_arch, task: str) -> list[LayerSpec]:
    """Append a scalar output layer (sigmoid for classification) unless present."""
    specs = [LayerSpec.parse(s) for s in pred_arch]
    if not specs or specs[-1].out_dim != 1:
        specs.append(LayerSpec(1, "sigmoid" if task == "bce" else "none"))
    return specs


def seed_streams(seed: int):
    """Independent generators for (initialization, shuffling, gate noise)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def build_model(cfg: TrainConfig, n_features: int, context_dim: int, task: str,
                rng: np.random.Generator | None = None) -> Model:
    rng = rng if rng is not None else seed_streams(cfg.seed)[0]
    task = cfg.loss or task
    contextual = cfg.method in ("cstg", "weighted_cstg")
    with_context = cfg.with_context and not contextual
    width = n_features + (context_dim if with_context else 0)
    model = Model(cfg.method, task, n_features, with_context)
    if cfg.method == "lasso":
        return model
    if cfg.method != "plain":
        model.gate = build_gate_model(cfg.method, width, context_dim, cfg.hyper_arch, cfg.sigma, rng)
    model.predictor = build_mlp(width, pred_specs(cfg.pred_arch, task), rng)
    return model


class Sgd:
    def __init__(self, params, eta):
        self.params, self.eta = params, eta

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.eta * p.grad


class Adam:
    def __init__(self, params, eta, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.eta, self.betas, self.eps = params, eta, betas, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad ** 2
            p.data -= self.eta * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, params, eta):
    return Adam(params, eta) if name == "adam" else Sgd(params, eta)


def evaluate(model: Model, ds: Dataset) -> tuple[float, float]:
    """(loss, mean expected open gates) from one eval-mode pass; gates are nan if ungated."""
    if model.lasso is not None:
        yhat = model.predict(ds.x, ds.z)
        with T.no_grad():
            return float(task_loss(model.task, Tensor(yhat), ds.y).data), float("nan")
    with T.no_grad():
        yhat, go = model.forward(ds.x, ds.z, "eval")
        loss = float(task_loss(model.task, Tensor(yhat.data), ds.y).data)
        if go is None:
            return loss, float("nan")
        return loss, float(np.mean(open_gate_count(go.mu, model.gate.sigma).data))


def eval_loss(model: Model, ds: Dataset) -> float:
    return evaluate(model, ds)[0]


def eval_risk(model: Model, ds: Dataset, lam: float) -> float:
    """Full-dataset risk with eval-mode gates: loss + lam * mean expected open gates."""
    loss, open_gates = evaluate(model, ds)
    return loss + lam * open_gates if model.gated and lam > 0 else loss


def fit(model: Model, ds_train: Dataset, ds_val: Dataset | None, cfg: TrainConfig,
        shuffle_rng=None, noise_rng=None) -> TrainResult:
    """Minibatch training with early stopping on validation loss (or risk).

    Each step samples gate noise, masks the inputs, evaluates
    ``loss + lam * mean_rows(sum_d Phi(mu_d / sigma))`` and takes one
    optimizer step on every parameter with ``requires_grad``.  The parameters
    from the epoch with the best monitored validation score are restored at
    the end.  History records the end-of-epoch training risk with eval-mode
    gates; the noisy mean of the minibatch risks is kept as ``batch_risk``.
    """
    _, default_shuffle, default_noise = seed_streams(cfg.seed)
    shuffle_rng = shuffle_rng or default_shuffle
    noise_rng = noise_rng or default_noise
    ds_val = ds_val if ds_val is not None and len(ds_val) else ds_train

    if model.method == "lasso":
        lasso = lasso_fit(model.inputs(ds_train.x, ds_train.z), ds_train.y, cfg.lam,
                          model.task, cfg.lasso_iters)
        model.lasso = lasso
        val = eval_loss(model, ds_val)
        history = [{"epoch": 1, "train_risk": lasso.objective[-1], "val_metric": val,
                    "expected_open_gates": float(np.count_nonzero(lasso.coef[:model.n_features]))}]
        return TrainResult(model, cfg, history, 1, _final_metrics(model, ds_val, val), val)

    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.eta)
    n = len(ds_train)
    bs = min(cfg.batch_size, n)
    best_score = best_val = math.inf
    best_epoch, best_state, stale = 0, None, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        risks = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            yhat, go = model.forward(ds_train.x[idx], ds_train.z[idx], "train", noise_rng)
            loss = task_loss(model.task, yhat, ds_train.y[idx])
            if go is not None and cfg.lam > 0:
                risk = empirical_risk(loss, open_gate_count(go.mu, model.gate.sigma), cfg.lam)
            else:
                risk = loss
            value = float(risk.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite risk {value} at epoch {epoch}", epoch, value)
            T.zero_grad(params)
            T.backward(risk)
            opt.step()
            risks.append(value)
        val, open_gates = evaluate(model, ds_val)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss {val} at epoch {epoch}", epoch, val)
        train_loss, train_open = evaluate(model, ds_train)
        train_risk = train_loss + cfg.lam * train_open if model.gated and cfg.lam > 0 else train_loss
        history.append({"epoch": epoch, "train_risk": train_risk,
                        "val_metric": val, "expected_open_gates": open_gates,
                        "batch_risk": float(np.mean(risks))})
        score = val + cfg.lam * open_gates if cfg.monitor == "risk" and model.gated else val
        if score < best_score:
            best_score, best_val, best_epoch, stale = score, val, epoch, 0
            best_state = [p.data.copy() for p in params]
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        for p, saved in zip(params, best_state):
            p.data[...] = saved
    return TrainResult(model, cfg, history, best_epoch, _final_metrics(model, ds_val, best_val),
                       best_score)


def _final_metrics(model: Model, ds_val: Dataset, val_loss: float) -> dict:
    name, value = task_metric(model.task, model.predict(ds_val.x, ds_val.z), ds_val.y)
    out = {"val_loss": val_loss, name: value}
    if model.gate is not None:
        out["expected_open_gates"] = model.mean_open_gates(ds_val.z)
    return out


def restart_streams(seed: int, restart: int):
    """Seed streams for one restart; restart 0 reuses ``seed_streams(seed)``."""
    if restart == 0:
        return seed_streams(seed)
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, restart]).spawn(3)]


def train(ds_train: Dataset, ds_val: Dataset | None, cfg: TrainConfig) -> TrainResult:
    """Build and fit a model; with ``cfg.restarts > 1`` keep the restart with
    the lowest monitored validation score."""
    if cfg.loss is not None and cfg.loss != ds_train.task:
        raise ConfigError(f"config loss {cfg.loss!r} does not match dataset task {ds_train.task!r}")
    best = None
    n_runs = 1 if cfg.method == "lasso" else cfg.restarts
    for restart in range(n_runs):
        init_rng, shuffle_rng, noise_rng = restart_streams(cfg.seed, restart)
        model = build_model(cfg, ds_train.n_features, ds_train.context_dim, ds_train.task, init_rng)
        with np.errstate(over="ignore", invalid="ignore"):
            result = fit(model, ds_train, ds_val, cfg, shuffle_rng, noise_rng)
        if n_runs > 1:
            logger.info("restart %d: score %.5f at epoch %d", restart, result.score, result.best_epoch)
        if best is None or result.score < best.score:
            best = result
    return best


# -- cross-validation -------------------------------------------------------------


@dataclass
class FoldOutcome:
    fold: int
    metric: float
    result: TrainResult
    test_idx: np.ndarray


@dataclass
class CVResult:
    metric_name: str
    per_fold: list[float]
    folds: list[FoldOutcome]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold))

    @property
    def std(self) -> float:
        return float(np.std(self.per_fold))


def _run_fold(ds, cfg, fold, test_idx, val_fraction):
    train_idx = complement(len(ds), test_idx)
    pool = ds.subset(train_idx)
    tr, va, _ = split(pool, SplitPlan(seed=cfg.seed + 1000 * (fold + 1),
                                      fractions=(1.0 - val_fraction, val_fraction, 0.0)))
    fold_cfg = replace(cfg, seed=cfg.seed + fold)
    try:
        result = train(pool.subset(tr), pool.subset(va), fold_cfg)
    except TrainingError as exc:
        raise TrainingError(f"fold {fold}: {exc}", exc.epoch, exc.risk) from exc
    test = ds.subset(test_idx)
    name, value = task_metric(result.model.task, result.model.predict(test.x, test.z), test.y)
    return FoldOutcome(fold, value, result, test_idx)


def _map(fn, arglists, jobs):
    if jobs <= 1:
        return [fn(*a) for a in arglists]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *a) for a in arglists]
        return [f.result() for f in futures]


def cross_validate(ds: Dataset, cfg: TrainConfig, folds: int = 5, val_fraction: float = 0.15,
                   jobs: int = 1) -> CVResult:
    """K-fold evaluation; each fold's complement is split again for early stopping."""
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    parts = split(ds, SplitPlan(seed=cfg.seed, folds=folds))
    outcomes = _map(_run_fold, [(ds, cfg, f, idx, val_fraction) for f, idx in enumerate(parts)], jobs)
    name = "accuracy" if (cfg.loss or ds.task) == "bce" else "r2"
    return CVResult(name, [o.metric for o in outcomes], outcomes)


# -- grid search ------------------------------------------------------------------

GRID_ETAS = (1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4, 1e-4)
GRID_LAMBDAS = (1.0, 5e-1, 1e-1, 5e-2, 1e-2, 5e-3, 1e-3)


@dataclass
class GridResult:
    best_config: TrainConfig
    best_result: TrainResult | None
    table: list[dict]


def _run_cell(ds_train, ds_val, cfg):
    try:
        res = train(ds_train, ds_val, cfg)
    except TrainingError as exc:
        return None, {"eta": cfg.eta, "lambda": cfg.lam, "val_metric": float("nan"),
                      "expected_open_gates": float("nan"), "val_risk": float("nan"),
                      "status": f"diverged: {exc}"}
    open_gates = res.metrics.get("expected_open_gates", float("nan"))
    val_risk = res.metrics["val_loss"] + (cfg.lam * open_gates if res.model.gated else 0.0)
    return res, {"eta": cfg.eta, "lambda": cfg.lam, "val_metric": res.metrics["val_loss"],
                 "expected_open_gates": open_gates, "val_risk": val_risk, "status": "ok"}


def grid_search(ds_train: Dataset, ds_val: Dataset, base_cfg: TrainConfig,
                etas=GRID_ETAS, lambdas=GRID_LAMBDAS, jobs: int = 1) -> GridResult:
    """Train every (eta, lambda) cell; pick the lowest validation loss.

    Ties go to the larger lambda.  Raises :class:`TrainingError` (with the
    table attached as ``.table``) when every cell diverges.
    """
    etas, lambdas = list(etas), list(lambdas)
    if not etas or not lambdas:
        raise ConfigError("grid search needs nonempty eta and lambda grids")
    cells = [replace(base_cfg, eta=e, lam=l) for e in etas for l in lambdas]
    outcomes = _map(_run_cell, [(ds_train, ds_val, c) for c in cells], jobs)
    table = [row for _, row in outcomes]
    best = None
    for i, (res, row) in enumerate(outcomes):
        if res is None:
            continue
        if best is None:
            best = i
            continue
        cur, inc = row["val_metric"], table[best]["val_metric"]
        if cur < inc - 1e-12 or (abs(cur - inc) <= 1e-12 and row["lambda"] > table[best]["lambda"]):
            best = i
    if best is None:
        err = TrainingError("every grid cell diverged")
        err.table = table
        raise err
    return GridResult(cells[best], outcomes[best][0], table)
