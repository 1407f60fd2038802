"""Preset pipelines: load a dataset, train or cross-validate, summarize gates, write run dirs."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (GENERATORS, Dataset, SplitPlan, load_cache, load_csv, load_idx,
                   make_rotating_mnist, split)
from .errors import ConfigError, DataError
from .gates import save_gate_model, write_gates_csv
from .networks import save_mlp
from .presets import EXPERIMENTS, Preset, get_preset
from .report import (GateSummary, gate_summary, metrics_document, task_metric,
                     theorem34_experiment, write_history, write_json, write_plot_data)
from .training import GRID_ETAS, GRID_LAMBDAS, TrainConfig, TrainResult, cross_validate, grid_search, train

DATA_DIR_ENV = "CSTG_DATA_DIR"


def data_root() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV) or ".")


def resolve_data_path(path) -> Path:
    """Relative paths that do not exist under the cwd are looked up under the data root."""
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    return data_root() / p


def rotating_mnist(images_path, labels_path, n_source: int | None = 2000, digits=(4, 9),
                   seed: int = 0) -> Dataset:
    images, labels = load_idx(images_path, labels_path)
    keep = np.flatnonzero(np.isin(labels, digits))
    if n_source is not None:
        keep = keep[:n_source]
    return make_rotating_mnist(images[keep], labels[keep], digits, seed)


def load_dataset(desc: dict, seed: int = 0) -> Dataset:
    """Build a dataset from a descriptor (generator, cache, csv or idx pair)."""
    if "generator" in desc:
        name = desc["generator"]
        if name not in GENERATORS:
            raise ConfigError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
        kwargs = {"seed": desc.get("seed", seed)}
        if desc.get("n") is not None:
            kwargs["n"] = desc["n"]
        return GENERATORS[name](**kwargs)
    if "cache" in desc:
        return load_cache(resolve_data_path(desc["cache"]), desc.get("task"))
    if "csv" in desc:
        return load_csv(resolve_data_path(desc["csv"]), desc.get("context_columns", []),
                        desc["target"], desc["task"], desc.get("categorical", []))
    if "idx_images" in desc:
        return rotating_mnist(resolve_data_path(desc["idx_images"]),
                              resolve_data_path(desc["idx_labels"]),
                              desc.get("n_source", 2000), tuple(desc.get("digits", (4, 9))),
                              desc.get("seed", seed))
    raise ConfigError("dataset needs one of: generator, cache, csv, idx_images")


def context_grid(ds: Dataset) -> np.ndarray:
    """The identity when contexts are one-hot codes, otherwise the distinct context rows."""
    z = ds.z
    if z.shape[1] and np.all((z == 0) | (z == 1)) and np.all(z.sum(axis=1) == 1):
        return np.eye(z.shape[1])
    return ds.unique_contexts()


@dataclass
class RunOutcome:
    name: str
    config: TrainConfig
    metric_name: str
    per_fold: list[float]
    results: list[TrainResult]
    summaries: list[GateSummary | None]
    folds: int | None = None
    protocol: dict = field(default_factory=dict)
    feature_names: list[str] | None = None
    context_names: list[str] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold))

    @property
    def std(self) -> float | None:
        return float(np.std(self.per_fold)) if self.folds else None


def run_experiment(ds: Dataset, cfg: TrainConfig, name: str = "run", folds: int | None = 5,
                   fractions=(0.7, 0.15, 0.15), val_fraction: float = 0.15, tau: float = 0.5,
                   jobs: int = 1) -> RunOutcome:
    """K-fold CV when ``folds`` is set, else one train/val/test split scored on test."""
    if folds:
        cv = cross_validate(ds, cfg, folds, val_fraction, jobs)
        metric_name, per_fold = cv.metric_name, cv.per_fold
        results = [f.result for f in cv.folds]
        protocol = {"folds": folds, "val_fraction": val_fraction}
    else:
        tr, va, te = split(ds, SplitPlan(seed=cfg.seed, fractions=tuple(fractions)))
        res = train(ds.subset(tr), ds.subset(va), cfg)
        test = ds.subset(te)
        metric_name, value = task_metric(res.model.task, res.model.predict(test.x, test.z), test.y)
        per_fold, results = [value], [res]
        protocol = {"fractions": list(fractions)}
    contexts = context_grid(ds)
    summaries = [gate_summary(r.model.gate, contexts, tau, ds.n_features, ds.feature_names)
                 if r.model.gated else None for r in results]
    return RunOutcome(name, cfg, metric_name, per_fold, results, summaries, folds, protocol,
                      ds.feature_names, ds.context_names)


def preset_dataset(preset: Preset, seed: int, images=None, labels=None,
                   n_source: int | None = 2000) -> Dataset:
    if preset.dataset == "rot-mnist":
        if not (images and labels):
            raise ConfigError("rotating MNIST needs --images and --labels IDX paths")
        return rotating_mnist(images, labels, n_source, seed=seed)
    return load_dataset({"generator": preset.dataset, "n": preset.n}, seed)


def run_preset(preset: Preset | str, seed: int | None = None, jobs: int = 1, tau: float = 0.5,
               images=None, labels=None, n_source: int | None = 2000, grid: bool = False,
               ds: Dataset | None = None) -> RunOutcome:
    preset = get_preset(preset, seed) if isinstance(preset, str) else preset
    if seed is not None:
        preset = replace(preset, config=replace(preset.config, seed=seed))
    cfg = replace(preset.config, tau=tau)
    if ds is None:
        ds = preset_dataset(preset, cfg.seed, images, labels, n_source)
    table = None
    if grid:
        tr, va, _ = split(ds, SplitPlan(seed=cfg.seed, fractions=preset.fractions))
        found = grid_search(ds.subset(tr), ds.subset(va), cfg, GRID_ETAS, GRID_LAMBDAS, jobs)
        cfg, table = found.best_config, found.table
    out = run_experiment(ds, cfg, preset.name, preset.folds, preset.fractions,
                         preset.val_fraction, tau, jobs)
    if table is not None:
        out.protocol["grid"] = table
    return out


# -- reporting --------------------------------------------------------------------


def selected_lists(summary: GateSummary) -> list[list[int]]:
    return [sorted(s) for s in summary.selected]


def metrics_for(outcome: RunOutcome) -> dict:
    extra = {"name": outcome.name, "method": outcome.config.method,
             "best_epoch": [r.best_epoch for r in outcome.results]}
    summaries = [s for s in outcome.summaries if s is not None]
    if summaries:
        extra["selected"] = [selected_lists(s) for s in summaries]
        extra["selected_counts"] = [s.counts for s in summaries]
        extra["mean_count"] = [s.mean_count for s in summaries]
        extra["union_count"] = [s.union_count for s in summaries]
        extra["expected_open_gates"] = [r.metrics.get("expected_open_gates") for r in outcome.results]
    return metrics_document(outcome.metric_name, outcome.mean, outcome.std, outcome.per_fold, **extra)


def write_run(outcome: RunOutcome, out_dir) -> Path:
    """config.json and metrics.json at the top; per-model artifacts in the run dir
    (single split) or in ``fold-<k>`` subdirectories."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json({**outcome.config.to_json(), **{k: v for k, v in outcome.protocol.items()
                                                if k != "grid"}}, out / "config.json")
    write_json(metrics_for(outcome), out / "metrics.json")
    if "grid" in outcome.protocol:
        write_json(outcome.protocol["grid"], out / "grid.json")
    for k, (res, summary) in enumerate(zip(outcome.results, outcome.summaries)):
        target = out / f"fold-{k}" if outcome.folds else out
        target.mkdir(exist_ok=True)
        write_model_files(res, summary, target)
    first = outcome.summaries[0]
    if first is not None:
        write_plot_data(first, out / "plot_gates.csv", context_names=outcome.context_names)
    return out


def write_model_files(res: TrainResult, summary: GateSummary | None, target: Path) -> None:
    write_history(res.history, target / "history.csv")
    model = res.model
    if model.lasso is not None:
        write_json({"coef": model.lasso.coef.tolist(), "intercept": model.lasso.intercept,
                    "task": model.lasso.task}, target / "lasso.json")
    if model.predictor is not None:
        save_mlp(model.predictor, target / "predictor.json")
    if model.gate is not None:
        save_gate_model(model.gate, target / "gate_model.json")
        with open(target / "gates.csv", "w", newline="") as fh:
            write_gates_csv(summary.rows, fh)


def format_row(outcome: RunOutcome) -> str:
    value = f"{outcome.mean:.4f}" if outcome.metric_name == "r2" else f"{outcome.mean:.2f}"
    if outcome.std is not None:
        value += f" ({outcome.std:.4f})" if outcome.metric_name == "r2" else f" ({outcome.std:.2f})"
    line = f"{outcome.name:<22} {outcome.metric_name:<9} {value}"
    summaries = [s for s in outcome.summaries if s is not None]
    if summaries:
        mean_count = np.mean([s.mean_count for s in summaries])
        union = np.mean([s.union_count for s in summaries])
        line += f"   features/context {mean_count:.2f}  union {union:.2f}"
    return line


def format_selection(outcome: RunOutcome) -> list[str]:
    lines = []
    for k, s in enumerate(outcome.summaries):
        if s is None:
            continue
        label = f"fold {k}" if outcome.folds else "test split"
        sets = "  ".join(f"z{i}:{{{','.join(map(str, sel))}}}" for i, sel in enumerate(selected_lists(s)))
        lines.append(f"  {label}: {sets}")
    return lines


def reproduce(experiment: str, out_dir=None, seed: int = 0, jobs: int = 1, tau: float = 0.5,
              images=None, labels=None, n_source: int | None = 2000, grid: bool = False,
              echo=print) -> dict:
    """Run the named experiment's presets (or the mean-gate check) and write results."""
    if experiment == "theorem34":
        return reproduce_mean_gates(out_dir, seed, echo=echo)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from "
                          f"{', '.join([*EXPERIMENTS, 'theorem34'])}")
    outcomes = {}
    ds = None
    for name in EXPERIMENTS[experiment]:
        preset = get_preset(name, seed)
        if ds is None:
            ds = preset_dataset(preset, seed, images, labels, n_source)
        outcome = run_preset(preset, jobs=jobs, tau=tau, grid=grid, ds=ds)
        outcomes[name] = outcome
        echo(format_row(outcome))
        for line in format_selection(outcome):
            echo(line)
        if out_dir is not None:
            write_run(outcome, Path(out_dir) / name)
    return outcomes


def reproduce_mean_gates(out_dir=None, seed: int = 0, n_seeds: int = 5, echo=print) -> dict:
    runs = [theorem34_experiment(seed + k) for k in range(n_seeds)]
    gaps = [r["max_abs_gap"] for r in runs]
    for k, r in enumerate(runs):
        echo(f"seed {seed + k}: mu_stg={np.round(np.clip(r['mu_stg'], 0, 1), 3).tolist()} "
             f"mean_mu_cstg={np.round(r['mean_mu_cstg'], 3).tolist()} max_abs_gap={r['max_abs_gap']:.4f}")
    echo(f"max_abs_gap mean over {n_seeds} seeds: {np.mean(gaps):.4f}")
    doc = {"seeds": [seed + k for k in range(n_seeds)], "max_abs_gap": gaps,
           "mean_max_abs_gap": float(np.mean(gaps)),
           "mu_stg": [r["mu_stg"].tolist() for r in runs],
           "mean_mu_cstg": [r["mean_mu_cstg"].tolist() for r in runs]}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(doc, Path(out_dir) / "theorem34.json")
    return doc


def load_contexts(path) -> np.ndarray:
    """Context rows from a CSV file; a non-numeric first line is treated as a header."""
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                if i == 0:
                    continue
                raise DataError(f"{path}: line {i + 1} is not numeric") from None
    if not rows:
        raise ConfigError(f"{path}: no context rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{path}: context rows have differing widths {sorted(widths)}")
    return np.array(rows)


def describe_dataset(ds: Dataset) -> str:
    return (f"{len(ds)} rows x {ds.n_features + ds.context_dim + 1} columns "
            f"({ds.n_features} features, {ds.context_dim} context, 1 target; task {ds.task})")
