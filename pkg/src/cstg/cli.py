"""Command-line entry point: generate, train, gates, reproduce."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema

from . import experiments as ex
from .data import GENERATORS, save_cache
from .errors import ConfigError, DataError, DimensionError, FormatError, TrainingError, UndefinedMetricError
from .gates import gate_rows, load_gate_model, write_gates_csv
from .presets import EXPERIMENTS, PRESETS, get_preset
from .training import METHODS, OPTIMIZERS, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

_LAYER = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["out_dim"],
         "properties": {"out_dim": {"type": "integer", "minimum": 1},
                        "activation": {"enum": ["relu", "sigmoid", "none"]}}},
        {"type": "array", "minItems": 2, "maxItems": 2,
         "prefixItems": [{"type": "integer", "minimum": 1}, {"enum": ["relu", "sigmoid", "none"]}]},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "generator": {"enum": list(GENERATORS)},
                "n": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "cache": {"type": "string"},
                "csv": {"type": "string"},
                "context_columns": {"type": "array", "items": {"type": "string"}},
                "target": {"type": "string"},
                "categorical": {"type": "array", "items": {"type": "string"}},
                "task": {"enum": ["mse", "bce"]},
                "idx_images": {"type": "string"},
                "idx_labels": {"type": "string"},
                "n_source": {"type": "integer", "minimum": 1},
                "digits": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
            },
            "oneOf": [{"required": ["generator"]}, {"required": ["cache"]},
                      {"required": ["csv", "target", "task"]},
                      {"required": ["idx_images", "idx_labels"]}],
        },
        "method": {"enum": list(METHODS)},
        "with_context": {"type": "boolean"},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "lambda": {"type": "number", "minimum": 0},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "max_epochs": {"type": "integer", "minimum": 1},
        "patience": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "hyper_arch": {"type": "array", "items": _LAYER},
        "pred_arch": {"type": "array", "items": _LAYER},
        "tau": {"type": "number", "minimum": 0, "maximum": 1},
        "optimizer": {"enum": list(OPTIMIZERS)},
        "loss": {"enum": ["mse", "bce", None]},
        "monitor": {"enum": ["loss", "risk"]},
        "lasso_iters": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "folds": {"type": ["integer", "null"], "minimum": 2},
        "fractions": {"type": "array", "items": {"type": "number", "minimum": 0},
                      "minItems": 3, "maxItems": 3},
        "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "out": {"type": "string"},
    },
}

PROTOCOL_KEYS = ("dataset", "folds", "fractions", "val_fraction", "out")


def validate_config(doc) -> None:
    """Raise ConfigError naming the offending field path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {err.message}")


def _print_err(msg: str) -> None:
    print(f"cstg: error: {msg}", file=sys.stderr)


# -- commands ---------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.dataset == "rot-mnist":
        if not (args.images and args.labels):
            _print_err("generate rot-mnist needs --images and --labels")
            return EXIT_USAGE
        ds = ex.rotating_mnist(args.images, args.labels, args.n_source, seed=args.seed)
    else:
        ds = ex.load_dataset({"generator": args.dataset, "n": args.n}, args.seed)
    out = Path(args.out) if args.out else ex.data_root() / f"{args.dataset}-seed{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cache(ds, out)
    print(f"wrote {out}: {ex.describe_dataset(ds)}")
    return EXIT_OK


def _config_from_args(args):
    """(TrainConfig, dataset, protocol dict, run name) from --config or --preset."""
    if args.config:
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        validate_config(doc)
        cfg_doc = {k: v for k, v in doc.items() if k not in PROTOCOL_KEYS}
        if args.seed is not None:
            cfg_doc["seed"] = args.seed
        if args.tau is not None:
            cfg_doc["tau"] = args.tau
        cfg = TrainConfig.from_json(cfg_doc)
        ds = ex.load_dataset(doc["dataset"], cfg.seed)
        protocol = {"folds": doc.get("folds"), "fractions": tuple(doc.get("fractions", (0.7, 0.15, 0.15))),
                    "val_fraction": doc.get("val_fraction", 0.15)}
        return cfg, ds, protocol, Path(args.config).stem, doc.get("out")
    preset = get_preset(args.preset, args.seed)
    cfg = preset.config if args.tau is None else TrainConfig.from_json(
        {**preset.config.to_json(), "tau": args.tau})
    ds = ex.preset_dataset(preset, cfg.seed, args.images, args.labels)
    protocol = {"folds": preset.folds, "fractions": preset.fractions,
                "val_fraction": preset.val_fraction}
    return cfg, ds, protocol, preset.name, None


def cmd_train(args) -> int:
    cfg, ds, protocol, name, out_from_config = _config_from_args(args)
    out = Path(args.out or out_from_config or Path("runs") / name)
    start = time.perf_counter()
    outcome = ex.run_experiment(ds, cfg, name, protocol["folds"], protocol["fractions"],
                                protocol["val_fraction"], cfg.tau, args.jobs)
    ex.write_run(outcome, out)
    print(ex.format_row(outcome))
    for line in ex.format_selection(outcome):
        print(line)
    print(f"run directory: {out}  ({time.perf_counter() - start:.1f}s)")
    return EXIT_OK


def cmd_gates(args) -> int:
    path = Path(args.checkpoint)
    if path.is_dir():
        path = path / "gate_model.json"
    gm = load_gate_model(path)
    contexts = ex.load_contexts(args.contexts)
    rows = gate_rows(gm, contexts, args.tau if args.tau is not None else 0.5)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_gates_csv(rows, fh)
    else:
        sys.stdout.write(write_gates_csv(rows))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.experiment == "mnist" and not (args.images and args.labels):
        _print_err("reproduce mnist needs --images and --labels IDX paths")
        return EXIT_USAGE
    out = Path(args.out) if args.out else Path("runs") / args.experiment
    start = time.perf_counter()
    ex.reproduce(args.experiment, out, args.seed or 0, args.jobs,
                 args.tau if args.tau is not None else 0.5, args.images, args.labels,
                 args.n_source, args.grid)
    print(f"results in {out}  ({time.perf_counter() - start:.1f}s)")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cstg", description="Context-conditioned stochastic-gate feature selection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", help="output file or directory")

    def idx(p):
        p.add_argument("--images", help="IDX image file (rotating MNIST)")
        p.add_argument("--labels", help="IDX label file (rotating MNIST)")
        p.add_argument("--n-source", type=int, default=2000,
                       help="source images of the two digits to keep (default 2000)")

    g = sub.add_parser("generate", help="write a dataset CSV cache")
    g.add_argument("dataset", choices=[*GENERATORS, "rot-mnist"])
    g.add_argument("--n", type=int, help="number of samples")
    common(g, 0)
    idx(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train from a JSON config or a preset")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON run configuration")
    src.add_argument("--preset", choices=list(PRESETS))
    t.add_argument("--jobs", type=int, default=1, help="parallel folds (default 1)")
    t.add_argument("--tau", type=float, help="selection threshold")
    common(t)
    idx(t)
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("gates", help="evaluate gates of a trained checkpoint on context rows")
    q.add_argument("--checkpoint", required=True, help="gate_model.json or a run directory")
    q.add_argument("--contexts", required=True, help="CSV with one context vector per row")
    q.add_argument("--tau", type=float)
    q.add_argument("--out", help="write gates.csv here instead of stdout")
    q.set_defaults(func=cmd_gates)

    r = sub.add_parser("reproduce", help="run a benchmark experiment end to end")
    r.add_argument("experiment", choices=[*EXPERIMENTS, "theorem34"])
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--tau", type=float)
    r.add_argument("--grid", action="store_true", help="pick eta and lambda by the full grid search")
    common(r, 0)
    idx(r)
    r.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "tau", None) is not None and not 0.0 <= args.tau <= 1.0:
        _print_err(f"--tau must lie in [0, 1], got {args.tau}")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        _print_err(str(exc))
        return EXIT_USAGE
    except (TrainingError, UndefinedMetricError) as exc:
        _print_err(str(exc))
        return EXIT_RUNTIME
    except (FormatError, DataError, OSError) as exc:
        _print_err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
