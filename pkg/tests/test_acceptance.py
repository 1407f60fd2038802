"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line to the
terminal (also without ``-s``) before asserting.  Run only this suite with::

    pytest tests/test_acceptance.py -v

The rotating-MNIST check needs the IDX files named by CSTG_MNIST_IMAGES and
CSTG_MNIST_LABELS and is skipped otherwise.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cstg import tensor as T
from cstg.data import SplitPlan, gen_xor2, split
from cstg.experiments import preset_dataset, reproduce_mean_gates, run_preset, write_run
from cstg.gates import open_gate_count
from cstg.presets import get_preset
from cstg.tensor import Tensor
from cstg.training import grid_search, train

from conftest import central_diff

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return report


def selected(summary):
    return [set(np.flatnonzero(row > 0.5)) for row in summary.gates]


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


# -- reproduction targets ---------------------------------------------------------


def test_criterion_1_xor1_reproduction(verdict):
    truth = [{0, 1}, {1, 2}, {2, 3}]
    out, secs = timed(run_preset, "xor1-cstg", seed=0)
    exact = [sum(selected(s)[c] == truth[c] for s in out.summaries) for c in range(3)]
    ok = min(out.per_fold) >= 99.0 and min(exact) >= 4 and secs <= 300
    verdict(1, ok, f"fold accuracy {[round(a, 1) for a in out.per_fold]}, "
                   f"exact folds per context {exact}, {secs:.0f}s")
    assert min(out.per_fold) >= 99.0
    assert min(exact) >= 4
    assert secs <= 300


def test_criterion_2_xor2_reproduction(verdict):
    truth = [{0, 1}, {0, 1}, {2, 3}, {2, 3}]
    weighted, t1 = timed(run_preset, "xor2-weighted-cstg", seed=0)
    plain, t2 = timed(run_preset, "xor2-cstg", seed=0)
    sets_ok = all(selected(s) == truth for s in weighted.summaries)
    ok = weighted.mean >= 0.95 and plain.mean >= 0.80 and sets_ok and max(t1, t2) <= 300
    verdict(2, ok, f"weighted R2 {weighted.mean:.4f}, c-STG R2 {plain.mean:.4f}, "
                   f"weighted sets exact in every fold: {sets_ok}, {t1:.0f}s + {t2:.0f}s")
    assert weighted.mean >= 0.95 and plain.mean >= 0.80
    assert sets_ok
    assert max(t1, t2) <= 300


def test_criterion_3_xor3_support_recovery(verdict):
    out = run_preset("xor3-cstg", seed=0)
    gates = out.summaries[0].gates
    support = {0: [0, 1], 1: [2, 3]}
    off = np.delete(gates, [0, 1, 2, 3], axis=1)
    on = min(gates[c, support[c]].min() for c in support)
    ok = off.max() < 0.5 and on > 0.5
    verdict(3, ok, f"max non-support gate {off.max():.4f}, min support gate {on:.4f}")
    assert off.max() < 0.5 and on > 0.5


def test_criterion_4_xor4_variable_cardinality(verdict):
    out = run_preset("xor4-cstg", seed=0)
    counts = out.summaries[0].counts
    verdict(4, counts == [2, 4], f"selected counts per context {counts}")
    assert counts == [2, 4]


@pytest.mark.skipif(not (os.environ.get("CSTG_MNIST_IMAGES") and os.environ.get("CSTG_MNIST_LABELS")),
                    reason="set CSTG_MNIST_IMAGES and CSTG_MNIST_LABELS to IDX files")
def test_criterion_5_rotating_mnist(verdict):
    images, labels = os.environ["CSTG_MNIST_IMAGES"], os.environ["CSTG_MNIST_LABELS"]
    accs, secs = {}, 0.0
    for name in ("mnist-cstg", "mnist-weighted-cstg"):
        out, t = timed(run_preset, name, seed=0, images=images, labels=labels, n_source=2000)
        accs[name], secs = out.mean, secs + t
    ok = max(accs.values()) >= 97.0 and secs <= 3600
    verdict(5, ok, f"test accuracy {accs}, {secs:.0f}s")
    assert max(accs.values()) >= 97.0
    assert secs <= 3600


# -- theory checks ----------------------------------------------------------------


def best_val_risk(ds, preset, etas, lambdas, **overrides):
    tr, va, _ = split(ds, SplitPlan(seed=0, fractions=preset.fractions))
    cfg = replace(preset.config, seed=0, **overrides)
    found = grid_search(ds.subset(tr), ds.subset(va), cfg, etas, lambdas)
    return min(r["val_risk"] for r in found.table if r["status"] == "ok")


def test_criterion_6_conditional_risk_not_worse_than_global(verdict):
    # global STG keeps the c-STG predictor and inputs, only the gates lose z
    cases = {"xor1": ("xor1-cstg", [1e-2, 5e-3], [5e-3]),
             "xor2": ("xor2-cstg", [5e-2, 1e-2], [5e-2, 1e-2])}
    gaps = {}
    for name, (preset_name, etas, lambdas) in cases.items():
        preset = get_preset(preset_name, 0)
        ds = preset_dataset(preset, 0)
        conditional = best_val_risk(ds, preset, etas, lambdas)
        global_ = best_val_risk(ds, preset, etas, lambdas, method="global_stg", with_context=False)
        gaps[name] = conditional - global_
    ok = all(g <= 0.02 for g in gaps.values())
    verdict(6, ok, "c-STG minus global-STG best validation risk "
                   + ", ".join(f"{k} {v:+.4f}" for k, v in gaps.items()))
    assert ok


def test_criterion_7_mean_gate_relation(verdict):
    doc = reproduce_mean_gates(seed=0, n_seeds=5, echo=lambda _: None)
    mean_gap = doc["mean_max_abs_gap"]
    verdict(7, mean_gap < 0.15, f"max_abs_gap averaged over 5 seeds {mean_gap:.4f}")
    assert mean_gap < 0.15


# -- numerical checks -------------------------------------------------------------


class KinkNearby(Exception):
    pass


def _guard(x, kinks, margin=1e-3):
    if any(np.min(np.abs(x - k)) < margin for k in kinks):
        raise KinkNearby


UNARY = ["relu", "sigmoid", "clamp01", "clip", "log", "square", "normal_cdf", "scale",
         "sum_axis", "mean_axis", "reshape", "transpose"]
BINARY = ["add", "sub", "mul", "matmul", "add_row", "mul_row"]
OPS = UNARY + BINARY


def _apply(op, h, leaves, rng_vals):
    """One random layer; ``rng_vals`` is a fixed parameter draw so reruns match."""
    w, row, c = leaves["W"], leaves["r"], rng_vals["c"]
    rows, cols = h.shape
    if op == "relu":
        _guard(h.data, [0.0])
        return T.relu(h)
    if op == "sigmoid":
        return T.sigmoid(h)
    if op == "clamp01":
        _guard(h.data, [0.0, 1.0])
        return T.clamp01(h)
    if op == "clip":
        _guard(h.data, [-0.5, 0.5])
        return T.clip(h, -0.5, 0.5)
    if op == "log":
        return T.log(T.add(T.square(h), 0.5))
    if op == "square":
        return T.square(h)
    if op == "normal_cdf":
        return T.normal_cdf(h)
    if op == "scale":
        return T.scale(h, c)
    if op == "sum_axis":
        return T.reshape(T.tsum(h, axis=1), (rows, 1))
    if op == "mean_axis":
        return T.reshape(T.mean(h, axis=0), (1, cols))
    if op == "reshape":
        return T.reshape(T.reshape(h, (rows * cols,)), (cols, rows))
    if op == "transpose":
        return T.transpose(h)
    if op == "add":
        return T.add(h, T.scale(h, c))
    if op == "sub":
        return T.sub(T.sigmoid(h), h)
    if op == "mul":
        return T.mul(h, T.sigmoid(h))
    if op == "matmul":
        return T.matmul(h, w) if cols == w.shape[0] else T.matmul(h, T.transpose(h))
    if op == "add_row":
        return T.add(h, row) if cols == row.shape[0] else T.add(h, T.mean(row))
    if op == "mul_row":
        return T.mul(h, row) if cols == row.shape[0] else T.mul(h, T.mean(row))
    raise AssertionError(op)


def _random_graph(seed, first_op):
    rng = np.random.default_rng(seed)
    arrays = {"X": rng.normal(size=(3, 4)), "W": rng.normal(size=(4, 4)), "r": rng.normal(size=4)}
    ops = [first_op] + list(rng.choice(OPS, size=rng.integers(2, 6)))
    consts = [{"c": float(rng.uniform(-2, 2))} for _ in ops]

    def build(leaves):
        h = leaves["X"]
        for op, k in zip(ops, consts):
            h = _apply(op, h, leaves, k)
        weights = np.random.default_rng(seed + 1).normal(size=h.shape)
        return T.tsum(T.mul(h, weights))

    return arrays, build, ops


def test_criterion_8_autodiff_matches_finite_differences(verdict):
    worst, accepted, skipped, seen = 0.0, 0, 0, set()
    seed = 0
    while accepted < 100:
        arrays, build, ops = _random_graph(seed, OPS[seed % len(OPS)])
        seed += 1
        leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        try:
            loss = build(leaves)

            def value():
                with T.no_grad():
                    return float(build({k: Tensor(v) for k, v in arrays.items()}).data)

            numeric = central_diff(value, list(arrays.values()), h=1e-5)
        except KinkNearby:
            skipped += 1
            continue
        T.backward(loss)
        for leaf, num in zip(leaves.values(), numeric):
            ana = leaf.grad if leaf.grad is not None else np.zeros_like(num)
            scale = max(np.linalg.norm(ana), np.linalg.norm(num))
            if scale > 1e-8:
                worst = max(worst, float(np.linalg.norm(ana - num) / scale))
        accepted += 1
        seen.update(ops)
    covered = set(OPS) <= seen
    ok = worst < 1e-4 and covered
    verdict(8, ok, f"worst relative error {worst:.2e} over {accepted} graphs "
                   f"({skipped} kink-adjacent skipped), all {len(OPS)} ops covered: {covered}")
    assert covered
    assert worst < 1e-4


def test_criterion_9_regularizer_closed_form(verdict):
    rng = np.random.default_rng(9)
    worst_val = worst_grad = 0.0
    for _ in range(1000):
        rows, d = rng.integers(1, 4), rng.integers(1, 8)
        sigma = float(rng.uniform(0.05, 2.0))
        mu_np = rng.uniform(-3, 3, size=(rows, d))
        mu = Tensor(mu_np, requires_grad=True)
        per_row = open_gate_count(mu, sigma)
        oracle = [sum(0.5 * (1 + math.erf(m / (sigma * math.sqrt(2)))) for m in r) for r in mu_np]
        worst_val = max(worst_val, float(np.max(np.abs(per_row.data - oracle))))
        T.backward(T.tsum(per_row))
        pdf = np.vectorize(lambda m: math.exp(-0.5 * (m / sigma) ** 2) / math.sqrt(2 * math.pi) / sigma)
        worst_grad = max(worst_grad, float(np.max(np.abs(mu.grad - pdf(mu_np)))))
    ok = worst_val < 1e-7 and worst_grad < 1e-5
    verdict(9, ok, f"max value error {worst_val:.2e}, max gradient error {worst_grad:.2e} over 1000 draws")
    assert worst_val < 1e-7 and worst_grad < 1e-5


def test_criterion_10_preset_rerun_is_byte_identical(verdict, tmp_path):
    for run in ("a", "b"):
        write_run(run_preset("xor3-cstg", seed=3), tmp_path / run)
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("metrics.json", "gates.csv"))
    verdict(10, same, "xor3-cstg rerun metrics.json and gates.csv byte-identical" if same
            else "rerun files differ")
    assert same


def test_criterion_11_sparsity_falls_with_lambda(verdict):
    lambdas = [1e-3, 1e-2, 1e-1, 1.0]
    preset = get_preset("xor2-cstg")
    rhos = []
    for seed in range(5):
        ds = gen_xor2(preset.n, seed)
        tr, va, _ = split(ds, SplitPlan(seed=seed, fractions=preset.fractions))
        gates = [train(ds.subset(tr), ds.subset(va), replace(preset.config, lam=lam, seed=seed))
                 .metrics["expected_open_gates"] for lam in lambdas]
        rhos.append(float(stats.spearmanr(lambdas, gates).statistic))
    negative = sum(r < 0 for r in rhos)
    verdict(11, negative >= 4, f"Spearman rho per seed {[round(r, 3) for r in rhos]}")
    assert negative >= 4
