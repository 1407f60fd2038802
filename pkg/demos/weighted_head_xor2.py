"""Weighted conditional gates on XOR2.

XOR2 mixes two features with context-dependent coefficients.  The plain
conditional model shares one linear predictor across contexts and can only
rescale inputs through gates in [0, 1]; the weighted variant adds a per-context
weight on every feature and recovers the coefficients themselves.
"""

import numpy as np

from cstg import TrainConfig, gen_xor2, train
from cstg.data import SplitPlan, split
from cstg.report import gate_summary

ds = gen_xor2(1000, seed=0)
tr, va, te = split(ds, SplitPlan(seed=0, fractions=(0.7, 0.15, 0.15)))

np.set_printoptions(precision=2, suppress=True)
for method in ("cstg", "weighted_cstg"):
    cfg = TrainConfig(method=method, eta=5e-2, lam=1e-2, optimizer="adam", monitor="risk",
                      pred_arch=[(1, "relu")], max_epochs=3000, patience=50, seed=0)
    res = train(ds.subset(tr), ds.subset(va), cfg)
    test = ds.subset(te)
    yhat = res.model.predict(test.x, test.z)
    r2 = 1 - np.mean((yhat - test.y) ** 2) / np.var(test.y)
    summary = gate_summary(res.model.gate, np.eye(4))
    print(f"{method}: test R2 {r2:.4f}")
    for c in range(4):
        line = f"  z={c} gates {summary.gates[c, :4]}"
        if summary.weights is not None:
            line += f"  weights {summary.weights[c, :4]}"
        print(line)
