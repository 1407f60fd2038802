import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cstg import tensor as T
from cstg.errors import ConfigError, DataError
from cstg.gates import GateModel, expected_open_gates
from cstg.objective import empirical_risk, lasso_fit, task_loss
from cstg.tensor import Tensor


def test_task_loss_examples():
    assert task_loss("mse", Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert task_loss("mse", Tensor([0.0, 2.0]), [0.0, 0.0]).item() == 2.0
    assert abs(task_loss("bce", Tensor([0.5]), [1.0]).item() - np.log(2)) < 1e-12


def test_task_loss_errors():
    with pytest.raises(DataError):
        task_loss("bce", Tensor([0.5]), [2.0])
    with pytest.raises(ConfigError):
        task_loss("hinge", Tensor([0.5]), [1.0])


def test_bce_stays_finite_at_saturated_predictions():
    loss = task_loss("bce", Tensor([0.0, 1.0]), [1.0, 0.0]).item()
    assert np.isfinite(loss) and loss > 20


def test_empirical_risk_examples():
    loss = Tensor(1.0)
    assert empirical_risk(loss, Tensor([5.0, 7.0]), 0.0).item() == 1.0
    assert empirical_risk(loss, Tensor([2.0, 4.0]), 0.5).item() == 2.5
    gm = GateModel("global_stg", 0.5, 25, 0, global_mu=Tensor(np.zeros(25)))
    reg = expected_open_gates(gm, Tensor(np.zeros((3, 1))))
    assert abs(empirical_risk(Tensor(0.0), reg, 0.1).item() - 1.25) < 1e-12


@settings(max_examples=30)
@given(st.floats(0, 10), st.floats(0, 5), st.floats(0, 5))
def test_risk_monotone_in_lambda(loss, reg, extra):
    lo = empirical_risk(Tensor(loss), Tensor([reg]), 0.1).item()
    hi = empirical_risk(Tensor(loss), Tensor([reg]), 0.1 + extra).item()
    assert hi >= lo


def test_lasso_full_shrinkage():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 4))
    y = rng.normal(size=50) + 3.0
    m = lasso_fit(X, y, 1e6)
    assert np.all(m.coef == 0)
    assert abs(m.intercept - y.mean()) < 1e-12


def test_lasso_unpenalized_matches_least_squares_oracle():
    rng = np.random.default_rng(1)
    X, _ = np.linalg.qr(rng.normal(size=(40, 5)))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + 0.7 + rng.normal(0, 0.1, 40)
    design = np.column_stack([X, np.ones(40)])
    oracle, *_ = np.linalg.lstsq(design, y, rcond=None)
    m = lasso_fit(X, y, 0.0, tol=1e-15)
    np.testing.assert_allclose(m.coef, oracle[:5], atol=1e-6)
    assert abs(m.intercept - oracle[5]) < 1e-6


def test_lasso_one_dimensional_soft_threshold():
    # mean((b x - y)^2) + 0.5|b| with x=[1,-1], y=[1,-1]: minimizer 1 - 0.5/2
    m = lasso_fit([[1.0], [-1.0]], [1.0, -1.0], 0.5)
    assert abs(m.coef[0] - 0.75) < 1e-8
    assert abs(m.intercept) < 1e-12


def test_lasso_objective_is_nonincreasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 10))
    y = X[:, 0] - 2 * X[:, 3] + rng.normal(0, 0.3, 80)
    for task, target in (("mse", y), ("bce", (y > 0).astype(float))):
        m = lasso_fit(X, target, 0.05, task=task, iters=500)
        assert np.all(np.diff(m.objective) <= 1e-12)


def test_lasso_classification_recovers_sign_pattern():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 6))
    y = (2 * X[:, 1] - 2 * X[:, 4] + rng.normal(0, 0.5, 400) > 0).astype(float)
    m = lasso_fit(X, y, 0.02, task="bce")
    assert m.coef[1] > 0 and m.coef[4] < 0
    assert np.all(np.abs(np.delete(m.coef, [1, 4])) < np.abs(m.coef[[1, 4]]).min())
    p = m.predict(X)
    assert np.all((p > 0) & (p < 1))


def test_lasso_errors():
    with pytest.raises(DataError):
        lasso_fit([[np.nan]], [1.0], 0.1)
    with pytest.raises(ConfigError):
        lasso_fit([[1.0]], [1.0], -1.0)
