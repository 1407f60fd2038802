import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cstg import tensor as T
from cstg.errors import ConfigError, DimensionError
from cstg.gates import (GateModel, GateOutput, apply_gates, build_gate_model, expected_open_gates,
                        gate_forward, gate_model_from_json, gate_model_to_json, gate_rows,
                        open_gate_count, read_gates_csv, select_features, write_gates_csv)
from cstg.networks import Layer, Mlp
from cstg.tensor import Tensor

from conftest import central_diff


def global_model(mu, sigma=0.5):
    return GateModel("global_stg", sigma, len(mu), 0, global_mu=Tensor(mu, requires_grad=True))


def fixed_hyper_model(mu_row, sigma=0.5):
    """c-STG whose hypernetwork ignores z and returns ``mu_row``, via logit biases."""
    mu_row = np.asarray(mu_row, dtype=np.float64)
    bias = np.log(mu_row / (1 - mu_row))
    hyper = Mlp(1, [Layer(Tensor(np.zeros((mu_row.size, 1))), Tensor(bias), "sigmoid")])
    return GateModel("cstg", sigma, mu_row.size, 1, hyper=hyper)


def test_eval_gate_equals_clamped_mean():
    gm = fixed_hyper_model([0.5, 0.9])
    go = gate_forward(gm, Tensor([[0.0]]), "eval")
    np.testing.assert_allclose(go.gate.data, [[0.5, 0.9]])
    assert go.weight is None


def test_train_gate_with_forced_noise_clamps_high():
    gm = fixed_hyper_model([0.5])
    go = gate_forward(gm, Tensor([[0.0]]), "train", noise=np.array([[0.7]]))
    assert go.gate.data[0, 0] == 1.0


def test_global_stg_eval_clamps_low():
    go = gate_forward(global_model([-0.2, 0.3]), Tensor(np.zeros((1, 2))), "eval")
    np.testing.assert_allclose(go.gate.data, [[0.0, 0.3]])


def test_train_mode_needs_rng_and_samples_noise():
    gm = fixed_hyper_model([0.5, 0.5, 0.5])
    with pytest.raises(ConfigError):
        gate_forward(gm, Tensor(np.zeros((2, 1))), "train")
    rng = np.random.default_rng(0)
    go = gate_forward(gm, Tensor(np.zeros((4000, 1))), "train", rng)
    g = go.gate.data
    assert np.all((g >= 0) & (g <= 1))
    # P(gate == 0) = Phi(-mu/sigma) = Phi(-1)
    assert abs(np.mean(g == 0) - 0.158655) < 0.01


def test_context_width_mismatch():
    gm = build_gate_model("cstg", 4, 3, seed=0)
    with pytest.raises(DimensionError):
        gate_forward(gm, Tensor(np.zeros((2, 2))))


def test_apply_gates_examples():
    x = Tensor([[2.0, 3.0]])
    np.testing.assert_array_equal(apply_gates(x, GateOutput(None, Tensor([[1.0, 0.0]]))).data, [[2, 0]])
    go = GateOutput(None, Tensor([[1.0, 1.0]]), Tensor([[0.5, -1.0]]))
    np.testing.assert_array_equal(apply_gates(x, go).data, [[1, -3]])
    np.testing.assert_array_equal(apply_gates(x, GateOutput(None, Tensor([[1.0, 1.0]]))).data, x.data)
    with pytest.raises(DimensionError):
        apply_gates(Tensor([[1.0, 2.0, 3.0]]), GateOutput(None, Tensor([[1.0, 1.0]])))


def phi_by_quadrature(x):
    val, _ = integrate.quad(lambda t: np.exp(-t * t / 2) / np.sqrt(2 * np.pi), -np.inf, x,
                            epsabs=1e-13)
    return val


def test_expected_open_gates_examples():
    assert open_gate_count(Tensor([[0.0, 0.0, 0.0]]), 0.3).data[0] == 1.5
    assert abs(open_gate_count(Tensor([[0.5, 0.5]]), 0.5).data[0] - 2 * phi_by_quadrature(1.0)) < 1e-9
    assert abs(open_gate_count(Tensor([[0.5, 0.5]]), 0.5).data[0] - 1.682689) < 1e-6
    assert abs(open_gate_count(Tensor([[10.0]]), 0.5).data[0] - 1.0) < 1e-12
    gm = global_model([0.0, 0.0, 0.0])
    np.testing.assert_allclose(expected_open_gates(gm, Tensor(np.zeros((2, 1)))).data, [1.5, 1.5])


def test_expected_open_gates_gradient_is_scaled_pdf(rng):
    mu = Tensor(rng.uniform(-1.5, 1.5, (3, 4)), requires_grad=True)
    sigma = 0.7
    T.backward(T.tsum(open_gate_count(mu, sigma)))
    analytic = np.exp(-0.5 * (mu.data / sigma) ** 2) / np.sqrt(2 * np.pi) / sigma
    (fd,) = central_diff(lambda: open_gate_count(Tensor(mu.data), sigma).data.sum(), [mu.data])
    np.testing.assert_allclose(mu.grad, analytic, atol=1e-12)
    assert np.max(np.abs(mu.grad - fd)) < 1e-5


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.integers(0, 5), st.floats(0.0, 1.0))
def test_expected_open_gates_monotone_in_mu(mu, d, bump):
    d = d % len(mu)
    base = open_gate_count(Tensor([mu]), 0.5).data[0]
    raised = list(mu)
    raised[d] += bump
    assert open_gate_count(Tensor([raised]), 0.5).data[0] >= base


def test_select_features():
    chosen, gate = select_features(fixed_hyper_model([0.9, 0.1, 0.6]), Tensor([[0.0]]), 0.5)
    assert chosen == {0, 2}
    assert gate.shape == (3,)
    for tau in (0.0, 0.3, 1.0):
        assert select_features(global_model([0.0, 0.0]), Tensor([[1.0]]), tau)[0] == set()
    with pytest.raises(ConfigError):
        select_features(global_model([0.0]), Tensor([[1.0]]), 1.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["global_stg", "cstg", "weighted_cstg"]))
def test_gates_in_unit_interval_both_modes(seed, kind):
    rng = np.random.default_rng(seed)
    gm = build_gate_model(kind, 5, 3, [(4, "relu")], seed=rng)
    z = Tensor(rng.normal(size=(6, 3)) * 3)
    for mode in ("train", "eval"):
        g = gate_forward(gm, z, mode, rng).gate.data
        assert g.shape == (6, 5) and np.all((g >= 0) & (g <= 1))
    a = gate_forward(gm, z, "eval").gate.data
    b = gate_forward(gm, z, "eval").gate.data
    assert a.tobytes() == b.tobytes()


def test_global_gates_identical_across_contexts():
    gm = build_gate_model("global_stg", 4, 2, seed=0)
    g = gate_forward(gm, Tensor(np.random.default_rng(0).normal(size=(5, 2)))).gate.data
    assert np.all(g == g[0])


def test_weight_head_shapes_and_penultimate_input():
    gm = build_gate_model("weighted_cstg", 6, 3, [(8, "relu"), (4, "sigmoid")], seed=0)
    assert gm.weight_W.shape == (6, 4)
    flat = build_gate_model("weighted_cstg", 6, 3, [], seed=0)
    assert flat.weight_W.shape == (6, 3)
    z = Tensor(np.eye(3))
    go = gate_forward(flat, z)
    np.testing.assert_allclose(go.weight.data, z.data @ flat.weight_W.data.T + flat.weight_b.data)


def test_weighted_with_unit_head_matches_plain_cstg():
    rng = np.random.default_rng(5)
    plain = build_gate_model("cstg", 5, 3, [(7, "relu")], seed=1)
    weighted = build_gate_model("weighted_cstg", 5, 3, [(7, "relu")], seed=1)
    weighted.weight_W = Tensor(np.zeros_like(weighted.weight_W.data))
    weighted.weight_b = Tensor(np.ones(5))
    z = Tensor(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(4, 5)))
    noise = rng.normal(0, 0.5, (4, 5))
    a = apply_gates(x, gate_forward(plain, z, "train", noise=noise))
    b = apply_gates(x, gate_forward(weighted, z, "train", noise=noise))
    assert a.data.tobytes() == b.data.tobytes()


def test_hypernetwork_gets_sigmoid_projection():
    gm = build_gate_model("cstg", 20, 3, [(100, "relu"), (10, "sigmoid")], seed=0)
    assert [l.weight.shape[0] for l in gm.hyper.layers] == [100, 10, 20]
    assert gm.hyper.layers[-1].activation == "sigmoid"
    with pytest.raises(ConfigError):
        build_gate_model("cstg", 4, 3, [(4, "relu")])


def test_gate_model_json_round_trip():
    for kind in ("global_stg", "cstg", "weighted_cstg"):
        gm = build_gate_model(kind, 4, 2, [(3, "relu")], sigma=0.4, seed=2)
        back = gate_model_from_json(gate_model_to_json(gm))
        z = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
        a, b = gate_forward(gm, z), gate_forward(back, z)
        assert a.gate.data.tobytes() == b.gate.data.tobytes()
        assert back.sigma == 0.4 and back.kind == kind


def test_gates_csv_round_trip():
    gm = build_gate_model("weighted_cstg", 3, 2, seed=4)
    rows = gate_rows(gm, [[1.0, 0.0], [0.25, 0.75]], tau=0.5)
    text = write_gates_csv(rows)
    header = text.splitlines()[0]
    assert header == "context_id,z_0,z_1,feature,mu,gate,weight,selected"
    assert len(text.splitlines()) == 1 + 2 * 3
    assert read_gates_csv(io.StringIO(text)) == rows
    plain = gate_rows(build_gate_model("cstg", 3, 2, seed=4), [[1.0, 0.0]])
    assert read_gates_csv(io.StringIO(write_gates_csv(plain))) == plain
