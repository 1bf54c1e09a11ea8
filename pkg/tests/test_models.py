import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.data import Dataset
from fedsim.errors import DimensionMismatchError, EmptyClientDataError
from fedsim.models import (
    ModelSpec,
    batches,
    evaluate,
    forward,
    gradient_check,
    init_params,
    local_train,
    loss_and_gradient,
)
from fedsim.rng import Rng


def random_instance(rng, kind, activation="tanh", l2=None, max_dim=6):
    d, C = int(rng.integers(1, max_dim + 1)), int(rng.integers(2, max_dim + 1))
    spec = ModelSpec(
        kind,
        d,
        C,
        hidden_dim=int(rng.integers(1, max_dim + 1)) if kind == "mlp" else None,
        activation=activation,
        l2=float(rng.uniform(0, 0.1)) if l2 is None else l2,
    )
    n = int(rng.integers(1, 9))
    batch = Dataset(rng.normal(size=(n, d)), rng.integers(0, C, n), C)
    return spec, rng.normal(scale=0.7, size=spec.n_params), batch


def test_init_logistic_zeros():
    p = init_params(ModelSpec("logistic_regression", 2, 3), seed=5)
    assert p.tolist() == [0.0] * 9


def test_init_mlp_deterministic_and_bounded():
    spec = ModelSpec("mlp", 5, 3, hidden_dim=4)
    a, b = init_params(spec, 11), init_params(spec, 11)
    assert a.tobytes() == b.tobytes()
    u = spec.unpack(a)
    assert np.all(np.abs(u["W1"]) <= math.sqrt(6 / 9)) and np.all(np.abs(u["W2"]) <= math.sqrt(6 / 7))
    assert not u["b1"].any() and not u["b2"].any()
    assert init_params(spec, 12).tobytes() != a.tobytes()


def test_forward_uniform_at_zero():
    spec = ModelSpec("logistic_regression", 3, 4)
    P = forward(spec, np.zeros(spec.n_params), np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(P == 0.25)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["logistic_regression", "mlp"]))
def test_forward_rows_normalized(seed, kind):
    rng = np.random.default_rng(seed)
    spec, params, batch = random_instance(rng, kind)
    P = forward(spec, params * 10, batch.features)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_forward_no_overflow():
    spec = ModelSpec("logistic_regression", 1, 2)
    params = np.array([1000.0, 0.0, 0.0, 0.0])  # W = [[1000, 0]], b = 0
    P = forward(spec, params, np.array([[1.0]]))
    assert np.isfinite(P).all() and P[0, 0] == pytest.approx(1.0) and P[0, 1] < 1e-300


def test_forward_dimension_mismatch():
    spec = ModelSpec("logistic_regression", 3, 2)
    with pytest.raises(DimensionMismatchError):
        forward(spec, np.zeros(spec.n_params), np.zeros((2, 4)))


def test_loss_ln2_at_zero():
    spec = ModelSpec("logistic_regression", 2, 2)
    batch = Dataset(np.array([[1.0, 2.0], [3.0, -1.0]]), [0, 1], 2)
    loss, _ = loss_and_gradient(spec, np.zeros(spec.n_params), batch)
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_loss_lnC_on_balanced_set():
    spec = ModelSpec("logistic_regression", 3, 5)
    batch = Dataset(np.random.default_rng(1).normal(size=(10, 3)), np.tile(np.arange(5), 2), 5)
    assert loss_and_gradient(spec, np.zeros(spec.n_params), batch)[0] == pytest.approx(math.log(5), abs=1e-14)


def test_regularizer_only_gradient():
    # zero features and exactly balanced labels: the data term has no gradient on the weights
    spec = ModelSpec("logistic_regression", 2, 2, l2=0.3)
    params = np.array([1.0, -2.0, 0.5, 4.0, 0.0, 0.0])
    batch = Dataset(np.zeros((2, 2)), [0, 1], 2)
    _, g = loss_and_gradient(spec, params, batch)
    np.testing.assert_allclose(g[:4], 0.3 * params[:4], rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["logistic_regression", "mlp"])
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(2)
    for _ in range(20):
        spec, params, batch = random_instance(rng, kind)
        err, _ = gradient_check(spec, params, batch)
        assert err < 1e-6


def test_gradient_check_relu_away_from_kinks():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 20:
        spec, params, batch = random_instance(rng, "mlp", activation="relu")
        p = spec.unpack(params)
        if np.abs(batch.features @ p["W1"] + p["b1"]).min() < 1e-3:
            continue
        assert gradient_check(spec, params, batch)[0] < 1e-6
        checked += 1


def test_gradient_check_flags_corruption():
    rng = np.random.default_rng(4)
    spec, params, batch = random_instance(rng, "mlp")

    def bad(p):
        g = loss_and_gradient(spec, p, batch)[1].copy()
        g[3] += 0.05
        return g

    err, idx = gradient_check(spec, params, batch, grad_fn=bad)
    assert err > 1e-3 and idx == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["logistic_regression", "mlp"]))
def test_loss_nonnegative(seed, kind):
    spec, params, batch = random_instance(np.random.default_rng(seed), kind)
    assert loss_and_gradient(spec, params, batch)[0] >= 0.0


def _dataset(seed=0, n=40, d=4, C=3):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), rng.integers(0, C, n), C)


def test_local_train_lr_zero_and_determinism():
    ds = _dataset()
    spec = ModelSpec("mlp", 4, 3, hidden_dim=3)
    p0 = init_params(spec, 1)
    idx = np.arange(ds.n_samples)
    assert local_train(spec, p0, ds, idx, 1, 8, 0.0, seed=3).tobytes() == p0.tobytes()
    a = local_train(spec, p0, ds, idx, 2, 8, 0.1, seed=3)
    b = local_train(spec, p0, ds, idx, 2, 8, 0.1, seed=3)
    assert a.tobytes() == b.tobytes()
    assert local_train(spec, p0, ds, idx, 2, 8, 0.1, seed=4).tobytes() != a.tobytes()


def test_local_train_validation():
    ds = _dataset()
    spec = ModelSpec("logistic_regression", 4, 3)
    with pytest.raises(ValueError):
        local_train(spec, init_params(spec), ds, np.arange(5), 0, 8, 0.1, 0)
    with pytest.raises(EmptyClientDataError):
        local_train(spec, init_params(spec), ds, [], 1, 8, 0.1, 0)


@pytest.mark.parametrize("kind", ["logistic_regression", "mlp"])
def test_full_batch_step_matches_gradient(kind):
    ds = _dataset(1, n=12)
    spec = ModelSpec(kind, 4, 3, hidden_dim=5 if kind == "mlp" else None, l2=0.01)
    p0 = init_params(spec, 2) + 0.1
    stepped = local_train(spec, p0, ds, np.arange(12), 1, 12, 0.25, seed=9)
    # a full batch is the whole set in shuffled order; reorder the oracle batch identically
    (order,) = list(batches(np.arange(12), 12, Rng(9, "batches")))
    expected = p0 - 0.25 * loss_and_gradient(spec, p0, ds.subset(order))[1]
    assert stepped.tobytes() == expected.tobytes()


def test_small_lr_never_increases_convex_loss():
    ds = _dataset(2, n=60)
    spec = ModelSpec("logistic_regression", 4, 3, l2=0.01)
    p = init_params(spec)
    idx = np.arange(ds.n_samples)
    prev = loss_and_gradient(spec, p, ds)[0]
    for epoch in range(20):
        p = local_train(spec, p, ds, idx, 1, 10, 1e-3, seed=epoch)
        cur = loss_and_gradient(spec, p, ds)[0]
        assert cur <= prev + 1e-6
        prev = cur


def test_evaluate_tie_break_and_separable():
    spec = ModelSpec("logistic_regression", 2, 2)
    ds = Dataset(np.random.default_rng(0).normal(size=(6, 2)), [0] * 6, 2)
    assert evaluate(spec, np.zeros(spec.n_params), ds)[1] == 1.0
    pts = Dataset(np.array([[1.0, 1.0], [2.0, 0.5], [-1.0, -1.0], [-0.5, -2.0]]), [1, 1, 0, 0], 2)
    # score_1 - score_0 = x1 + x2
    params = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 0.0])
    assert evaluate(spec, params, pts)[1] == 1.0


def test_evaluate_loss_matches_training_loss():
    ds = _dataset(3)
    spec = ModelSpec("mlp", 4, 3, hidden_dim=2)
    p = init_params(spec, 5)
    assert evaluate(spec, p, ds)[0] == loss_and_gradient(spec, p, ds)[0]
