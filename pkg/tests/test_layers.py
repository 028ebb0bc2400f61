import math

import numpy as np
import pytest

from oracles import scalar_bilstm, scalar_lstm_step
from phideid.neural.autodiff import Parameter
from phideid.neural.layers import (
    FORGET_BIAS, LstmParams, bilstm, dropout, dropout_mask, feedforward, glorot, lstm_step,
)
from phideid.neural.rng import Rng


def zero_params(D, H, forget_bias=0.0):
    b = np.zeros(4 * H)
    b[H:2 * H] = forget_bias
    return LstmParams(Parameter(np.zeros((D, 4 * H)), "W"), Parameter(np.zeros((H, 4 * H)), "U"), Parameter(b, "b"))


def random_params(seed, D, H):
    rng = Rng(seed)
    p = LstmParams.init("l", D, H, rng)
    p.b.value[...] = rng.uniform(-1, 1, 4 * H)
    return p


def as_lists(p):
    return p.W.value.tolist(), p.U.value.tolist(), p.b.value.tolist()


def test_zero_case():
    h, c = lstm_step(zero_params(3, 2), np.zeros(3), np.zeros(2), np.zeros(2))
    assert (h == 0).all() and (c == 0).all()


def test_forget_bias_closed_form():
    c_prev = np.array([1.0, -2.0, 0.5])
    _, c = lstm_step(zero_params(2, 3, forget_bias=1.0), np.zeros(2), np.zeros(3), c_prev)
    np.testing.assert_allclose(c, c_prev / (1 + math.exp(-1)), rtol=0, atol=1e-15)
    assert abs(c[0] - 0.7311) < 1e-4


def test_init_shapes_and_forget_bias():
    p = LstmParams.init("l", 5, 3, Rng(0))
    assert p.W.shape == (5, 12) and p.U.shape == (3, 12) and p.b.shape == (12,)
    assert (p.b.value[3:6] == FORGET_BIAS).all()
    assert (p.b.value[:3] == 0).all() and (p.b.value[6:] == 0).all()
    bound = math.sqrt(6 / (5 + 12))
    assert np.abs(p.W.value).max() <= bound


def test_glorot_bound():
    w = glorot(Rng(1), 10, 30)
    assert np.abs(w).max() <= math.sqrt(6 / 40)


def test_lstm_step_matches_scalar_oracle():
    p = random_params(2, 4, 3)
    rng = np.random.default_rng(0)
    x, h, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
    got_h, got_c = lstm_step(p, x, h, c)
    ref_h, ref_c = scalar_lstm_step(*as_lists(p), x.tolist(), h.tolist(), c.tolist())
    np.testing.assert_allclose(got_h, ref_h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got_c, ref_c, rtol=0, atol=1e-12)


def test_lstm_step_dimension_mismatch():
    with pytest.raises(ValueError):
        lstm_step(zero_params(3, 2), np.zeros(4), np.zeros(2), np.zeros(2))


def test_bilstm_matches_scalar_oracle():
    fwd, bwd = random_params(3, 4, 3), random_params(4, 4, 3)
    xs = np.random.default_rng(1).normal(size=(7, 4))
    got = bilstm(fwd, bwd, list(xs))
    ref = scalar_bilstm(as_lists(fwd), as_lists(bwd), xs.tolist())
    np.testing.assert_allclose(np.array(got), np.array(ref), rtol=0, atol=1e-12)


def test_bilstm_length_one_and_empty():
    fwd, bwd = random_params(3, 4, 3), random_params(4, 4, 3)
    out = bilstm(fwd, bwd, [np.ones(4)])
    assert len(out) == 1 and out[0].shape == (6,)
    with pytest.raises(ValueError):
        bilstm(fwd, bwd, [])


def test_bilstm_reversal_symmetry():
    fwd, bwd = random_params(5, 3, 2), random_params(6, 3, 2)
    xs = list(np.random.default_rng(2).normal(size=(5, 3)))
    a = bilstm(fwd, bwd, xs)
    b = bilstm(bwd, fwd, xs[::-1])
    for x, y in zip(a, b[::-1]):
        np.testing.assert_allclose(x, np.concatenate([y[2:], y[:2]]), atol=1e-14)


def test_feedforward_cases():
    assert (feedforward(np.zeros((3, 2)), np.zeros(2), np.ones(3)) == 0).all()
    np.testing.assert_allclose(feedforward([[1.0]], [0.0], [0.5]), [0.46211715], atol=1e-8)
    rng = np.random.default_rng(3)
    W, b, x = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=4)
    ref = [math.tanh(sum(x[i] * W[i][j] for i in range(4)) + b[j]) for j in range(3)]
    np.testing.assert_allclose(feedforward(W, b, x), ref, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        feedforward(W, b, np.zeros(3))


def test_dropout_identities():
    x = np.arange(5.0)
    np.testing.assert_array_equal(dropout(x, 0.0, Rng(0), True), x)
    np.testing.assert_array_equal(dropout(x, 0.5, Rng(0), False), x)
    with pytest.raises(ValueError):
        dropout(x, 1.0, Rng(0), True)


def test_dropout_expectation_monte_carlo():
    x = np.linspace(0.5, 2.0, 8)
    rng = Rng(123)
    mean = np.mean([dropout(x, 0.5, rng, True) for _ in range(10_000)], axis=0)
    assert np.all(np.abs(mean - x) <= 0.02 * x)


def test_dropout_mask_values():
    m = dropout_mask((1000,), 0.25, Rng(0))
    assert set(np.unique(m)) <= {0.0, 1 / 0.75}
