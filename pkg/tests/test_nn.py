import math

import numpy as np
import pytest

from flowcast.errors import ShapeError
from flowcast.nn import (LSTM_PARAM_FIELDS, LstmParams, LstmState, activation,
                         affine, elementwise_mul, lstm_cell_backward,
                         lstm_cell_forward, sigmoid, zero_state)


# -- independent scalar-loop reference ---------------------------------------

def scalar_sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def scalar_cell(x, c_prev, h_prev, p):
    """Loop-based re-derivation of one cell step, no numpy."""
    hs, ms = p.hidden_size, p.input_size

    def rowdot(w_row, vec, n):
        return sum(w_row[k] * vec[k] for k in range(n))

    g, i, f = [], [], []
    for r in range(hs):
        g.append(math.tanh(rowdot(p.w_hc[r], h_prev, hs)
                           + rowdot(p.w_xc[r], x, ms) + p.b_c[r]))
        i.append(scalar_sigmoid(rowdot(p.w_hi[r], h_prev, hs)
                                + p.w_ci[r] * c_prev[r]
                                + rowdot(p.w_xi[r], x, ms) + p.b_i[r]))
        f.append(scalar_sigmoid(rowdot(p.w_hf[r], h_prev, hs)
                                + p.w_cf[r] * c_prev[r]
                                + rowdot(p.w_xf[r], x, ms) + p.b_f[r]))
    c = [f[r] * c_prev[r] + i[r] * g[r] for r in range(hs)]
    o = [scalar_sigmoid(rowdot(p.w_ho[r], h_prev, hs) + p.w_co[r] * c[r]
                        + rowdot(p.w_xo[r], x, ms) + p.b_o[r]) for r in range(hs)]
    h = [o[r] * math.tanh(c[r]) for r in range(hs)]
    return c, h, i, f, o


def random_params(input_size, hidden_size, seed, scale=0.7):
    rng = np.random.default_rng(seed)
    p = LstmParams.zeros(input_size, hidden_size)
    for name in LSTM_PARAM_FIELDS:
        shape = getattr(p, name).shape
        setattr(p, name, rng.normal(scale=scale, size=shape))
    return p


# -- activations --------------------------------------------------------------

def test_sigmoid_and_tanh_at_zero():
    assert activation("sigmoid", np.array([0.0]))[0] == 0.5
    assert activation("tanh", np.array([0.0]))[0] == 0.0


def test_sigmoid_symmetry():
    rng = np.random.default_rng(1)
    x = rng.normal(scale=5.0, size=100)
    assert np.allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_activation_stable_at_large_magnitudes():
    x = np.array([-1e3, -100.0, 100.0, 1e3])
    with np.errstate(over="raise"):
        s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all((s >= 0.0) & (s <= 1.0))


def test_activation_unknown_kind():
    with pytest.raises(ValueError):
        activation("relu", np.zeros(1))


# -- affine / elementwise -----------------------------------------------------

def test_affine_identity():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(affine(np.eye(3), x, np.zeros(3)), x)


def test_affine_hand_case():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = affine(w, np.array([1.0, 1.0]), np.zeros(2))
    assert out.tolist() == [3.0, 7.0]


def test_affine_shape_error_names_operand():
    with pytest.raises(ShapeError, match="affine input x"):
        affine(np.eye(3), np.zeros(2), np.zeros(3))


def test_elementwise_mul():
    a = np.array([1.0, 2.0])
    assert np.array_equal(elementwise_mul(a, np.ones(2)), a)
    with pytest.raises(ShapeError):
        elementwise_mul(a, np.ones(3))


# -- cell forward -------------------------------------------------------------

def test_zero_params_zero_state():
    p = LstmParams.zeros(3, 2)
    state, cache = lstm_cell_forward(np.zeros(3), zero_state(2), p)
    assert np.array_equal(cache.i, np.full(2, 0.5))
    assert np.array_equal(cache.f, np.full(2, 0.5))
    assert np.array_equal(cache.o, np.full(2, 0.5))
    assert np.array_equal(state.c, np.zeros(2))
    assert np.array_equal(state.h, np.zeros(2))


def test_large_candidate_bias_scalar_case():
    p = LstmParams.zeros(1, 1)
    p.b_c = np.array([50.0])  # tanh saturates to 1
    state, _ = lstm_cell_forward(np.zeros(1), zero_state(1), p)
    assert state.c[0] == pytest.approx(0.5, rel=1e-12)
    assert state.h[0] == pytest.approx(0.5 * math.tanh(0.5), rel=1e-12)


@pytest.mark.parametrize("hidden,m_in", [(1, 2), (3, 4), (4, 1)])
def test_forward_matches_scalar_reference(hidden, m_in):
    rng = np.random.default_rng(hidden * 10 + m_in)
    p = random_params(m_in, hidden, seed=hidden + m_in)
    x = rng.normal(size=m_in)
    prev = LstmState(rng.normal(size=hidden), rng.normal(size=hidden))
    state, cache = lstm_cell_forward(x, prev, p)
    c_ref, h_ref, i_ref, f_ref, o_ref = scalar_cell(x, prev.c, prev.h, p)
    assert np.allclose(state.c, c_ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(state.h, h_ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(cache.i, i_ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(cache.f, f_ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(cache.o, o_ref, rtol=1e-12, atol=1e-14)


def test_gate_ranges():
    rng = np.random.default_rng(12)
    p = random_params(3, 4, seed=2, scale=2.0)
    prev = LstmState(rng.normal(size=4), rng.normal(size=4))
    state, cache = lstm_cell_forward(rng.normal(size=3), prev, p)
    for gate in (cache.i, cache.f, cache.o):
        assert np.all((gate > 0.0) & (gate < 1.0))
    assert np.all(np.abs(state.h) < 1.0)


def test_forward_is_deterministic():
    p = random_params(2, 3, seed=4)
    x = np.array([0.3, -0.8])
    prev = LstmState(np.array([0.1, 0.2, 0.3]), np.array([-0.1, 0.0, 0.4]))
    s1, _ = lstm_cell_forward(x, prev, p)
    s2, _ = lstm_cell_forward(x, prev, p)
    assert np.array_equal(s1.c, s2.c) and np.array_equal(s1.h, s2.h)


def test_forward_shape_error_names_operand():
    p = LstmParams.zeros(3, 2)
    with pytest.raises(ShapeError, match="x_t"):
        lstm_cell_forward(np.zeros(4), zero_state(2), p)
    with pytest.raises(ShapeError, match="prev.h"):
        lstm_cell_forward(np.zeros(3), LstmState(np.zeros(2), np.zeros(5)), p)


def test_batched_forward_matches_per_sample():
    rng = np.random.default_rng(21)
    p = random_params(3, 4, seed=5)
    xs = rng.normal(size=(6, 3))
    prev = LstmState(rng.normal(size=(6, 4)), rng.normal(size=(6, 4)))
    batch_state, _ = lstm_cell_forward(xs, prev, p)
    for b in range(6):
        single, _ = lstm_cell_forward(xs[b], LstmState(prev.c[b], prev.h[b]), p)
        assert np.allclose(batch_state.c[b], single.c, rtol=1e-12, atol=1e-14)
        assert np.allclose(batch_state.h[b], single.h, rtol=1e-12, atol=1e-14)


# -- cell backward ------------------------------------------------------------

def test_zero_upstream_gives_zero_gradients():
    p = random_params(2, 3, seed=7)
    _, cache = lstm_cell_forward(np.array([0.5, -0.5]),
                                 LstmState(np.zeros(3), np.zeros(3)), p)
    grads, d_x, d_prev = lstm_cell_backward(np.zeros(3), np.zeros(3), cache, p)
    assert all(np.all(g == 0.0) for g in grads.values())
    assert np.all(d_x == 0.0)
    assert np.all(d_prev.c == 0.0) and np.all(d_prev.h == 0.0)


def test_output_gate_preactivation_gradient_scalar_identity():
    # d h / d a_o = tanh(c) * o * (1 - o)
    p = random_params(1, 1, seed=8)
    x = np.array([0.4])
    prev = LstmState(np.array([0.2]), np.array([-0.3]))
    state, cache = lstm_cell_forward(x, prev, p)
    grads, _, _ = lstm_cell_backward(np.ones(1), np.zeros(1), cache, p)
    expect = math.tanh(state.c[0]) * cache.o[0] * (1.0 - cache.o[0])
    assert grads["b_o"][0] == pytest.approx(expect, rel=1e-12)


def cell_loss(x, prev, p, u_h, u_c):
    state, _ = lstm_cell_forward(x, prev, p)
    return float(u_h @ state.h + u_c @ state.c)


@pytest.mark.parametrize("hidden,m_in", [(1, 1), (2, 2), (2, 3), (4, 5)])
def test_backward_matches_finite_differences(hidden, m_in):
    rng = np.random.default_rng(hidden * 100 + m_in)
    p = random_params(m_in, hidden, seed=hidden * 3 + m_in)
    x = rng.normal(size=m_in)
    prev = LstmState(rng.normal(size=hidden), rng.normal(size=hidden))
    u_h = rng.normal(size=hidden)
    u_c = rng.normal(size=hidden)

    _, cache = lstm_cell_forward(x, prev, p)
    grads, d_x, d_prev = lstm_cell_backward(u_h, u_c, cache, p)

    eps = 1e-5

    def check(analytic, probe):
        numeric = np.zeros_like(analytic)
        it = np.nditer(numeric, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            lp = probe(idx, +eps)
            lm = probe(idx, -eps)
            numeric[idx] = (lp - lm) / (2 * eps)
            it.iternext()
        rel = np.abs(analytic - numeric) / np.maximum(
            np.abs(analytic) + np.abs(numeric), 1e-5)
        assert rel.max() <= 1e-4

    for name in LSTM_PARAM_FIELDS:
        arr = getattr(p, name)

        def probe_param(idx, delta, arr=arr):
            old = arr[idx]
            arr[idx] = old + delta
            val = cell_loss(x, prev, p, u_h, u_c)
            arr[idx] = old
            return val

        check(grads[name], probe_param)

    def probe_x(idx, delta):
        x2 = x.copy()
        x2[idx] += delta
        return cell_loss(x2, prev, p, u_h, u_c)

    check(d_x, probe_x)

    def probe_h(idx, delta):
        h2 = prev.h.copy()
        h2[idx] += delta
        return cell_loss(x, LstmState(prev.c, h2), p, u_h, u_c)

    check(d_prev.h, probe_h)

    def probe_c(idx, delta):
        c2 = prev.c.copy()
        c2[idx] += delta
        return cell_loss(x, LstmState(c2, prev.h), p, u_h, u_c)

    check(d_prev.c, probe_c)


def test_batched_backward_sums_over_batch():
    rng = np.random.default_rng(31)
    p = random_params(2, 3, seed=11)
    xs = rng.normal(size=(4, 2))
    prev = LstmState(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    d_h = rng.normal(size=(4, 3))
    d_c = rng.normal(size=(4, 3))

    _, cache = lstm_cell_forward(xs, prev, p)
    grads, d_x, d_prev = lstm_cell_backward(d_h, d_c, cache, p)

    summed = {name: np.zeros_like(getattr(p, name)) for name in LSTM_PARAM_FIELDS}
    for b in range(4):
        _, cache_b = lstm_cell_forward(xs[b], LstmState(prev.c[b], prev.h[b]), p)
        g_b, d_x_b, d_prev_b = lstm_cell_backward(d_h[b], d_c[b], cache_b, p)
        for name in LSTM_PARAM_FIELDS:
            summed[name] += g_b[name]
        assert np.allclose(d_x[b], d_x_b, rtol=1e-12, atol=1e-14)
        assert np.allclose(d_prev.h[b], d_prev_b.h, rtol=1e-12, atol=1e-14)
    for name in LSTM_PARAM_FIELDS:
        assert np.allclose(grads[name], summed[name], rtol=1e-12, atol=1e-13)
