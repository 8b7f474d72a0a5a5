import math

import numpy as np
import pytest

from flowcast.dataset import ScalerParams, WindowSpec
from flowcast.errors import ShapeError
from flowcast.nn import LstmState, lstm_cell_forward, zero_state
from flowcast.seq2seq import (PARAM_KEYS, HuberConfig, Seq2SeqModel, backward,
                              decode, encode, forward, huber, load_checkpoint,
                              params_digest, project, repeat_vector,
                              save_checkpoint)
from flowcast.training import init_params

from test_nn import scalar_cell


def tiny_model(lookback=4, horizon=2, features=2, hidden=3, seed=7, scale=0.0):
    spec = WindowSpec(lookback, horizon, feature_count=features)
    model = init_params(spec, hidden, seed)
    if scale:
        rng = np.random.default_rng(seed + 1)
        for key, arr in model.param_dict().items():
            model.set_param(key, arr + rng.normal(scale=scale, size=arr.shape))
    return model


def zero_model(lookback=4, horizon=2, features=2, hidden=3):
    model = tiny_model(lookback, horizon, features, hidden)
    for key, arr in model.param_dict().items():
        model.set_param(key, np.zeros_like(arr))
    return model


def dummy_scaler(features):
    return ScalerParams(mins=np.zeros(features), maxs=np.ones(features),
                        degenerate=np.zeros(features, dtype=bool))


# -- encode -------------------------------------------------------------------

def test_encode_zero_params_zero_final_state_any_length():
    model = zero_model()
    rng = np.random.default_rng(0)
    for steps in (1, 4, 9):
        final, caches = encode(rng.normal(size=(steps, 2)), model)
        assert np.array_equal(final.c, np.zeros(3))
        assert np.array_equal(final.h, np.zeros(3))
        assert len(caches) == steps


def test_encode_matches_manual_chaining():
    model = tiny_model(seed=3, scale=0.5)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 2))
    final, _ = encode(x, model)
    state = zero_state(3)
    for t in range(3):
        state, _ = lstm_cell_forward(x[t], state, model.encoder)
    assert np.array_equal(final.c, state.c)
    assert np.array_equal(final.h, state.h)


# -- repeat_vector ------------------------------------------------------------

def test_repeat_vector_copies():
    out = repeat_vector(np.array([1.0, 2.0]), 3)
    assert out.shape == (3, 2)
    assert np.array_equal(out, np.array([[1.0, 2.0]] * 3))


def test_repeat_vector_identity_and_zero():
    h = np.array([0.5, -0.5])
    assert np.array_equal(repeat_vector(h, 1), h[None, :])
    assert np.all(repeat_vector(np.zeros(4), 5) == 0.0)


# -- decode / project ---------------------------------------------------------

def test_decode_zero_params_zero_hidden():
    model = zero_model()
    repeated = repeat_vector(np.zeros(3), 2)
    hidden, _ = decode(repeated, zero_state(3), model)
    assert np.array_equal(hidden, np.zeros((2, 3)))


def test_decode_single_step_equals_one_cell_call():
    model = tiny_model(seed=5, scale=0.4)
    rng = np.random.default_rng(2)
    init = LstmState(rng.normal(size=3), rng.normal(size=3))
    repeated = repeat_vector(init.h, 1)
    hidden, _ = decode(repeated, init, model)
    state, _ = lstm_cell_forward(init.h, init, model.decoder)
    assert np.array_equal(hidden[0], state.h)


def test_decode_matches_manual_two_step_unroll():
    model = tiny_model(horizon=2, seed=9, scale=0.4)
    rng = np.random.default_rng(3)
    init = LstmState(rng.normal(size=3), rng.normal(size=3))
    repeated = repeat_vector(rng.normal(size=3), 2)
    hidden, _ = decode(repeated, init, model)
    state = init
    for t in range(2):
        state, _ = lstm_cell_forward(repeated[t], state, model.decoder)
        assert np.array_equal(hidden[t], state.h)


def test_project_zero_hidden_outputs_bias():
    model = tiny_model()
    model.b_proj = np.array([0.25, -0.75])
    out = project(np.zeros((4, 3)), model)
    assert np.array_equal(out, np.tile([0.25, -0.75], (4, 1)))


def test_project_identity_passthrough():
    model = tiny_model(features=3, hidden=3)
    model.w_proj = np.eye(3)
    model.b_proj = np.zeros(3)
    hidden = np.random.default_rng(12).normal(size=(4, 3))
    assert np.array_equal(project(hidden, model), hidden)


def test_project_is_time_distributed():
    model = tiny_model(seed=11, scale=0.3)
    rng = np.random.default_rng(4)
    hidden = rng.normal(size=(5, 3))
    perm = np.array([3, 1, 4, 0, 2])
    assert np.array_equal(project(hidden, model)[perm], project(hidden[perm], model))


# -- forward ------------------------------------------------------------------

def test_forward_zero_params_outputs_bias():
    model = zero_model(horizon=3)
    model.b_proj = np.array([0.1, 0.2])
    out = forward(np.random.default_rng(5).normal(size=(4, 2)), model)
    assert np.allclose(out, np.tile([0.1, 0.2], (3, 1)))


@pytest.mark.parametrize("lookback", [1, 3, 7])
def test_forward_shape_contract(lookback):
    model = tiny_model(lookback=lookback, horizon=2, seed=6, scale=0.2)
    x = np.random.default_rng(6).normal(size=(lookback, 2))
    assert forward(x, model).shape == (2, 2)


def test_forward_matches_scalar_reference_end_to_end():
    # independent re-implementation: scalar-loop cell, explicit unrolls
    model = tiny_model(lookback=4, horizon=2, features=2, hidden=3, seed=13,
                       scale=0.5)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 2))

    c = [0.0] * 3
    h = [0.0] * 3
    for t in range(4):
        c, h, _, _, _ = scalar_cell(x[t], c, h, model.encoder)
    enc_h = list(h)
    y_ref = []
    for _ in range(2):
        c, h, _, _, _ = scalar_cell(enc_h, c, h, model.decoder)
        y_ref.append([
            sum(model.w_proj[j][r] * h[r] for r in range(3)) + model.b_proj[j]
            for j in range(2)
        ])
    assert np.allclose(forward(x, model), np.array(y_ref), rtol=1e-12, atol=1e-14)


def test_forward_is_bitwise_repeatable():
    model = tiny_model(seed=8, scale=0.3)
    x = np.random.default_rng(8).normal(size=(4, 2))
    assert np.array_equal(forward(x, model), forward(x, model))


def test_batched_forward_matches_per_sample():
    model = tiny_model(seed=10, scale=0.3)
    xs = np.random.default_rng(9).normal(size=(5, 4, 2))
    batch = forward(xs, model)
    for b in range(5):
        assert np.allclose(batch[b], forward(xs[b], model), rtol=1e-12, atol=1e-14)


# -- huber --------------------------------------------------------------------

def test_huber_quadratic_branch():
    loss, grad = huber(np.array([[0.5]]), np.array([[0.0]]), HuberConfig(tau=1.0))
    assert loss == 0.125
    assert grad[0, 0] == 0.5


def test_huber_linear_branch():
    loss, grad = huber(np.array([[2.0]]), np.array([[0.0]]), HuberConfig(tau=1.0))
    assert loss == 1.5
    assert grad[0, 0] == 1.0


def test_huber_knee_continuity():
    loss_at, _ = huber(np.array([[1.0]]), np.array([[0.0]]))
    assert loss_at == 0.5
    lo, g_lo = huber(np.array([[1.0 - 1e-9]]), np.array([[0.0]]))
    hi, g_hi = huber(np.array([[1.0 + 1e-9]]), np.array([[0.0]]))
    assert abs(lo - hi) < 1e-8
    assert abs(g_lo[0, 0] - g_hi[0, 0]) < 1e-8


def test_huber_zero_error():
    loss, grad = huber(np.zeros((2, 3)), np.zeros((2, 3)))
    assert loss == 0.0 and np.all(grad == 0.0)


def test_huber_sums_over_elements():
    y_hat = np.array([[0.5, 2.0], [1.0, 0.0]])
    loss, _ = huber(y_hat, np.zeros((2, 2)))
    assert loss == pytest.approx(0.125 + 1.5 + 0.5 + 0.0)


def test_huber_nonnegative_and_zero_iff_equal():
    rng = np.random.default_rng(10)
    for _ in range(50):
        y_hat = rng.normal(scale=2.0, size=(3, 2))
        y = rng.normal(scale=2.0, size=(3, 2))
        loss, _ = huber(y_hat, y)
        assert loss >= 0.0
        assert (loss == 0.0) == bool(np.all(y_hat == y))


def test_huber_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    y = rng.normal(size=(3, 2))
    # keep errors away from the kink at |e| = 1
    offsets = rng.choice([-1.7, -0.6, 0.4, 1.8], size=(3, 2))
    y_hat = y + offsets
    _, grad = huber(y_hat, y)
    eps = 1e-6
    for idx in np.ndindex(3, 2):
        bump = np.zeros((3, 2))
        bump[idx] = eps
        lp, _ = huber(y_hat + bump, y)
        lm, _ = huber(y_hat - bump, y)
        assert grad[idx] == pytest.approx((lp - lm) / (2 * eps), rel=1e-6)


def test_huber_shape_mismatch():
    with pytest.raises(ShapeError):
        huber(np.zeros((2, 2)), np.zeros((2, 3)))


# -- backward -----------------------------------------------------------------

def fd_gradcheck(model, x, y, cfg, eps=1e-5, tol=1e-4):
    grads, _ = backward(x, y, model, cfg)

    def loss_at():
        return huber(forward(x, model), y, cfg)[0]

    for key, arr in model.param_dict().items():
        numeric = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            lp = loss_at()
            arr[idx] = old - eps
            lm = loss_at()
            arr[idx] = old
            numeric[idx] = (lp - lm) / (2 * eps)
            it.iternext()
        rel = np.abs(grads[key] - numeric) / np.maximum(
            np.abs(grads[key]) + np.abs(numeric), 1e-5)
        assert rel.max() <= tol, f"{key}: worst rel error {rel.max():.3g}"


def kink_free_targets(model, x, rng):
    """Targets whose errors avoid |e| = tau, in both loss branches."""
    y_hat = forward(x, model)
    offsets = rng.choice([-1.6, -0.5, 0.3, 1.4], size=y_hat.shape)
    return y_hat - offsets


def test_backward_zero_when_prediction_equals_target():
    model = tiny_model(seed=14, scale=0.4)
    x = np.random.default_rng(12).normal(size=(4, 2))
    y = forward(x, model)
    grads, loss = backward(x, y, model)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())


def test_backward_matches_finite_differences_tiny_config():
    rng = np.random.default_rng(13)
    model = tiny_model(lookback=3, horizon=2, features=2, hidden=2, seed=15,
                       scale=0.5)
    x = rng.normal(size=(3, 2))
    y = kink_free_targets(model, x, rng)
    fd_gradcheck(model, x, y, HuberConfig(tau=1.0))


def test_duplicated_sample_doubles_gradients():
    model = tiny_model(seed=16, scale=0.4)
    rng = np.random.default_rng(14)
    x = rng.normal(size=(4, 2))
    y = rng.normal(size=(2, 2))
    g1, loss1 = backward(x, y, model)
    x2 = np.stack([x, x])
    y2 = np.stack([y, y])
    g2, loss2 = backward(x2, y2, model)
    assert loss2 == pytest.approx(2.0 * loss1, rel=1e-12)
    for key in PARAM_KEYS:
        assert np.allclose(g2[key], 2.0 * g1[key], rtol=1e-12, atol=1e-14)


def test_small_gradient_step_decreases_loss():
    rng = np.random.default_rng(15)
    for seed in (1, 2, 3):
        model = tiny_model(seed=seed, scale=0.4)
        x = rng.normal(size=(4, 2))
        y = rng.normal(size=(2, 2))
        grads, loss0 = backward(x, y, model)
        for key, arr in model.param_dict().items():
            model.set_param(key, arr - 1e-4 * grads[key])
        loss1, _ = huber(forward(x, model), y)
        assert loss1 < loss0


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip_is_bitwise(tmp_path):
    model = tiny_model(seed=17, scale=0.3)
    scaler = dummy_scaler(2)
    path = tmp_path / "model.npz"
    save_checkpoint(model, scaler, path, extra_meta={"train_fraction": 0.65})
    loaded, back_scaler, meta = load_checkpoint(path)
    x = np.random.default_rng(16).normal(size=(4, 2))
    assert np.array_equal(forward(x, model), forward(x, loaded))
    assert params_digest(model) == params_digest(loaded)
    assert meta["format_version"] == 1
    assert meta["train_fraction"] == 0.65
    assert np.array_equal(back_scaler.mins, scaler.mins)
    assert loaded.spec == model.spec


def test_checkpoint_rejects_unknown_version(tmp_path):
    model = tiny_model()
    path = tmp_path / "model.npz"
    save_checkpoint(model, dummy_scaler(2), path)
    import json

    import numpy as np_mod
    with np_mod.load(path) as archive:
        contents = {k: archive[k] for k in archive.files}
    meta = json.loads(bytes(contents["__meta__"]).decode())
    meta["format_version"] = 99
    contents["__meta__"] = np_mod.frombuffer(json.dumps(meta).encode(),
                                             dtype=np_mod.uint8)
    with open(path, "wb") as fh:
        np_mod.savez(fh, **contents)
    with pytest.raises(ValueError, match="format version"):
        load_checkpoint(path)


def test_model_validate_rejects_mismatched_dims():
    model = tiny_model()
    model.w_proj = np.zeros((2, 5))
    with pytest.raises(ShapeError):
        model.validate()
