"""Single-layer LSTM encoder-decoder with repeat vector and shared output head.

The encoder folds the lookback window into its final (cell, hidden)
state.  The final hidden vector is repeated ``horizon`` times as the
decoder input sequence, and the encoder final state also initializes
the decoder state.  A time-distributed linear head maps every decoder
hidden vector to the feature space; the head is linear because targets
are min-max normalized and test values may legitimately fall outside
[-1, 1].

Loss is the Huber form per element, summed over the horizon steps and
features of a sample; ``backward`` differentiates that sum exactly
(reverse mode through the decoder, the repeat vector fan-in, the state
handoff, and the encoder).  Batched calls sum the per-sample losses.

All functions accept a single sample (T, m) or a batch (B, T, m).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ScalerParams, WindowSpec
from .errors import ShapeError
from .nn import (LSTM_PARAM_FIELDS, LstmParams, LstmState, StepCache,
                 lstm_cell_backward, lstm_cell_forward, zero_state)

CHECKPOINT_FORMAT_VERSION = 1

# Canonical ordering of the full parameter space; gradient dictionaries,
# optimizer state, and checkpoints all follow it.
PARAM_KEYS = tuple(
    [f"enc.{f}" for f in LSTM_PARAM_FIELDS]
    + [f"dec.{f}" for f in LSTM_PARAM_FIELDS]
    + ["proj.w", "proj.b"]
)


@dataclass
class HuberConfig:
    tau: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class Seq2SeqModel:
    encoder: LstmParams
    decoder: LstmParams
    w_proj: np.ndarray  # (features, hidden)
    b_proj: np.ndarray  # (features,)
    spec: WindowSpec

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()
        h = self.encoder.hidden_size
        m = self.spec.feature_count
        if self.encoder.input_size != m:
            raise ShapeError(
                f"encoder input size {self.encoder.input_size} != feature count {m}")
        if self.decoder.hidden_size != h or self.decoder.input_size != h:
            raise ShapeError(
                f"decoder dims ({self.decoder.hidden_size}, {self.decoder.input_size}) "
                f"must both equal encoder hidden size {h}")
        if self.w_proj.shape != (m, h):
            raise ShapeError(f"projection weights {self.w_proj.shape}, want ({m}, {h})")
        if self.b_proj.shape != (m,):
            raise ShapeError(f"projection bias {self.b_proj.shape}, want ({m},)")

    def param_dict(self) -> dict[str, np.ndarray]:
        """All learned parameters keyed in PARAM_KEYS order."""
        out: dict[str, np.ndarray] = {}
        for field in LSTM_PARAM_FIELDS:
            out[f"enc.{field}"] = getattr(self.encoder, field)
        for field in LSTM_PARAM_FIELDS:
            out[f"dec.{field}"] = getattr(self.decoder, field)
        out["proj.w"] = self.w_proj
        out["proj.b"] = self.b_proj
        return out

    def set_param(self, key: str, value: np.ndarray) -> None:
        scope, _, name = key.partition(".")
        if scope == "enc":
            setattr(self.encoder, name, value)
        elif scope == "dec":
            setattr(self.decoder, name, value)
        elif key == "proj.w":
            self.w_proj = value
        elif key == "proj.b":
            self.b_proj = value
        else:
            raise KeyError(key)


def params_digest(model: Seq2SeqModel) -> str:
    """SHA-256 over all parameter bytes, for mutation checks."""
    digest = hashlib.sha256()
    for key, arr in model.param_dict().items():
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def _time_major(x_seq: np.ndarray, steps_name: str) -> tuple[np.ndarray, bool]:
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim == 2:
        return x_seq, False
    if x_seq.ndim == 3:
        return x_seq, True
    raise ShapeError(f"{steps_name} must be (steps, dim) or (batch, steps, dim), "
                     f"got ndim {x_seq.ndim}")


def encode(x_seq: np.ndarray, model: Seq2SeqModel
           ) -> tuple[LstmState, list[StepCache]]:
    """Unroll the encoder over the lookback window from the zero state."""
    x_seq, batched = _time_major(x_seq, "x_seq")
    steps = x_seq.shape[-2]
    state = zero_state(model.hidden_size, x_seq.shape[0] if batched else None)
    caches: list[StepCache] = []
    for t in range(steps):
        x_t = x_seq[:, t, :] if batched else x_seq[t]
        state, cache = lstm_cell_forward(x_t, state, model.encoder)
        caches.append(cache)
    return state, caches


def repeat_vector(h: np.ndarray, steps: int) -> np.ndarray:
    """``steps`` identical copies of h along a new time axis."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    h = np.asarray(h, dtype=np.float64)
    return np.repeat(h[..., None, :], steps, axis=-2)


def decode(repeated: np.ndarray, init: LstmState, model: Seq2SeqModel
           ) -> tuple[np.ndarray, list[StepCache]]:
    """Unroll the decoder; input at every step is the repeated encoder hidden vector."""
    repeated, batched = _time_major(repeated, "repeated")
    steps = repeated.shape[-2]
    state = init
    hidden = np.empty(repeated.shape[:-1] + (model.hidden_size,))
    caches: list[StepCache] = []
    for t in range(steps):
        x_t = repeated[:, t, :] if batched else repeated[t]
        state, cache = lstm_cell_forward(x_t, state, model.decoder)
        caches.append(cache)
        if batched:
            hidden[:, t, :] = state.h
        else:
            hidden[t] = state.h
    return hidden, caches


def project(hidden_seq: np.ndarray, model: Seq2SeqModel) -> np.ndarray:
    """Apply the same linear head at every step (time-distributed output)."""
    hidden_seq = np.asarray(hidden_seq, dtype=np.float64)
    if hidden_seq.shape[-1] != model.w_proj.shape[1]:
        raise ShapeError(
            f"hidden sequence has size {hidden_seq.shape[-1]}, projection expects "
            f"{model.w_proj.shape[1]}")
    return hidden_seq @ model.w_proj.T + model.b_proj


def forward(x_seq: np.ndarray, model: Seq2SeqModel) -> np.ndarray:
    """Predict the normalized horizon window: (f, m) per sample."""
    final, _ = encode(x_seq, model)
    repeated = repeat_vector(final.h, model.spec.horizon_steps)
    hidden, _ = decode(repeated, final, model)
    return project(hidden, model)


def huber(y_hat: np.ndarray, y: np.ndarray,
          cfg: HuberConfig | None = None) -> tuple[float, np.ndarray]:
    """Huber loss summed over all elements, and its gradient w.r.t. y_hat.

    Per element with error e = y_hat - y: 0.5*e^2 inside |e| <= tau,
    tau*(|e| - tau/2) outside; the gradient is e inside and
    tau*sign(e) outside.  Value and slope agree at the knee.
    """
    cfg = cfg or HuberConfig()
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"prediction shape {y_hat.shape} != target shape {y.shape}")
    err = y_hat - y
    abs_err = np.abs(err)
    quad = abs_err <= cfg.tau
    loss_elems = np.where(quad, 0.5 * err * err, cfg.tau * (abs_err - 0.5 * cfg.tau))
    grad = np.where(quad, err, cfg.tau * np.sign(err))
    return float(loss_elems.sum()), grad


def _zero_grads(model: Seq2SeqModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.param_dict().items()}


def backward(x_seq: np.ndarray, y: np.ndarray, model: Seq2SeqModel,
             cfg: HuberConfig | None = None
             ) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradients of the summed Huber loss for every parameter.

    Returns (gradients keyed by PARAM_KEYS, loss).  For batched input
    the loss and all gradients are sums over the batch; callers wanting
    a batch mean scale by 1/batch afterwards.
    """
    cfg = cfg or HuberConfig()
    x_seq, batched = _time_major(x_seq, "x_seq")
    horizon = model.spec.horizon_steps

    final, enc_caches = encode(x_seq, model)
    repeated = repeat_vector(final.h, horizon)
    hidden, dec_caches = decode(repeated, final, model)
    y_hat = project(hidden, model)
    loss, d_yhat = huber(y_hat, y, cfg)

    grads = _zero_grads(model)

    # time-distributed head: same map at every step, so gradients sum over steps
    m = model.spec.feature_count
    h_size = model.hidden_size
    d_flat = d_yhat.reshape(-1, m)
    hid_flat = hidden.reshape(-1, h_size)
    grads["proj.w"] = d_flat.T @ hid_flat
    grads["proj.b"] = d_flat.sum(axis=0)
    d_hidden = d_yhat @ model.w_proj  # (..., f, hidden)

    # decoder BPTT; every step's input gradient fans back into the
    # repeated encoder hidden vector
    batch = x_seq.shape[0] if batched else None
    carry = zero_state(h_size, batch)
    d_repeat = np.zeros((batch, h_size)) if batched else np.zeros(h_size)
    for t in reversed(range(horizon)):
        d_h_step = (d_hidden[:, t, :] if batched else d_hidden[t]) + carry.h
        step_grads, d_x, carry = lstm_cell_backward(d_h_step, carry.c,
                                                    dec_caches[t], model.decoder)
        for field in LSTM_PARAM_FIELDS:
            grads[f"dec.{field}"] += step_grads[field]
        d_repeat += d_x

    # repeat-vector fan-in plus the decoder initial-state handoff
    d_h_enc = d_repeat + carry.h
    d_c_enc = carry.c

    carry = LstmState(d_c_enc, d_h_enc)
    for t in reversed(range(len(enc_caches))):
        step_grads, _, carry = lstm_cell_backward(carry.h, carry.c,
                                                  enc_caches[t], model.encoder)
        for field in LSTM_PARAM_FIELDS:
            grads[f"enc.{field}"] += step_grads[field]

    return grads, loss


def save_checkpoint(model: Seq2SeqModel, scaler: ScalerParams, path: str | Path,
                    extra_meta: dict | None = None) -> None:
    """Write a self-describing single-file checkpoint (.npz).

    The archive holds one array per PARAM_KEYS entry plus a ``__meta__``
    JSON blob with the format version, window spec, dimensions, scaler
    parameters, and any extra metadata.  Loading reproduces forward
    outputs bitwise (arrays are stored as exact float64).
    """
    model.validate()
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "hidden_size": model.hidden_size,
        "window": {
            "lookback_steps": model.spec.lookback_steps,
            "horizon_steps": model.spec.horizon_steps,
            "stride": model.spec.stride,
            "feature_count": model.spec.feature_count,
        },
        "scaler": scaler.to_dict(),
        "param_keys": list(PARAM_KEYS),
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {k: np.ascontiguousarray(v) for k, v in model.param_dict().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqModel, ScalerParams, dict]:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {meta.get('format_version')}")
        arrays = {k: archive[k] for k in meta["param_keys"]}
    win = meta["window"]
    spec = WindowSpec(win["lookback_steps"], win["horizon_steps"],
                      win["stride"], win["feature_count"])
    model = Seq2SeqModel(
        encoder=LstmParams.zeros(spec.feature_count, meta["hidden_size"]),
        decoder=LstmParams.zeros(meta["hidden_size"], meta["hidden_size"]),
        w_proj=arrays["proj.w"],
        b_proj=arrays["proj.b"],
        spec=spec,
    )
    for key, arr in arrays.items():
        model.set_param(key, arr)
    model.validate()
    scaler = ScalerParams.from_dict(meta["scaler"])
    return model, scaler, meta
