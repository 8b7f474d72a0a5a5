"""Deterministic numeric kernel: activations and the LSTM cell.

The cell uses peephole connections: the input and forget gates read the
previous cell state, and the output gate reads the freshly updated cell
state, each through an element-wise weight vector.  Gate input/hidden
transforms are full matrices.  Update order per step:

    g   = tanh(w_hc h_prev + w_xc x + b_c)            candidate
    i   = sigmoid(w_hi h_prev + w_ci*c_prev + w_xi x + b_i)
    f   = sigmoid(w_hf h_prev + w_cf*c_prev + w_xf x + b_f)
    c   = f*c_prev + i*g
    o   = sigmoid(w_ho h_prev + w_co*c + w_xo x + b_o)
    h   = o*tanh(c)

All forward/backward functions accept a single step vector (dim,) or a
batch (batch, dim); everything is float64 and pure, so repeated calls
are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError

# Field order is the documented parameter order for checkpoints and
# gradient dictionaries.
LSTM_PARAM_FIELDS = (
    "w_xi", "w_hi", "w_ci", "b_i",
    "w_xf", "w_hf", "w_cf", "b_f",
    "w_xc", "w_hc", "b_c",
    "w_xo", "w_ho", "w_co", "b_o",
)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, stable for large |x| (no overflow up to 1e3 and far beyond)."""
    x = np.asarray(x, dtype=np.float64)
    # each branch sees only a clipped (safe) argument
    pos = 1.0 / (1.0 + np.exp(-np.clip(x, 0.0, None)))
    ex = np.exp(np.clip(x, None, 0.0))
    neg = ex / (1.0 + ex)
    return np.where(x >= 0, pos, neg)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """w @ x + b for a vector x, or x @ w.T + b row-wise for a batch."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(
            f"affine input x has size {x.shape[-1]}, weight matrix expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"affine bias has shape {b.shape}, want ({w.shape[0]},)")
    return x @ w.T + b


def elementwise_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul operands differ: {a.shape} vs {b.shape}")
    return a * b


@dataclass
class LstmParams:
    """Per-gate weights and biases of one LSTM layer.

    w_x* are (hidden, input), w_h* are (hidden, hidden), biases and the
    peephole vectors w_ci/w_cf/w_co are (hidden,).
    """

    w_xi: np.ndarray
    w_hi: np.ndarray
    w_ci: np.ndarray
    b_i: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_cf: np.ndarray
    b_f: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    b_c: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    w_co: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_xi.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_xi.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        def mat_x():
            return np.zeros((hidden_size, input_size))

        def mat_h():
            return np.zeros((hidden_size, hidden_size))

        def vec():
            return np.zeros(hidden_size)

        return cls(w_xi=mat_x(), w_hi=mat_h(), w_ci=vec(), b_i=vec(),
                   w_xf=mat_x(), w_hf=mat_h(), w_cf=vec(), b_f=vec(),
                   w_xc=mat_x(), w_hc=mat_h(), b_c=vec(),
                   w_xo=mat_x(), w_ho=mat_h(), w_co=vec(), b_o=vec())

    def validate(self) -> None:
        h, m = self.hidden_size, self.input_size
        expect = {
            "w_xi": (h, m), "w_xf": (h, m), "w_xc": (h, m), "w_xo": (h, m),
            "w_hi": (h, h), "w_hf": (h, h), "w_hc": (h, h), "w_ho": (h, h),
            "w_ci": (h,), "w_cf": (h,), "w_co": (h,),
            "b_i": (h,), "b_f": (h,), "b_c": (h,), "b_o": (h,),
        }
        for name in LSTM_PARAM_FIELDS:
            arr = getattr(self, name)
            if arr.shape != expect[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, want {expect[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


class LstmState(NamedTuple):
    """Cell state c and hidden state h, each (hidden,) or (batch, hidden)."""

    c: np.ndarray
    h: np.ndarray


def zero_state(hidden_size: int, batch_size: int | None = None) -> LstmState:
    shape = (hidden_size,) if batch_size is None else (batch_size, hidden_size)
    return LstmState(np.zeros(shape), np.zeros(shape))


@dataclass
class StepCache:
    """Forward intermediates one backward step needs."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _check_step_shapes(x_t: np.ndarray, prev: LstmState, p: LstmParams) -> None:
    if x_t.ndim not in (1, 2):
        raise ShapeError(f"x_t must be a vector or batch, got ndim {x_t.ndim}")
    if x_t.shape[-1] != p.input_size:
        raise ShapeError(
            f"x_t has feature size {x_t.shape[-1]}, params expect {p.input_size}")
    for name, arr in (("prev.h", prev.h), ("prev.c", prev.c)):
        if arr.shape != x_t.shape[:-1] + (p.hidden_size,):
            raise ShapeError(
                f"{name} has shape {arr.shape}, want "
                f"{x_t.shape[:-1] + (p.hidden_size,)}")


def lstm_cell_forward(x_t: np.ndarray, prev: LstmState,
                      p: LstmParams) -> tuple[LstmState, StepCache]:
    """One LSTM step; returns the new state and the backward cache."""
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_step_shapes(x_t, prev, p)
    h_prev, c_prev = prev.h, prev.c

    g = np.tanh(h_prev @ p.w_hc.T + x_t @ p.w_xc.T + p.b_c)
    i = sigmoid(h_prev @ p.w_hi.T + p.w_ci * c_prev + x_t @ p.w_xi.T + p.b_i)
    f = sigmoid(h_prev @ p.w_hf.T + p.w_cf * c_prev + x_t @ p.w_xf.T + p.b_f)
    c = f * c_prev + i * g
    o = sigmoid(h_prev @ p.w_ho.T + p.w_co * c + x_t @ p.w_xo.T + p.b_o)
    tanh_c = np.tanh(c)
    h = o * tanh_c

    cache = StepCache(x=x_t, h_prev=h_prev, c_prev=c_prev,
                      i=i, f=f, g=g, o=o, c=c, tanh_c=tanh_c)
    return LstmState(c, h), cache


def _outer_acc(d_pre: np.ndarray, operand: np.ndarray) -> np.ndarray:
    # weight gradient: outer product per sample, summed over the batch
    if d_pre.ndim == 1:
        return np.outer(d_pre, operand)
    return d_pre.T @ operand


def _vec_acc(d_pre: np.ndarray) -> np.ndarray:
    return d_pre if d_pre.ndim == 1 else d_pre.sum(axis=0)


def lstm_cell_backward(d_h: np.ndarray, d_c: np.ndarray, cache: StepCache,
                       p: LstmParams) -> tuple[dict[str, np.ndarray], np.ndarray, LstmState]:
    """Reverse one LSTM step.

    d_h and d_c are the loss gradients w.r.t. this step's hidden and
    cell state.  Returns (parameter gradients keyed like
    LSTM_PARAM_FIELDS, gradient w.r.t. x_t, gradient w.r.t. the
    previous state).  Batch inputs sum their parameter gradients over
    the batch.

    The output gate reads the current cell state, so the cell-state
    gradient picks up a term routed through o before the gate
    derivatives are applied.
    """
    d_h = np.asarray(d_h, dtype=np.float64)
    d_c = np.asarray(d_c, dtype=np.float64)
    if d_h.shape != cache.o.shape or d_c.shape != cache.c.shape:
        raise ShapeError(
            f"upstream gradients {d_h.shape}/{d_c.shape} do not match the cached "
            f"forward shapes {cache.o.shape}/{cache.c.shape}")

    i, f, g, o = cache.i, cache.f, cache.g, cache.o
    tanh_c = cache.tanh_c

    d_o = d_h * tanh_c
    d_ao = d_o * o * (1.0 - o)
    d_ct = d_c + d_h * o * (1.0 - tanh_c * tanh_c) + d_ao * p.w_co
    d_f = d_ct * cache.c_prev
    d_af = d_f * f * (1.0 - f)
    d_i = d_ct * g
    d_ai = d_i * i * (1.0 - i)
    d_g = d_ct * i
    d_ag = d_g * (1.0 - g * g)

    grads = {
        "w_xi": _outer_acc(d_ai, cache.x), "w_hi": _outer_acc(d_ai, cache.h_prev),
        "w_ci": _vec_acc(d_ai * cache.c_prev), "b_i": _vec_acc(d_ai),
        "w_xf": _outer_acc(d_af, cache.x), "w_hf": _outer_acc(d_af, cache.h_prev),
        "w_cf": _vec_acc(d_af * cache.c_prev), "b_f": _vec_acc(d_af),
        "w_xc": _outer_acc(d_ag, cache.x), "w_hc": _outer_acc(d_ag, cache.h_prev),
        "b_c": _vec_acc(d_ag),
        "w_xo": _outer_acc(d_ao, cache.x), "w_ho": _outer_acc(d_ao, cache.h_prev),
        "w_co": _vec_acc(d_ao * cache.c), "b_o": _vec_acc(d_ao),
    }

    d_x = d_ai @ p.w_xi + d_af @ p.w_xf + d_ag @ p.w_xc + d_ao @ p.w_xo
    d_h_prev = d_ai @ p.w_hi + d_af @ p.w_hf + d_ag @ p.w_hc + d_ao @ p.w_ho
    d_c_prev = d_ct * f + d_ai * p.w_ci + d_af * p.w_cf
    return grads, d_x, LstmState(d_c_prev, d_h_prev)
