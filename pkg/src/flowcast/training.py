"""Adam training loop with an epoch-decaying learning rate.

Defaults mirror the experimental protocol this package implements:
batch size 32, 40 epochs, Adam at base rate 1e-3 decayed by 0.9 per
epoch, Huber threshold 1.  Everything is seeded and deterministic:
identical (dataset, config) pairs produce bit-identical final
parameters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from .dataset import WindowedDataset, WindowSpec
from .errors import NumericError
from .nn import LstmParams
from .seq2seq import PARAM_KEYS, HuberConfig, Seq2SeqModel, backward, forward, huber


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 40
    base_lr: float = 1e-3
    lr_decay: float = 0.90
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    huber_tau: float = 1.0
    validation_fraction: float = 0.1
    hidden_size: int = 100
    clip_norm: float | None = None  # optional global-norm gradient clip

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.hidden_size < 1:
            raise ValueError("batch_size/hidden_size must be >= 1, epochs >= 0")
        if self.base_lr <= 0 or not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("base_lr must be positive and lr_decay in (0, 1]")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.epsilon <= 0 or self.huber_tau <= 0:
            raise ValueError("epsilon and huber_tau must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")

    @property
    def huber(self) -> HuberConfig:
        return HuberConfig(tau=self.huber_tau)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class AdamState:
    """First/second moment accumulators shaped exactly like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_model(cls, model: Seq2SeqModel) -> "AdamState":
        params = model.param_dict()
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def write_csv(self, sink: TextIO) -> None:
        writer = csv.writer(sink)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for epoch, (tr, va, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
            writer.writerow([epoch, repr(tr), repr(va), repr(lr)])

    @classmethod
    def read_csv(cls, source: TextIO) -> "TrainHistory":
        hist = cls()
        for row in csv.DictReader(source):
            hist.train_loss.append(float(row["train_loss"]))
            hist.val_loss.append(float(row["val_loss"]))
            hist.lr.append(float(row["lr"]))
        return hist


def init_params(spec: WindowSpec, hidden_size: int, seed: int) -> Seq2SeqModel:
    """Seeded model initialization.

    Input/hidden weight matrices (and the output head) draw uniform in
    [-k, k] with k = 1/sqrt(hidden).  The forget-gate bias starts at 1
    so early training keeps long-range memory; other biases and the
    peephole vectors start at zero.
    """
    rng = np.random.default_rng(seed)
    k = 1.0 / math.sqrt(hidden_size)

    def layer(input_size: int) -> LstmParams:
        p = LstmParams.zeros(input_size, hidden_size)
        for gate in ("i", "f", "c", "o"):
            setattr(p, f"w_x{gate}",
                    rng.uniform(-k, k, size=(hidden_size, input_size)))
            setattr(p, f"w_h{gate}",
                    rng.uniform(-k, k, size=(hidden_size, hidden_size)))
        p.b_f = np.ones(hidden_size)
        return p

    model = Seq2SeqModel(
        encoder=layer(spec.feature_count),
        decoder=layer(hidden_size),
        w_proj=rng.uniform(-k, k, size=(spec.feature_count, hidden_size)),
        b_proj=np.zeros(spec.feature_count),
        spec=spec,
    )
    model.validate()
    return model


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Exponential decay: base_lr * lr_decay^epoch (epoch is 0-based)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.base_lr * cfg.lr_decay ** epoch


def adam_step(model: Seq2SeqModel, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on the model and state."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    params = model.param_dict()
    for key in PARAM_KEYS:
        g = grads[key]
        if g.shape != params[key].shape:
            raise NumericError(
                f"gradient for {key} has shape {g.shape}, parameter is {params[key].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {key}")
        state.m[key] = cfg.beta1 * state.m[key] + (1.0 - cfg.beta1) * g
        state.v[key] = cfg.beta2 * state.v[key] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        model.set_param(key, params[key] - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon))


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for key in grads:
            grads[key] = grads[key] * scale


def evaluate_loss(model: Seq2SeqModel, inputs: np.ndarray, targets: np.ndarray,
                  huber_cfg: HuberConfig) -> float:
    """Mean per-sample summed Huber loss; no gradients, no mutation."""
    if inputs.shape[0] == 0:
        return math.nan
    y_hat = forward(inputs, model)
    loss, _ = huber(y_hat, targets, huber_cfg)
    return loss / inputs.shape[0]


def train_epoch(model: Seq2SeqModel, inputs: np.ndarray, targets: np.ndarray,
                cfg: TrainConfig, epoch: int, state: AdamState) -> float:
    """One pass over the training samples; returns the mean sample loss.

    Samples are shuffled deterministically per (seed, epoch) and grouped
    into batches of cfg.batch_size (the final short batch is kept).
    Each batch takes one Adam step at lr_schedule(epoch) on the mean of
    the per-sample summed Huber losses.
    """
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(n)
    lr = lr_schedule(epoch, cfg)
    huber_cfg = cfg.huber

    loss_total = 0.0
    for start in range(0, n, cfg.batch_size):
        batch_idx = order[start:start + cfg.batch_size]
        b = batch_idx.shape[0]
        grads, loss_sum = backward(inputs[batch_idx], targets[batch_idx],
                                   model, huber_cfg)
        if not math.isfinite(loss_sum):
            raise NumericError(
                f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
        for key in grads:
            grads[key] /= b
        if cfg.clip_norm is not None:
            _clip_grads(grads, cfg.clip_norm)
        adam_step(model, grads, state, lr, cfg)
        loss_total += loss_sum
    return loss_total / n


def fit(dataset: WindowedDataset, cfg: TrainConfig,
        initial_model: Seq2SeqModel | None = None,
        after_epoch: Callable[[int, Seq2SeqModel], None] | None = None
        ) -> tuple[Seq2SeqModel, TrainHistory]:
    """Train on a windowed dataset and track per-epoch losses.

    The last validation_fraction of the samples (chronological tail) is
    held out: evaluated after every epoch, never used for updates.
    ``after_epoch`` runs between epochs, e.g. for periodic checkpoints.
    """
    n = len(dataset)
    n_val = int(n * cfg.validation_fraction)
    n_train = n - n_val
    if n_train == 0:
        raise ValueError(f"validation fraction {cfg.validation_fraction} leaves no "
                         f"training samples out of {n}")
    train_x, train_y = dataset.inputs[:n_train], dataset.targets[:n_train]
    val_x, val_y = dataset.inputs[n_train:], dataset.targets[n_train:]

    model = initial_model if initial_model is not None else init_params(
        dataset.spec, cfg.hidden_size, cfg.seed)
    state = AdamState.for_model(model)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        train_loss = train_epoch(model, train_x, train_y, cfg, epoch, state)
        val_loss = evaluate_loss(model, val_x, val_y, cfg.huber)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.lr.append(lr_schedule(epoch, cfg))
        if after_epoch is not None:
            after_epoch(epoch, model)
    return model, history


def load_train_config(path: str | Path) -> tuple[TrainConfig, WindowSpec, float]:
    """Read the JSON config file the CLI consumes.

    Keys mirror TrainConfig and WindowSpec field names exactly, plus
    ``train_fraction`` for the chronological train/test split.  Missing
    keys fall back to the protocol defaults (5-minute sampling: 240-step
    lookback, 120-step horizon, hidden size 100, split 0.65).
    """
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    window_keys = {f.name for f in fields(WindowSpec)}
    train_keys = {f.name for f in fields(TrainConfig)}
    extra = set(obj) - window_keys - train_keys - {"train_fraction"}
    if extra:
        raise ValueError(f"unknown config keys: {sorted(extra)}")
    spec = WindowSpec(
        lookback_steps=obj.get("lookback_steps", 240),
        horizon_steps=obj.get("horizon_steps", 120),
        stride=obj.get("stride", 1),
        feature_count=obj.get("feature_count", 5),
    )
    cfg = TrainConfig(**{k: v for k, v in obj.items() if k in train_keys})
    train_fraction = obj.get("train_fraction", 0.65)
    return cfg, spec, train_fraction
