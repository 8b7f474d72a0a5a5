"""Per-feature RMSE and R² on denormalized predictions.

Metrics are computed in native units (KB for avg/min/max/std, MB for
total) after inverting the dataset scaler; overlapping horizon windows
from consecutive test samples are treated as independent
(prediction, truth) pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import FEATURE_NAMES, FEATURE_UNITS, ScalerParams, WindowedDataset
from .seq2seq import Seq2SeqModel
from .seq2seq import forward as seq2seq_forward


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root of the mean squared error."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ValueError("rmse of empty input is undefined")
    diff = pred - truth
    return float(np.sqrt(np.mean(diff * diff)))


def r2(pred: np.ndarray, truth: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot about the truth mean.

    Can be negative for predictors worse than the truth mean.  Constant
    truth makes the ratio undefined; that degenerate case returns NaN
    rather than a number.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ValueError("r2 of empty input is undefined")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return math.nan
    ss_res = float(np.sum((pred - truth) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class FeatureMetrics:
    feature: str
    unit: str
    rmse: float
    r2: float  # NaN flags a degenerate (constant-truth) feature
    n: int


@dataclass(frozen=True)
class MetricsReport:
    features: tuple[FeatureMetrics, ...]
    sample_count: int
    horizon_steps: int
    model_id: str

    def to_json(self) -> str:
        obj = {
            "sample_count": self.sample_count,
            "horizon_steps": self.horizon_steps,
            "model_id": self.model_id,
            "features": [
                {"feature": f.feature, "unit": f.unit, "rmse": f.rmse,
                 "r2": None if math.isnan(f.r2) else f.r2, "n": f.n}
                for f in self.features
            ],
        }
        return json.dumps(obj, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        feats = tuple(
            FeatureMetrics(feature=f["feature"], unit=f["unit"], rmse=f["rmse"],
                           r2=math.nan if f["r2"] is None else f["r2"], n=f["n"])
            for f in obj["features"]
        )
        return cls(features=feats, sample_count=obj["sample_count"],
                   horizon_steps=obj["horizon_steps"], model_id=obj["model_id"])


@dataclass(frozen=True)
class PredictionSeries:
    """Denormalized truth/prediction pairs for plotting, one array per feature.

    ``t_index`` is the absolute record index each predicted step refers
    to; overlapping windows repeat indices.  Rows are ordered
    sample-major, horizon-step-minor.
    """

    t_index: np.ndarray        # (samples * horizon,)
    truth: np.ndarray          # (samples * horizon, features)
    predicted: np.ndarray      # (samples * horizon, features)


def evaluate(model: Seq2SeqModel, test_set: WindowedDataset, scaler: ScalerParams,
             model_id: str = "", first_record_index: int = 0,
             predict_fn: Callable[[np.ndarray, Seq2SeqModel], np.ndarray] | None = None,
             ) -> tuple[MetricsReport, PredictionSeries]:
    """Forward every test sample and score each feature in native units.

    ``first_record_index`` anchors t_index to the original series (the
    index of the record test sample 0's input window starts at).
    ``predict_fn`` substitutes the forward pass, e.g. for test doubles.
    """
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    predict = predict_fn or seq2seq_forward
    y_hat = predict(test_set.inputs, model)
    if y_hat.shape != test_set.targets.shape:
        raise ValueError(f"predictions {y_hat.shape} do not match targets "
                         f"{test_set.targets.shape}")

    pred_raw = scaler.denormalize(y_hat)
    truth_raw = scaler.denormalize(test_set.targets)

    spec = test_set.spec
    n, horizon, m = truth_raw.shape
    starts = first_record_index + np.arange(n) * spec.stride
    t_index = (starts[:, None] + spec.lookback_steps + np.arange(horizon)[None, :]
               ).reshape(-1)
    pred_flat = pred_raw.reshape(-1, m)
    truth_flat = truth_raw.reshape(-1, m)

    feats = tuple(
        FeatureMetrics(feature=FEATURE_NAMES[j], unit=FEATURE_UNITS[j],
                       rmse=rmse(pred_flat[:, j], truth_flat[:, j]),
                       r2=r2(pred_flat[:, j], truth_flat[:, j]),
                       n=pred_flat.shape[0])
        for j in range(m)
    )
    report = MetricsReport(features=feats, sample_count=n, horizon_steps=horizon,
                           model_id=model_id)
    series = PredictionSeries(t_index=t_index, truth=truth_flat, predicted=pred_flat)
    return report, series
