"""Windowed supervised datasets from flow-record series.

A flow series becomes a (samples, lookback, features) input tensor and
a (samples, horizon, features) target tensor after per-feature min-max
normalization into [-1, 1].  The scaler is fitted on the leading
training fraction of the records only, so test-period extrema never
influence the transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SizingError
from .flows import FlowRecord

# Column order of the feature matrix; matches the flow CSV layout.
FEATURE_NAMES = ("avg", "min", "max", "std", "total")
FEATURE_COLUMNS = ("avg_kb", "min_kb", "max_kb", "std_kb", "total_mb")
FEATURE_UNITS = ("KB", "KB", "KB", "KB", "MB")

TARGET_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class WindowSpec:
    """Shape of one supervised sample: lookback -> horizon, both in steps."""

    lookback_steps: int
    horizon_steps: int
    stride: int = 1
    feature_count: int = len(FEATURE_NAMES)

    def __post_init__(self):
        for name in ("lookback_steps", "horizon_steps", "stride", "feature_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min/max mapping raw values linearly onto [-1, 1].

    Features with max == min are degenerate and normalize to the range
    midpoint 0.
    """

    mins: np.ndarray         # (features,)
    maxs: np.ndarray         # (features,)
    degenerate: np.ndarray   # (features,) bool

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise ValueError("scaler max must be >= min per feature")

    @property
    def feature_count(self) -> int:
        return self.mins.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Map raw feature values into [-1, 1]; last axis indexes features.

        Values beyond the fitted extrema map beyond the target range
        (no clamping).
        """
        x = np.asarray(x, dtype=np.float64)
        span = np.where(self.degenerate, 1.0, self.maxs - self.mins)
        out = 2.0 * (x - self.mins) / span - 1.0
        return np.where(self.degenerate, 0.0, out)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        """Inverse of normalize (degenerate features recover their constant)."""
        y = np.asarray(y, dtype=np.float64)
        span = np.where(self.degenerate, 0.0, self.maxs - self.mins)
        return (y + 1.0) / 2.0 * span + self.mins

    def to_dict(self) -> dict:
        return {
            "feature_names": list(FEATURE_NAMES),
            "target_range": list(TARGET_RANGE),
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "degenerate": [bool(d) for d in self.degenerate],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScalerParams":
        return cls(
            mins=np.asarray(obj["mins"], dtype=np.float64),
            maxs=np.asarray(obj["maxs"], dtype=np.float64),
            degenerate=np.asarray(obj["degenerate"], dtype=bool),
        )


@dataclass(frozen=True)
class WindowedDataset:
    """Normalized (lookback -> horizon) sample pairs carved from one series.

    ``inputs`` is (samples, lookback, features) and ``targets`` is
    (samples, horizon, features); sample k's target window starts one
    step after its input window ends.
    """

    inputs: np.ndarray
    targets: np.ndarray
    spec: WindowSpec
    scaler: ScalerParams

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def slice(self, start: int, stop: int) -> "WindowedDataset":
        return WindowedDataset(self.inputs[start:stop], self.targets[start:stop],
                               self.spec, self.scaler)


def feature_matrix(series: Sequence[FlowRecord]) -> np.ndarray:
    """Stack a flow-record series into an (n, features) float matrix."""
    return np.array([[getattr(r, col) for col in FEATURE_COLUMNS] for r in series],
                    dtype=np.float64)


def fit_scaler(series: Sequence[FlowRecord] | np.ndarray,
               fit_fraction: float = 1.0) -> ScalerParams:
    """Learn per-feature min/max from the first ``fit_fraction`` of records.

    Fitting on a leading fraction only keeps later (test) extrema out of
    the transform.  Constant features are flagged degenerate.
    """
    if not 0.0 < fit_fraction <= 1.0:
        raise ValueError(f"fit_fraction must be in (0, 1], got {fit_fraction}")
    mat = series if isinstance(series, np.ndarray) else feature_matrix(series)
    if mat.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty series")
    n_fit = int(mat.shape[0] * fit_fraction)
    if n_fit == 0:
        raise SizingError(
            f"fit_fraction {fit_fraction} selects 0 of {mat.shape[0]} records")
    head = mat[:n_fit]
    mins = head.min(axis=0)
    maxs = head.max(axis=0)
    return ScalerParams(mins=mins, maxs=maxs, degenerate=(maxs == mins))


def make_windows(series: Sequence[FlowRecord] | np.ndarray, spec: WindowSpec,
                 scaler: ScalerParams) -> WindowedDataset:
    """Carve normalized sliding windows from a series, in time order.

    Produces floor((len - lookback - horizon) / stride) + 1 samples;
    raises SizingError naming the required minimum when the series is
    too short.
    """
    mat = series if isinstance(series, np.ndarray) else feature_matrix(series)
    n = mat.shape[0]
    t, f, s = spec.lookback_steps, spec.horizon_steps, spec.stride
    if mat.ndim != 2 or mat.shape[1] != spec.feature_count:
        raise ValueError(
            f"series has {mat.shape[1] if mat.ndim == 2 else '?'} features, "
            f"spec declares {spec.feature_count}")
    if n < t + f:
        raise SizingError(
            f"series length {n} is shorter than the required minimum "
            f"lookback + horizon = {t + f}")
    norm = scaler.normalize(mat)
    n_samples = (n - t - f) // s + 1
    inputs = np.empty((n_samples, t, spec.feature_count))
    targets = np.empty((n_samples, f, spec.feature_count))
    for k in range(n_samples):
        start = k * s
        inputs[k] = norm[start:start + t]
        targets[k] = norm[start + t:start + t + f]
    return WindowedDataset(inputs, targets, spec, scaler)


def split(dataset: WindowedDataset, train_fraction: float
          ) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological train/test split: first floor(n * fraction) samples train.

    No shuffling across the boundary; targets are future windows, so a
    random split would leak.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(n * train_fraction)
    if n_train == 0 or n_train == n:
        raise SizingError(
            f"split of {n} samples at fraction {train_fraction} leaves an empty side "
            f"({n_train} train / {n - n_train} test)")
    return dataset.slice(0, n_train), dataset.slice(n_train, n)


def save_dataset(dataset: WindowedDataset, directory: str | Path) -> None:
    """Persist a dataset as a directory.

    Layout: ``scaler.json`` (per-feature min/max and target range),
    ``windows.meta.json`` (window spec and sample count), and
    ``inputs.npy`` / ``targets.npy`` tensor dumps in C order, i.e.
    sample-major, time-minor, feature-innermost.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "scaler.json").write_text(
        json.dumps(dataset.scaler.to_dict(), indent=2) + "\n")
    meta = {
        "lookback_steps": dataset.spec.lookback_steps,
        "horizon_steps": dataset.spec.horizon_steps,
        "stride": dataset.spec.stride,
        "feature_count": dataset.spec.feature_count,
        "n_samples": len(dataset),
        "layout": "sample-major, time-minor, feature-innermost (C order)",
    }
    (directory / "windows.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.save(directory / "inputs.npy", np.ascontiguousarray(dataset.inputs))
    np.save(directory / "targets.npy", np.ascontiguousarray(dataset.targets))


def load_dataset(directory: str | Path) -> WindowedDataset:
    directory = Path(directory)
    scaler = ScalerParams.from_dict(json.loads((directory / "scaler.json").read_text()))
    meta = json.loads((directory / "windows.meta.json").read_text())
    spec = WindowSpec(meta["lookback_steps"], meta["horizon_steps"],
                      meta["stride"], meta["feature_count"])
    inputs = np.load(directory / "inputs.npy")
    targets = np.load(directory / "targets.npy")
    if inputs.shape[0] != meta["n_samples"]:
        raise ValueError(
            f"inputs.npy has {inputs.shape[0]} samples, metadata says {meta['n_samples']}")
    return WindowedDataset(inputs, targets, spec, scaler)
