"""Report emission: delimited tables plus rendered figures.

Writes the metric table, loss-curve history, and per-feature
truth-vs-prediction series as CSV (or the metrics as JSON), and renders
matching matplotlib figures next to them.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .dataset import FEATURE_NAMES  # noqa: E402
from .metrics import MetricsReport, PredictionSeries  # noqa: E402
from .training import TrainHistory  # noqa: E402

# Keep savefig output byte-stable across runs regardless of backend defaults.
_PNG_KWARGS = {"dpi": 110, "metadata": {"Software": "flowcast"}}


def write_metrics_csv(report: MetricsReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "rmse", "r2", "unit", "n"])
        for f in report.features:
            writer.writerow([f.feature, repr(f.rmse),
                             "nan" if math.isnan(f.r2) else repr(f.r2),
                             f.unit, f.n])


def write_prediction_csvs(series: PredictionSeries, out_dir: Path) -> list[Path]:
    paths = []
    for j, name in enumerate(FEATURE_NAMES[:series.truth.shape[1]]):
        path = out_dir / f"pred_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_index", "truth", "predicted"])
            for k in range(series.t_index.shape[0]):
                writer.writerow([int(series.t_index[k]),
                                 repr(float(series.truth[k, j])),
                                 repr(float(series.predicted[k, j]))])
        paths.append(path)
    return paths


def plot_loss_curves(history: TrainHistory, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = np.arange(len(history))
    ax.plot(epochs, history.train_loss, label="training loss", color="tab:blue")
    has_val = any(not math.isnan(v) for v in history.val_loss)
    if has_val:
        ax.plot(epochs, history.val_loss, label="validation loss", color="tab:orange")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Training and validation loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)


def _tiled_view(series: PredictionSeries, horizon: int, feature: int
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Overlapping windows plot poorly; tile the test period with
    # non-overlapping samples so every time index appears once.
    n_rows = series.t_index.shape[0]
    n_samples = n_rows // horizon
    keep = []
    next_start = None
    for s in range(n_samples):
        row0 = s * horizon
        if next_start is None or series.t_index[row0] >= next_start:
            keep.extend(range(row0, row0 + horizon))
            next_start = series.t_index[row0] + horizon
    idx = np.asarray(keep, dtype=int)
    return series.t_index[idx], series.truth[idx, feature], series.predicted[idx, feature]


def plot_predictions(series: PredictionSeries, out_dir: Path, horizon: int,
                     units: tuple[str, ...] | None = None) -> list[Path]:
    paths = []
    for j, name in enumerate(FEATURE_NAMES[:series.truth.shape[1]]):
        t, truth, pred = _tiled_view(series, horizon, j)
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.plot(t, truth, label="ground truth", color="tab:blue", linewidth=1.0)
        ax.plot(t, pred, label="predicted", color="tab:red", linewidth=1.0,
                alpha=0.85)
        unit = units[j] if units else ""
        ax.set_xlabel("record index")
        ax.set_ylabel(f"{name} databytes ({unit})" if unit else name)
        ax.set_title(f"Predicted vs observed: {name}")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"pred_{name}.png"
        fig.savefig(path, **_PNG_KWARGS)
        plt.close(fig)
        paths.append(path)
    return paths


def emit_report(report: MetricsReport, out_dir: str | Path,
                history: TrainHistory | None = None,
                predictions: PredictionSeries | None = None,
                format: str = "csv") -> list[Path]:
    """Write a full evaluation report into ``out_dir``; returns written paths.

    Always emits the metric table (``metrics.csv`` or ``metrics.json``).
    With a history: ``history.csv`` and ``loss_curves.png``.  With a
    prediction series: one ``pred_<feature>.csv`` and one
    ``pred_<feature>.png`` per feature.
    """
    if format not in ("csv", "json"):
        raise ValueError(f"unknown report format: {format!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if format == "csv":
        path = out_dir / "metrics.csv"
        write_metrics_csv(report, path)
    else:
        path = out_dir / "metrics.json"
        path.write_text(report.to_json() + "\n")
    written.append(path)

    if history is not None:
        hist_path = out_dir / "history.csv"
        with open(hist_path, "w", newline="") as fh:
            history.write_csv(fh)
        written.append(hist_path)
        fig_path = out_dir / "loss_curves.png"
        plot_loss_curves(history, fig_path)
        written.append(fig_path)

    if predictions is not None:
        written.extend(write_prediction_csvs(predictions, out_dir))
        units = tuple(f.unit for f in report.features)
        written.extend(plot_predictions(predictions, out_dir,
                                        report.horizon_steps, units))
    return written
