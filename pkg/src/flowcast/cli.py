"""Command-line pipeline: ingest -> (synth) -> train -> predict/evaluate.

Defaults mirror the reference protocol (5-minute intervals, 240-step
lookback, 120-step horizon, 100 hidden cells, batch 32, 40 epochs,
Adam at 1e-3 with 0.9 decay, Huber tau 1, 65/35 chronological split);
tests override them with tiny dimensions.

Exit codes: 0 success, 2 usage, 3 input problem, 4 numeric failure,
5 output I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (FEATURE_COLUMNS, ScalerParams, WindowSpec, feature_matrix,
                      fit_scaler, make_windows, split)
from .errors import FlowcastError, NumericError
from .flows import (DEFAULT_INTERVAL, aligned_span, bin_packets,
                    export_flow_records, parse_packet_log, read_flow_records)
from .metrics import evaluate as evaluate_model
from .report import emit_report, plot_loss_curves
from .seq2seq import Seq2SeqModel, forward, load_checkpoint, save_checkpoint
from .synth import DEFAULT_PERIOD, PROFILES, generate_flow_records
from .training import TrainConfig, TrainHistory, fit, load_train_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict,
                   inputs: list[Path], outputs: list[Path],
                   seed: int | None) -> Path:
    """Reproducibility envelope: config snapshot, input digests, output list."""
    manifest = {
        "tool": "flowcast",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_config(args: argparse.Namespace
                    ) -> tuple[TrainConfig, WindowSpec, float]:
    if args.config is not None:
        cfg, spec, train_fraction = load_train_config(args.config)
    else:
        cfg, spec, train_fraction = TrainConfig(), WindowSpec(240, 120), 0.65
    if args.seed is not None:
        cfg = TrainConfig(**{**asdict(cfg), "seed": args.seed})
    return cfg, spec, train_fraction


def _load_series(path: Path) -> list:
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    with open(path) as fh:
        fmt = "jsonl" if path.suffix == ".jsonl" else "csv"
        return read_flow_records(fh, format=fmt)


def cmd_ingest(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    if not in_path.exists():
        raise FileNotFoundError(f"input not found: {in_path}")
    with open(in_path) as fh:
        result = parse_packet_log(fh, format=args.format, strict=args.strict)
    if result.skipped:
        print(f"warning: skipped {len(result.skipped)} malformed line(s): "
              + ", ".join(str(ln) for ln, _ in result.skipped[:10]),
              file=sys.stderr)
    if not result.events:
        raise ValueError(f"no parseable packet events in {in_path}")

    if args.span_start is not None and args.span_end is not None:
        span = (args.span_start, args.span_end)
    else:
        span = aligned_span(result.events, args.interval)
    binned = bin_packets(result.events, args.interval, span)
    if binned.out_of_span:
        print(f"warning: {binned.out_of_span} event(s) outside span {span}",
              file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows_path = out_dir / "flows.csv"
    with open(flows_path, "w", newline="") as fh:
        export_flow_records(binned.records, "csv", fh)
    write_manifest(out_dir, "ingest",
                   {"interval": args.interval, "format": args.format,
                    "span": list(span), "strict": args.strict},
                   [in_path], [flows_path], None)
    print(f"wrote {len(binned.records)} flow records to {flows_path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    records = generate_flow_records(args.profile, args.length, seed,
                                    interval=args.interval, period=args.period,
                                    start_time=args.start_time)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows_path = out_dir / "flows.csv"
    with open(flows_path, "w", newline="") as fh:
        export_flow_records(records, "csv", fh)
    write_manifest(out_dir, "synth",
                   {"profile": args.profile, "length": args.length,
                    "interval": args.interval, "period": args.period},
                   [], [flows_path], seed)
    print(f"wrote {len(records)} synthetic flow records to {flows_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg, spec, train_fraction = _resolve_config(args)
    flows_path = Path(args.flows)
    series = _load_series(flows_path)
    matrix = feature_matrix(series)

    scaler = fit_scaler(matrix, fit_fraction=train_fraction)
    dataset = make_windows(matrix, spec, scaler)
    train_set, _ = split(dataset, train_fraction)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra_meta = {"train_fraction": train_fraction, "seed": cfg.seed}

    def periodic(epoch: int, model: Seq2SeqModel) -> None:
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            save_checkpoint(model, scaler,
                            out_dir / f"checkpoint_epoch{epoch + 1:04d}.npz",
                            extra_meta={**extra_meta, "epoch": epoch + 1})

    model, history = fit(train_set, cfg, after_epoch=periodic)

    ckpt_path = out_dir / "checkpoint.npz"
    save_checkpoint(model, scaler, ckpt_path, extra_meta=extra_meta)
    hist_path = out_dir / "history.csv"
    with open(hist_path, "w", newline="") as fh:
        history.write_csv(fh)
    plot_loss_curves(history, out_dir / "loss_curves.png")
    outputs = [ckpt_path, hist_path, out_dir / "loss_curves.png"]
    write_manifest(out_dir, "train",
                   {**asdict(cfg), "lookback_steps": spec.lookback_steps,
                    "horizon_steps": spec.horizon_steps, "stride": spec.stride,
                    "feature_count": spec.feature_count,
                    "train_fraction": train_fraction},
                   [flows_path], outputs, cfg.seed)
    final_val = history.val_loss[-1] if len(history) else float("nan")
    print(f"trained {cfg.epochs} epochs on {len(train_set)} samples; "
          f"final val loss {final_val:.6g}; checkpoint at {ckpt_path}")
    return EXIT_OK


def _check_feature_count(model: Seq2SeqModel, matrix: np.ndarray,
                         ckpt_path: Path) -> None:
    m_model = model.spec.feature_count
    if matrix.shape[1] != m_model:
        raise ValueError(
            f"dimension mismatch: checkpoint {ckpt_path} expects "
            f"(lookback={model.spec.lookback_steps}, features={m_model}), flow file "
            f"provides (records={matrix.shape[0]}, features={matrix.shape[1]})")


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"input not found: {ckpt_path}")
    model, scaler, _ = load_checkpoint(ckpt_path)
    series = _load_series(Path(args.flows))
    matrix = feature_matrix(series)
    _check_feature_count(model, matrix, ckpt_path)

    t = model.spec.lookback_steps
    if matrix.shape[0] < t:
        raise ValueError(
            f"need at least lookback={t} flow records to forecast, got {matrix.shape[0]}")
    window = scaler.normalize(matrix[-t:])
    y_hat = forward(window, model)
    pred = scaler.denormalize(y_hat)

    last = series[-1]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    forecast_path = out_dir / "forecast.csv"
    with open(forecast_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "interval_start"] + list(FEATURE_COLUMNS))
        for i in range(pred.shape[0]):
            start = last.interval_start + (i + 1) * last.interval_length
            writer.writerow([i + 1, repr(start)]
                            + [repr(float(v)) for v in pred[i]])
    write_manifest(out_dir, "predict", {"checkpoint": str(ckpt_path)},
                   [ckpt_path, Path(args.flows)], [forecast_path], None)
    print(f"wrote {pred.shape[0]}-step forecast to {forecast_path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"input not found: {ckpt_path}")
    model, scaler, meta = load_checkpoint(ckpt_path)
    series = _load_series(Path(args.flows))
    matrix = feature_matrix(series)
    _check_feature_count(model, matrix, ckpt_path)

    train_fraction = meta.get("train_fraction", 0.65)
    dataset = make_windows(matrix, model.spec, scaler)
    train_set, test_set = split(dataset, train_fraction)

    report, series_out = evaluate_model(
        model, test_set, scaler, model_id=ckpt_path.name,
        first_record_index=len(train_set) * model.spec.stride)

    history = None
    if args.history is not None:
        with open(args.history) as fh:
            history = TrainHistory.read_csv(fh)

    out_dir = Path(args.out)
    written = emit_report(report, out_dir, history=history,
                          predictions=series_out, format=args.report_format)
    write_manifest(out_dir, "evaluate",
                   {"checkpoint": str(ckpt_path), "train_fraction": train_fraction},
                   [ckpt_path, Path(args.flows)], written, None)
    for f in report.features:
        print(f"{f.feature}: rmse={f.rmse:.4f} {f.unit}, r2={f.r2:.4f}")
    print(f"report written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="Edge traffic prognosis: summarize packet flows, train an "
                    "LSTM encoder-decoder forecaster, and report per-feature "
                    "RMSE and R² with plots.")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file; keys mirror TrainConfig and "
                             "WindowSpec plus train_fraction (default: built-in "
                             "protocol defaults)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override for synth/train (default: config seed)")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: %(default)s)")
    parser.add_argument("--strict", action="store_true",
                        help="abort on the first malformed input line instead of "
                             "skipping (default: lenient)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser(
        "ingest", help="summarize a packet log into fixed-interval flow records",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_ingest.add_argument("--input", required=True, help="packet log file")
    p_ingest.add_argument("--format", choices=("csv", "jsonl"), default="csv",
                          help="packet log format")
    p_ingest.add_argument("--interval", type=float, default=300.0,
                          help="aggregation interval in seconds")
    p_ingest.add_argument("--span-start", type=float, default=None,
                          help="span start (epoch s); derived from data if omitted")
    p_ingest.add_argument("--span-end", type=float, default=None,
                          help="span end (epoch s, exclusive); derived if omitted")
    p_ingest.set_defaults(func=cmd_ingest)

    p_synth = sub.add_parser(
        "synth", help="generate a synthetic flow-record file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_synth.add_argument("--profile", choices=PROFILES, default="sinusoid",
                         help="traffic profile")
    p_synth.add_argument("--length", type=int, required=True,
                         help="number of records to generate")
    p_synth.add_argument("--interval", type=float, default=300.0,
                         help="record interval in seconds")
    p_synth.add_argument("--period", type=int, default=DEFAULT_PERIOD,
                         help="cycle period in records")
    p_synth.add_argument("--start-time", type=float, default=0.0,
                         help="epoch seconds of the first record")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser(
        "train", help="train the forecaster on a flow-record file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_train.add_argument("--flows", required=True, help="flow-record CSV/JSONL file")
    p_train.add_argument("--checkpoint-every", type=int, default=0,
                         help="write an epoch-stamped checkpoint every N epochs "
                              "(0 disables)")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser(
        "predict", help="forecast the next horizon from the latest records",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_predict.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p_predict.add_argument("--flows", required=True, help="flow-record file")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser(
        "evaluate", help="score the checkpoint on the chronological test split",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_eval.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p_eval.add_argument("--flows", required=True, help="flow-record file")
    p_eval.add_argument("--history", default=None,
                        help="training history.csv to include loss curves")
    p_eval.add_argument("--report-format", choices=("csv", "json"), default="csv",
                        help="metric table format")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FlowcastError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
