"""Fixed-interval statistical summarization of per-packet traffic logs.

Raw packet events (timestamp, size, interface) are binned into
contiguous aggregation intervals; each bin is reduced to five
statistics of the packet sizes observed in it: average, minimum,
maximum and standard deviation in kilobytes, and the byte total in
megabytes.

Unit convention is decimal, as usual in network engineering:
1 KB = 1000 bytes, 1 MB = 1000^2 bytes.  Standard deviation is the
population form (divide by n), so a single-packet bin has std 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, fields
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np

from .errors import PacketLogError

KB = 1000.0
MB = 1000.0 * 1000.0

DEFAULT_INTERVAL = 300.0

PACKET_CSV_HEADER = ["timestamp", "size", "interface"]
FLOW_CSV_HEADER = [
    "interval_start",
    "interval_length",
    "avg_kb",
    "min_kb",
    "max_kb",
    "std_kb",
    "total_mb",
    "packet_count",
]


@dataclass(frozen=True)
class PacketEvent:
    """One observed packet: epoch timestamp (s), size in bytes, interface label."""

    timestamp: float
    size: int
    interface: str = ""

    def __post_init__(self):
        if self.size < 0:
            raise ValueError(f"packet size must be non-negative, got {self.size}")


@dataclass(frozen=True)
class FlowRecord:
    """Five-feature statistical summary of one aggregation interval."""

    interval_start: float
    interval_length: float
    avg_kb: float
    min_kb: float
    max_kb: float
    std_kb: float
    total_mb: float
    packet_count: int

    def validate(self, rel_tol: float = 1e-9) -> None:
        """Raise ValueError if any record invariant is violated."""
        if self.packet_count < 0:
            raise ValueError("packet_count must be non-negative")
        if self.std_kb < 0:
            raise ValueError("std_kb must be non-negative")
        if self.packet_count == 0:
            if any(v != 0.0 for v in (self.avg_kb, self.min_kb, self.max_kb,
                                      self.std_kb, self.total_mb)):
                raise ValueError("empty interval must have all-zero features")
            return
        if not (self.min_kb <= self.avg_kb <= self.max_kb):
            raise ValueError(
                f"feature ordering violated: min={self.min_kb} avg={self.avg_kb} "
                f"max={self.max_kb}")
        total_kb = self.total_mb * (MB / KB)
        if not math.isclose(total_kb, self.avg_kb * self.packet_count,
                            rel_tol=rel_tol, abs_tol=1e-15):
            raise ValueError("total_mb inconsistent with avg_kb * packet_count")


class BinSummary(NamedTuple):
    avg_kb: float
    min_kb: float
    max_kb: float
    std_kb: float
    total_mb: float


class ParseResult(NamedTuple):
    events: list[PacketEvent]
    skipped: list[tuple[int, str]]  # (1-based line number, reason)


class BinResult(NamedTuple):
    records: list[FlowRecord]
    out_of_span: int


def _parse_size(text: str) -> int:
    size = int(text)
    if size < 0:
        raise ValueError("negative size")
    return size


def _event_from_csv(line: str) -> PacketEvent:
    parts = next(csv.reader([line]))
    if len(parts) < 2:
        raise ValueError("expected at least timestamp,size")
    iface = parts[2].strip() if len(parts) > 2 else ""
    return PacketEvent(timestamp=float(parts[0]), size=_parse_size(parts[1].strip()),
                       interface=iface)


def _event_from_jsonl(line: str) -> PacketEvent:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "ts" not in obj or "size" not in obj:
        raise ValueError("expected object with 'ts' and 'size' keys")
    return PacketEvent(timestamp=float(obj["ts"]), size=_parse_size(str(obj["size"])),
                       interface=str(obj.get("iface", "")))


def parse_packet_log(source: TextIO | str, format: str = "csv",
                     strict: bool = False) -> ParseResult:
    """Parse a packet log into events, in file order.

    ``format`` is "csv" (``timestamp,size,interface`` with header) or
    "jsonl" (one object per line with keys ``ts``, ``size``, ``iface``).
    In lenient mode (default) malformed lines are skipped and returned
    with their line numbers; strict mode raises PacketLogError on the
    first bad line.  Blank lines are ignored either way.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown packet log format: {format!r}")
    if isinstance(source, str):
        source = io.StringIO(source)
    make_event = _event_from_csv if format == "csv" else _event_from_jsonl

    events: list[PacketEvent] = []
    skipped: list[tuple[int, str]] = []
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if (format == "csv" and line_no == 1
                and line.split(",")[0].strip().lower() == PACKET_CSV_HEADER[0]):
            continue  # header row
        try:
            events.append(make_event(line))
        except (ValueError, json.JSONDecodeError) as exc:
            if strict:
                raise PacketLogError(line_no, str(exc)) from exc
            skipped.append((line_no, str(exc)))
    return ParseResult(events, skipped)


def summarize_bin(sizes: Sequence[int]) -> BinSummary:
    """Reduce the packet sizes of one interval to the five-feature summary.

    Returns (avg, min, max, std) in KB and the byte total in MB; std is
    the population standard deviation.  An empty interval summarizes to
    all zeros.
    """
    if len(sizes) == 0:
        return BinSummary(0.0, 0.0, 0.0, 0.0, 0.0)
    arr = np.asarray(sizes, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("packet sizes must be finite and non-negative")
    return BinSummary(
        avg_kb=float(arr.mean()) / KB,
        min_kb=float(arr.min()) / KB,
        max_kb=float(arr.max()) / KB,
        std_kb=float(arr.std(ddof=0)) / KB,
        total_mb=float(arr.sum()) / MB,
    )


def _zero_record(start: float, interval: float) -> FlowRecord:
    return FlowRecord(start, interval, 0.0, 0.0, 0.0, 0.0, 0.0, 0)


def bin_packets(events: Iterable[PacketEvent], interval: float,
                span: tuple[float, float]) -> BinResult:
    """Assign events to half-open bins [start, start+interval) over ``span``.

    Produces exactly (t1-t0)/interval contiguous records in time order;
    bins with no packets become all-zero records so the series stays
    uniformly sampled.  Events outside [t0, t1) are counted, not
    dropped silently.  Input need not be sorted.
    """
    t0, t1 = span
    if interval <= 0:
        raise ValueError(f"interval must be positive, got {interval}")
    n_bins_f = (t1 - t0) / interval
    n_bins = round(n_bins_f)
    if n_bins <= 0 or not math.isclose(n_bins_f, n_bins, rel_tol=0, abs_tol=1e-9):
        raise ValueError(
            f"span length {t1 - t0} is not a positive multiple of interval {interval}")

    ordered = sorted(events, key=lambda e: e.timestamp)
    bins: list[list[int]] = [[] for _ in range(n_bins)]
    out_of_span = 0
    for ev in ordered:
        if ev.timestamp < t0 or ev.timestamp >= t1:
            out_of_span += 1
            continue
        idx = int((ev.timestamp - t0) // interval)
        idx = min(idx, n_bins - 1)  # guard float edge at t1 - epsilon
        bins[idx].append(ev.size)

    records = []
    for k, sizes in enumerate(bins):
        start = t0 + k * interval
        if not sizes:
            records.append(_zero_record(start, interval))
            continue
        s = summarize_bin(sizes)
        records.append(FlowRecord(start, interval, s.avg_kb, s.min_kb, s.max_kb,
                                  s.std_kb, s.total_mb, len(sizes)))
    return BinResult(records, out_of_span)


def aligned_span(events: Sequence[PacketEvent], interval: float) -> tuple[float, float]:
    """Smallest interval-aligned [t0, t1) covering every event."""
    if not events:
        raise ValueError("cannot derive a span from an empty event list")
    lo = min(e.timestamp for e in events)
    hi = max(e.timestamp for e in events)
    t0 = math.floor(lo / interval) * interval
    t1 = math.floor(hi / interval) * interval + interval
    return t0, t1


def _format_value(value: float | int) -> str:
    # repr round-trips floats exactly, which keeps export/import lossless
    return repr(value) if isinstance(value, float) else str(value)


def export_flow_records(records: Iterable[FlowRecord], format: str,
                        sink: TextIO) -> int:
    """Write records as CSV (with header) or JSONL.  Returns characters written."""
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown flow record format: {format!r}")
    written = 0
    if format == "csv":
        written += sink.write(",".join(FLOW_CSV_HEADER) + "\n")
        for rec in records:
            row = [_format_value(getattr(rec, f.name)) for f in fields(FlowRecord)]
            written += sink.write(",".join(row) + "\n")
    else:
        for rec in records:
            obj = {f.name: getattr(rec, f.name) for f in fields(FlowRecord)}
            written += sink.write(json.dumps(obj) + "\n")
    return written


def read_flow_records(source: TextIO | str, format: str = "csv") -> list[FlowRecord]:
    """Inverse of export_flow_records for the matching format."""
    if isinstance(source, str):
        source = io.StringIO(source)
    records: list[FlowRecord] = []
    if format == "csv":
        reader = csv.DictReader(source)
        if reader.fieldnames is not None and list(reader.fieldnames) != FLOW_CSV_HEADER:
            raise ValueError(
                f"unexpected flow CSV header {reader.fieldnames}, want {FLOW_CSV_HEADER}")
        for row in reader:
            records.append(FlowRecord(
                interval_start=float(row["interval_start"]),
                interval_length=float(row["interval_length"]),
                avg_kb=float(row["avg_kb"]),
                min_kb=float(row["min_kb"]),
                max_kb=float(row["max_kb"]),
                std_kb=float(row["std_kb"]),
                total_mb=float(row["total_mb"]),
                packet_count=int(row["packet_count"]),
            ))
    elif format == "jsonl":
        for line in source:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            obj["packet_count"] = int(obj["packet_count"])
            records.append(FlowRecord(**obj))
    else:
        raise ValueError(f"unknown flow record format: {format!r}")
    return records
