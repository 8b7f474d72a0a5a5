"""Synthetic flow-record generation.

Desk-scale stand-in for real edge traffic captures: a diurnal sinusoid
drives all five features, with mild multiplicative noise and, in the
"bursty" profile, short multiplicative traffic spikes.  Every record
satisfies the FlowRecord invariants by construction, and generation is
fully determined by the seed.
"""

from __future__ import annotations

import numpy as np

from .flows import FlowRecord

PROFILES = ("sinusoid", "bursty")

# Daily cycle at 5-minute sampling.
DEFAULT_PERIOD = 288


def generate_flow_records(profile: str, length: int, seed: int,
                          interval: float = 300.0, period: int = DEFAULT_PERIOD,
                          start_time: float = 0.0) -> list[FlowRecord]:
    """Generate ``length`` records of the given profile.

    The sinusoid profile is smooth enough to be forecastable; the
    bursty profile overlays sporadic spikes (a few intervals long, a
    few times the base level) on the same cycle.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if period < 2:
        raise ValueError(f"period must be >= 2, got {period}")

    rng = np.random.default_rng(seed)
    k = np.arange(length)
    base = 1.0 + 0.45 * np.sin(2.0 * np.pi * k / period)

    def jitter(scale: float) -> np.ndarray:
        return 1.0 + scale * np.clip(rng.standard_normal(length), -3.0, 3.0)

    avg_kb = 1.2 * base * jitter(0.02)
    counts = np.maximum(1, np.rint(2000.0 * base * jitter(0.02))).astype(int)
    spread = 0.25 * avg_kb * np.abs(jitter(0.05))

    if profile == "bursty":
        burst = np.ones(length)
        pos = 0
        while pos < length:
            if rng.random() < 0.01:
                width = int(rng.integers(2, 6))
                factor = float(rng.uniform(2.0, 4.0))
                burst[pos:pos + width] = factor
                pos += width
            else:
                pos += 1
        avg_kb = avg_kb * burst
        counts = np.maximum(1, np.rint(counts * burst)).astype(int)
        spread = spread * burst

    min_kb = np.minimum(avg_kb, np.maximum(avg_kb - 1.8 * spread, 0.064))
    max_kb = np.maximum(avg_kb, avg_kb + 1.8 * spread)
    std_kb = np.minimum(0.9 * spread * np.abs(jitter(0.05)),
                        0.5 * (max_kb - min_kb))
    total_mb = avg_kb * counts / 1000.0

    return [
        FlowRecord(
            interval_start=start_time + i * interval,
            interval_length=interval,
            avg_kb=float(avg_kb[i]),
            min_kb=float(min_kb[i]),
            max_kb=float(max_kb[i]),
            std_kb=float(std_kb[i]),
            total_mb=float(total_mb[i]),
            packet_count=int(counts[i]),
        )
        for i in range(length)
    ]
