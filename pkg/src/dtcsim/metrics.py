"""Evaluation metrics and their serialisation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError, UndefinedMetricError

__all__ = [
    "rmse_pl",
    "nmse",
    "cosine_similarity",
    "throughput",
    "MetricReport",
    "write_metrics_json",
    "write_slots_csv",
]


def rmse_pl(predicted, truth):
    """Root mean square error between two path-loss sequences (dB)."""
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise InvalidInputError(f"sequences must be non-empty and equal length, got {p.size} and {t.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise InvalidInputError("path-loss sequences must be finite")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _pair(estimate, truth):
    e = np.asarray(estimate, dtype=complex)
    t = np.asarray(truth, dtype=complex)
    if e.shape != t.shape:
        raise InvalidInputError(f"shape mismatch {e.shape} vs {t.shape}")
    return e, t


def nmse(estimate, truth):
    """``sum |est - truth|^2 / sum |truth|^2`` over every entry."""
    e, t = _pair(estimate, truth)
    energy = float(np.sum(np.abs(t) ** 2))
    if energy == 0.0:
        raise UndefinedMetricError("NMSE is undefined for a zero-energy reference")
    return float(np.sum(np.abs(e - t) ** 2)) / energy


def cosine_similarity(estimate, truth):
    """Real part of the normalised inner product of the vectorised arrays."""
    e, t = _pair(estimate, truth)
    ne, nt = np.linalg.norm(e), np.linalg.norm(t)
    if ne == 0.0 or nt == 0.0:
        raise UndefinedMetricError("cosine similarity needs two nonzero arrays")
    return float(np.clip(np.real(np.vdot(t, e)) / (ne * nt), -1.0, 1.0))


def throughput(served_bits, horizon_slots, slot_s):
    """Per-user and aggregate throughput (bits/s) from a (slots, users) bit table.

    Pass goodput (bits drained from queues) or allocated Shannon bits
    depending on the desired mode; the arithmetic is the same.
    """
    if horizon_slots < 1:
        raise InvalidInputError("horizon must be at least one slot")
    bits = np.asarray(served_bits, dtype=float)
    per_user = bits.reshape(-1, bits.shape[-1]).sum(axis=0) if bits.ndim > 1 else bits
    per_user = per_user / (horizon_slots * slot_s)
    return float(per_user.sum()), per_user


@dataclass
class MetricReport:
    """Episode summary; ``None`` marks a metric that does not apply."""

    throughput_bps: float = 0.0
    per_user_throughput_bps: list = field(default_factory=list)
    shannon_throughput_bps: float = 0.0
    rmse_pl_db: float | None = None
    nmse: float | None = None
    cosine_similarity: float | None = None
    mean_delay_ms: dict = field(default_factory=dict)
    violation_count: int = 0
    users_without_completions: list = field(default_factory=list)

    def __post_init__(self):
        if self.nmse is not None and self.nmse < 0:
            raise InvalidInputError("nmse must be >= 0")
        if self.throughput_bps < 0:
            raise InvalidInputError("throughput must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["mean_delay_ms"] = {str(k): v for k, v in sorted(self.mean_delay_ms.items())}
        return d


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_metrics_json(path, payload):
    """Write a JSON document with sorted keys; non-finite floats become null."""
    if isinstance(payload, MetricReport):
        payload = payload.to_dict()
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_slots_csv(path, rows, n_users):
    """Per-slot series: (slot, scheduler, csi_mode, aggregate_rate, rate_u0, ...)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "scheduler", "csi_mode", "aggregate_rate", *(f"rate_u{u}" for u in range(n_users))])
        for slot, sched, mode, rates in rows:
            rates = np.asarray(rates, dtype=float)
            w.writerow([slot, sched, mode, repr(float(rates.sum())), *(repr(float(r)) for r in rates)])
