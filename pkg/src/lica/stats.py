"""Across-seed aggregation of metric curves."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

NUMERIC_KEYS = ("mean_reward", "mean_length", "success_rate", "mean_entropy", "critic_loss")


def quartiles(values) -> tuple[float, float, float]:
    """(q1, median, q3) with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(q1), float(med), float(q3)


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def aggregate(runs: list[list[dict]], keys=NUMERIC_KEYS) -> list[dict]:
    """Per-step median and quartiles across runs.

    Only steps present in every run are kept, so runs of unequal length
    aggregate over their common prefix.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    by_step = [{r["step"]: r for r in run} for run in runs]
    steps = sorted(set.intersection(*(set(b) for b in by_step)))
    out = []
    for step in steps:
        rec = {"step": step, "runs": len(runs)}
        for key in keys:
            vals = [b[step].get(key) for b in by_step]
            if any(v is None for v in vals):
                continue
            q1, med, q3 = quartiles(vals)
            rec[key] = {"q1": q1, "median": med, "q3": q3}
        out.append(rec)
    return out


def running_mean(x, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` previous values (shorter at the start)."""
    x = np.asarray(x, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
