"""Pooled RMSE in physical units over forecast windows and trajectories."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHANNELS = ("vx", "vy", "thickness")


@dataclass
class RmseReport:
    per_month: dict[int, np.ndarray]  # month -> (rmse_vx, rmse_vy, rmse_h)
    window_avg: np.ndarray
    t0: int
    t1: int

    def to_text(self) -> str:
        lines = ["# month rmse_vx rmse_vy rmse_thickness"]
        for t in sorted(self.per_month):
            lines.append(f"{t} " + " ".join(f"{float(v)!r}" for v in self.per_month[t]))
        lines.append(f"# window months {self.t0 + 1}..{self.t1}")
        lines.append("window_avg " + " ".join(f"{float(v)!r}" for v in self.window_avg))
        return "\n".join(lines) + "\n"

    def series_text(self) -> str:
        lines = ["month,rmse_vx,rmse_vy,rmse_thickness"]
        lines += [f"{t}," + ",".join(f"{float(v)!r}" for v in self.per_month[t]) for t in sorted(self.per_month)]
        return "\n".join(lines) + "\n"


def _aligned(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(truth, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 3:
        raise ValueError(f"prediction {p.shape} and truth {q.shape} must be equal (months, N, C)")
    return p, q


def rmse_per_month(pred, truth, months) -> dict[int, np.ndarray]:
    """Per month and channel, sqrt of the node-mean squared error."""
    p, q = _aligned(pred, truth)
    months = list(months)
    if len(months) != len(p):
        raise ValueError("one month label per prediction slice required")
    rmse = np.sqrt(np.mean((p - q) ** 2, axis=1))
    return {int(t): rmse[k] for k, t in enumerate(months)}


def pooled_rmse(items) -> np.ndarray:
    """Channel RMSE pooled over every node, month and trajectory.

    ``items`` holds (pred, truth) or (pred, truth, node_count) with arrays of
    shape (months, N, C). Trajectories therefore weigh in by node count and
    window length.
    """
    items = list(items)
    if not items:
        raise ValueError("pooled_rmse needs at least one trajectory")
    sq = None
    count = 0
    for item in items:
        p, q = _aligned(item[0], item[1])
        if len(item) > 2 and item[2] != p.shape[1]:
            raise ValueError(f"node_count {item[2]} != array node axis {p.shape[1]}")
        s = ((p - q) ** 2).sum(axis=(0, 1))
        sq = s if sq is None else sq + s
        count += p.shape[0] * p.shape[1]
    return np.sqrt(sq / count)


def window_report(pairs, t0: int, t1: int) -> RmseReport:
    """Report over months t0+1..t1 for one or more (pred, truth) window arrays."""
    pairs = [(_aligned(p, q)) for p, q in pairs]
    if not pairs:
        raise ValueError("no trajectories to evaluate")
    months = range(t0 + 1, t1 + 1)
    for p, _ in pairs:
        if len(p) != len(months):
            raise ValueError(f"window arrays need {len(months)} months, got {len(p)}")
    per_month = {}
    for k, t in enumerate(months):
        per_month[t] = pooled_rmse([(p[k:k + 1], q[k:k + 1]) for p, q in pairs])
    return RmseReport(per_month, pooled_rmse(pairs), t0, t1)


def save_report(report: RmseReport, path, series_path=None) -> None:
    Path(path).write_text(report.to_text())
    if series_path is not None:
        Path(series_path).write_text(report.series_text())
