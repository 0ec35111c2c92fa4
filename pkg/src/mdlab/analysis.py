"""Trajectory-quality and frontier analysis.

``stepwise_nll`` scores a finished trace with the causal teacher: every
generated token's NLL is computed teacher-forced on the final sequence, and
tokens are grouped by the decode step that committed them. The
commit-count-weighted mean over steps therefore equals the plain mean over
all generated tokens (regrouping identity).

``frontier_sweep`` measures (accuracy, TPS) across confidence thresholds
and seeds; ``compare_runs`` pairs two sweeps on a shared threshold grid.
Outputs are plain CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Example
from .decoder import DecodeConfig, DecodeTrace, decode_batch
from .errors import ConfigError, DataError
from .model import Checkpoint
from .teacher import score_sequence

FRONTIER_FIELDS = ("label", "tau", "seed", "accuracy", "tps_raw", "tps_norm")
STEPWISE_FIELDS = ("label", "step", "mean_nll", "n_tokens")


@dataclass
class MetricsRow:
    label: str
    tau: float
    seed: int
    accuracy: float
    tps_raw: float
    tps_norm: float


@dataclass
class StepwisePoint:
    step: int
    mean_nll: float
    n_tokens: int


def stepwise_nll(teacher: Checkpoint, trace: DecodeTrace) -> list[StepwisePoint]:
    """Mean teacher NLL of the tokens committed at each decode step."""
    scores = score_sequence(teacher, trace.prompt_tokens, trace.final_tokens, "nll")
    points = []
    for rec in trace.steps:
        if len(rec.positions) == 0:
            continue
        vals = scores[rec.positions]
        points.append(StepwisePoint(step=rec.step, mean_nll=float(vals.mean()),
                                    n_tokens=len(vals)))
    return points


def commit_weighted_mean(points: list[StepwisePoint]) -> float:
    """Commit-count-weighted mean over steps == mean over generated tokens."""
    total = sum(p.n_tokens for p in points)
    if total == 0:
        return 0.0
    return sum(p.mean_nll * p.n_tokens for p in points) / total


def generated_mean_nll(teacher: Checkpoint, trace: DecodeTrace) -> float:
    """Mean teacher NLL over the generated (committed) tokens of a trace."""
    scores = score_sequence(teacher, trace.prompt_tokens, trace.final_tokens, "nll")
    positions = np.concatenate([rec.positions for rec in trace.steps])
    return float(scores[positions].mean())


def mid_band_mean(points: list[StepwisePoint]) -> float:
    """Unweighted mean of the per-step NLL over the middle 50% of steps."""
    s = len(points)
    if s == 0:
        return 0.0
    lo = s // 4
    hi = max(-(-3 * s // 4), lo + 1)
    return float(np.mean([p.mean_nll for p in points[lo:hi]]))


def frontier_sweep(model: Checkpoint, testset: list[Example], taus, seeds,
                   config: DecodeConfig, label: str = "run",
                   baseline_tps: float = 1.0) -> list[MetricsRow]:
    """One (accuracy, TPS) row per (threshold, seed), in sweep order."""
    for tau in taus:
        if not (0.0 <= tau <= 1.0):
            raise ConfigError(f"sweep threshold {tau} outside [0,1]")
    rows = []
    for tau in taus:
        for seed in seeds:
            cfg = replace(config, confidence_threshold=float(tau), seed=int(seed))
            _, accuracy, mean_tps = decode_batch(model, testset, cfg)
            rows.append(MetricsRow(label=label, tau=float(tau), seed=int(seed),
                                   accuracy=accuracy, tps_raw=mean_tps,
                                   tps_norm=mean_tps / baseline_tps))
    return rows


def compare_runs(rows_a: list[MetricsRow], rows_b: list[MetricsRow]) -> dict:
    """Paired deltas (b minus a) per threshold, plus overall means."""
    def by_tau(rows):
        out: dict[float, list[MetricsRow]] = {}
        for r in rows:
            out.setdefault(r.tau, []).append(r)
        return out

    a, b = by_tau(rows_a), by_tau(rows_b)
    if sorted(a) != sorted(b):
        raise ConfigError(
            f"threshold grids differ: {sorted(a)} vs {sorted(b)}"
        )
    per_tau = []
    for tau in sorted(a):
        acc_a = float(np.mean([r.accuracy for r in a[tau]]))
        acc_b = float(np.mean([r.accuracy for r in b[tau]]))
        tps_a = float(np.mean([r.tps_raw for r in a[tau]]))
        tps_b = float(np.mean([r.tps_raw for r in b[tau]]))
        per_tau.append({"tau": tau, "accuracy_delta": acc_b - acc_a,
                        "tps_delta": tps_b - tps_a})
    return {
        "per_tau": per_tau,
        "mean_accuracy_delta": float(np.mean([d["accuracy_delta"] for d in per_tau])),
        "mean_tps_delta": float(np.mean([d["tps_delta"] for d in per_tau])),
    }


def write_frontier_csv(path: str, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(FRONTIER_FIELDS)
        for r in rows:
            w.writerow([r.label, repr(r.tau), r.seed, repr(r.accuracy),
                        repr(r.tps_raw), repr(r.tps_norm)])


def read_frontier_csv(path: str) -> list[MetricsRow]:
    rows = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise DataError(f"cannot read metrics {path}: {e}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(FRONTIER_FIELDS):
            raise DataError(f"{path}: unexpected header {header}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(MetricsRow(label=rec[0], tau=float(rec[1]),
                                       seed=int(rec[2]), accuracy=float(rec[3]),
                                       tps_raw=float(rec[4]), tps_norm=float(rec[5])))
            except (IndexError, ValueError) as e:
                raise DataError(f"{path}: line {lineno}: {e}")
    return rows


def write_stepwise_csv(path: str, series: list[tuple[str, list[StepwisePoint]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(STEPWISE_FIELDS)
        for label, points in series:
            for p in points:
                w.writerow([label, p.step, repr(p.mean_nll), p.n_tokens])
