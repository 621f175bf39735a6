"""Loop-detection mAP over a fixed threshold sweep and loop-closure pose errors.

Similarity scores lie in [0, 1]: ``1 - cosine_distance / 2`` for descriptor
methods and ``1 - sc_distance`` for Scan Context.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, SplitMismatchError
from .geometry import Pose2, wrap_angle


@dataclass(frozen=True)
class ScoredPair:
    id_i: str
    id_j: str
    score: float
    label: bool

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvalidInputError(f"score must be finite in [0, 1], got {self.score}")


def descriptor_similarity(cos_dist: float) -> float:
    return float(min(1.0, max(0.0, 1.0 - cos_dist / 2.0)))


def scancontext_similarity(sc_dist: float) -> float:
    return float(min(1.0, max(0.0, 1.0 - sc_dist)))


def pr_at_threshold(pairs: Sequence[ScoredPair], t: float) -> tuple[float, float]:
    """Predict a loop iff score >= t. Precision is 1 when nothing is predicted."""
    tp = fp = fn = 0
    for p in pairs:
        if p.score >= t:
            if p.label:
                tp += 1
            else:
                fp += 1
        elif p.label:
            fn += 1
    if tp + fn == 0:
        raise InvalidInputError("need at least one positive label")
    precision = tp / (tp + fp) if tp + fp else 1.0
    return precision, tp / (tp + fn)


def threshold_grid(t_start: float = 0.25, t_step: float = 0.05, t_count: int = 13) -> list[float]:
    if t_count < 1:
        raise InvalidInputError("t_count must be >= 1")
    return [t_start + k * t_step for k in range(t_count)]


@dataclass
class PRTable:
    thresholds: list[float]
    precision: list[float]
    recall: list[float]


def map_over_thresholds(pairs: Sequence[ScoredPair], t_start: float = 0.25, t_step: float = 0.05,
                        t_count: int = 13) -> tuple[float, PRTable]:
    """Recall-weighted precision summed over the threshold-induced operating points.

    Operating points are visited from the highest threshold down:
    ``AP = sum_k (recall_k - recall_{k-1}) * precision_k`` with ``recall_{-1} = 0``.
    The table is returned in ascending-threshold order.
    """
    grid = threshold_grid(t_start, t_step, t_count)
    scores = np.array([p.score for p in pairs], dtype=float)
    labels = np.array([p.label for p in pairs], dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise InvalidInputError("need at least one positive label")
    prec, rec = [], []
    for t in grid:
        pred = scores >= t
        tp = int(np.count_nonzero(pred & labels))
        fp = int(np.count_nonzero(pred & ~labels))
        prec.append(tp / (tp + fp) if tp + fp else 1.0)
        rec.append(tp / n_pos)
    ap = 0.0
    prev = 0.0
    for k in sorted(range(len(grid)), key=lambda i: -grid[i]):
        ap += (rec[k] - prev) * prec[k]
        prev = rec[k]
    return ap, PRTable(grid, prec, rec)


def pose_errors(results: Sequence[tuple[Pose2, Pose2]]) -> tuple[float, float]:
    """Mean heading error (degrees, wrapped) and mean planar translation error (metres)."""
    if len(results) == 0:
        raise InvalidInputError("no closure results")
    est = np.array([e.as_tuple() for e, _ in results])
    tru = np.array([t.as_tuple() for _, t in results])
    t_eps = float(np.mean(np.hypot(est[:, 0] - tru[:, 0], est[:, 1] - tru[:, 1])))
    r_eps = float(np.degrees(np.mean(np.abs(wrap_angle(est[:, 2] - tru[:, 2])))))
    return r_eps, t_eps


@dataclass(frozen=True)
class ClosureRecord:
    id_i: str
    id_j: str
    estimate: Pose2
    truth: Pose2
    converged: bool = True


@dataclass
class EvalReport:
    map: float
    table: PRTable
    r_eps_deg: Optional[float]
    t_eps_m: Optional[float]
    n_pairs: int
    n_closures: int
    n_closures_attempted: int
    config_hash: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "map": self.map,
            "thresholds": self.table.thresholds,
            "precision": self.table.precision,
            "recall": self.table.recall,
            "r_eps_deg": self.r_eps_deg,
            "t_eps_m": self.t_eps_m,
            "n_pairs": self.n_pairs,
            "n_closures": self.n_closures,
            "n_closures_attempted": self.n_closures_attempted,
            "config_hash": self.config_hash,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(self.table.thresholds, self.table.precision, self.table.recall):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def build_report(pairs: Sequence[ScoredPair], closures: Sequence[ClosureRecord], config_hash: str,
                 t_start: float = 0.25, t_step: float = 0.05, t_count: int = 13,
                 extra: Optional[dict] = None) -> EvalReport:
    """Assemble detection and closure metrics.

    Pose errors average over converged closures only; with none, the closure
    fields are ``None``.
    """
    ids = {p.id_i for p in pairs} | {p.id_j for p in pairs}
    stray = {c.id_i for c in closures} | {c.id_j for c in closures}
    if not stray <= ids:
        raise SplitMismatchError(f"closure scans absent from detection pairs: {sorted(stray - ids)[:5]}")
    ap, table = map_over_thresholds(pairs, t_start, t_step, t_count)
    good = [(c.estimate, c.truth) for c in closures if c.converged]
    r_eps, t_eps = pose_errors(good) if good else (None, None)
    return EvalReport(ap, table, r_eps, t_eps, len(pairs), len(good), len(closures),
                      config_hash, dict(extra or {}))
