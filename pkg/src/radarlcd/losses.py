"""Training losses and the cosine distance used for loop detection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDescriptorError, DimensionMismatchError, EmptyMaskError, \
    InvalidInputError
from .geometry import Pose2, wrap_angle

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # detection term of the multi-task total
    beta: float = 1.0  # closure term of the multi-task total
    lambda_xy: float = 1.0
    lambda_theta: float = 1.0
    delta: float = 0.5  # triplet margin

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.lambda_xy, self.lambda_theta, self.delta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("loss weights must be finite")
        if self.delta < 0:
            raise InvalidInputError("delta must be >= 0")


def bce_loss(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(probs, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.size == 0 or p.size != y.size:
        raise DimensionMismatchError("probs and labels must have equal, non-zero length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def closure_loss(pred: Sequence[Pose2], truth: Sequence[Pose2], positive_mask: Sequence[bool],
                 weights: LossWeights = LossWeights()) -> float:
    """Weighted mean XY Euclidean error plus mean absolute wrapped heading error.

    Only samples with ``positive_mask`` set contribute; negatives carry no
    closure supervision.
    """
    mask = np.asarray(positive_mask, dtype=bool).ravel()
    if not (len(pred) == len(truth) == mask.size):
        raise DimensionMismatchError("pred, truth and mask must have equal length")
    if not mask.any():
        raise EmptyMaskError("closure loss needs at least one positive sample")
    P = np.array([p.as_tuple() for p, m in zip(pred, mask) if m])
    T = np.array([t.as_tuple() for t, m in zip(truth, mask) if m])
    trans = np.mean(np.hypot(P[:, 0] - T[:, 0], P[:, 1] - T[:, 1]))
    rot = np.mean(np.abs(wrap_angle(P[:, 2] - T[:, 2])))
    return float(weights.lambda_xy * trans + weights.lambda_theta * rot)


def dmtl_total_loss(l_detection: float, l_closure: float,
                    weights: LossWeights = LossWeights()) -> float:
    if not (math.isfinite(l_detection) and math.isfinite(l_closure)):
        raise InvalidInputError("losses must be finite")
    return weights.alpha * l_detection + weights.beta * l_closure


def _vector(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float).ravel()


def cosine_distance(u, v) -> float:
    """``1 - u.v / (|u| |v|)``, in [0, 2]. Accepts arrays or global descriptors."""
    u, v = _vector(u), _vector(v)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateDescriptorError("cosine distance of a zero-norm vector")
    return float(np.clip(1.0 - np.dot(u, v) / (nu * nv), 0.0, 2.0))


def triplet_loss(a, p, n, delta: float = 0.5) -> float:
    if delta < 0:
        raise InvalidInputError("delta must be >= 0")
    # grouped so the hinge is zero exactly when d(a,p) + delta <= d(a,n) in floating point
    return max(0.0, (cosine_distance(a, p) + delta) - cosine_distance(a, n))
