"""Planar rigid poses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]. Works on scalars and arrays."""
    if np.ndim(theta) == 0:
        w = math.remainder(float(theta), TWO_PI)
        return math.pi if w <= -math.pi else w
    theta = np.asarray(theta, dtype=float)
    w = theta - TWO_PI * np.round(theta / TWO_PI)
    w = np.where(w <= -math.pi, w + TWO_PI, w)
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class Pose2:
    """Rigid transform in the plane; ``theta`` is kept wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "theta"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"Pose2.{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: Pose2) -> Pose2:
        """Return ``self * other``: apply ``other`` first, then ``self``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def between(self, other: Pose2) -> Pose2:
        """Pose of ``other`` expressed in the frame of ``self``."""
        return self.inverse().compose(other)

    def transform(self, points) -> np.ndarray:
        """Map an (N, 2) array of points from this pose's frame to the parent frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return pts @ self.rotation.T + self.translation

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def planar_distance(a: Pose2, b: Pose2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
