"""Keypoint initialisation, guidance-driven refinement, mask filtering and
local descriptor sampling.

Coordinates are ``(u, v)`` = (column, row) in feature-map cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AllPointsFilteredError, InvalidInputError
from .features import FeatureMap, GuidanceMap

WEIGHT_FLOOR = 1e-6


@dataclass
class KeypointSet:
    points: np.ndarray  # (N, 2) as (u, v)
    scores: np.ndarray  # (N,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        if len(self.points) != len(self.scores):
            raise InvalidInputError("points and scores differ in length")

    def __len__(self):
        return len(self.scores)


@dataclass
class LocalDescriptorSet:
    descriptors: np.ndarray  # (N, C)

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=float)
        if self.descriptors.ndim != 2:
            raise InvalidInputError("descriptors must be N x C")

    def __len__(self):
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


def init_keypoints(n: int, height: int, width: int, seed: int) -> KeypointSet:
    """``n`` points i.i.d. uniform over ``[0, W-1] x [0, H-1]``, scores zero."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if height < 2 or width < 2:
        raise InvalidInputError("map must be at least 2 x 2")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, width - 1, size=n)
    v = rng.uniform(0.0, height - 1, size=n)
    return KeypointSet(np.stack([u, v], axis=1), np.zeros(n))


def bilinear(grid: np.ndarray, u, v) -> np.ndarray:
    """Sample ``grid[..., row, col]`` at real (u, v); exact at integer nodes.

    Coordinates must lie inside ``[0, W-1] x [0, H-1]``.
    """
    H, W = grid.shape[-2:]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u0 = np.clip(np.floor(u).astype(int), 0, W - 1)
    v0 = np.clip(np.floor(v).astype(int), 0, H - 1)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    fu = u - u0
    fv = v - v0
    g = np.asarray(grid, dtype=float)
    top = g[..., v0, u0] + fu * (g[..., v0, u1] - g[..., v0, u0])
    bot = g[..., v1, u0] + fu * (g[..., v1, u1] - g[..., v1, u0])
    return top + fv * (bot - top)


def _round_half_up(x):
    return np.floor(x + 0.5).astype(int)


def refine_keypoints(kp: KeypointSet, g: GuidanceMap, iterations: int = 10, window: int = 9,
                     step_tolerance: float = 1e-3) -> KeypointSet:
    """Windowed mean-shift on the guidance map, each point independently.

    Each step moves a point to the centroid of the ``window`` x ``window`` cells
    around its rounded position (clipped at the map border), weighted by
    ``max(guidance - window_min, 0) + 1e-6``. A window with no contrast leaves
    the point where it is. Iteration stops per point once a step is shorter
    than ``step_tolerance``.
    """
    if iterations < 0:
        raise InvalidInputError("iterations must be >= 0")
    if window < 3 or window % 2 == 0:
        raise InvalidInputError("window must be odd and >= 3")
    G = np.asarray(g.values, dtype=float)
    H, W = G.shape
    if window > min(H, W):
        raise InvalidInputError(f"window {window} larger than map {H} x {W}")
    half = window // 2
    padded = np.pad(G, half, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (window, window))  # (H, W, w, w)
    offs = np.arange(-half, half + 1, dtype=float)

    pts = kp.points.copy()
    active = np.ones(len(pts), dtype=bool)
    for _ in range(iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cu = np.clip(_round_half_up(pts[idx, 0]), 0, W - 1)
        cv = np.clip(_round_half_up(pts[idx, 1]), 0, H - 1)
        patch = windows[cv, cu]  # (n, w, w)
        valid = ~np.isnan(patch)
        lo = np.nanmin(patch, axis=(1, 2))
        hi = np.nanmax(patch, axis=(1, 2))
        flat = hi - lo <= 0
        wts = np.where(valid, np.maximum(np.nan_to_num(patch) - lo[:, None, None], 0.0)
                       + WEIGHT_FLOOR, 0.0)
        total = wts.sum(axis=(1, 2))
        nu = cu + (wts * offs[None, None, :]).sum(axis=(1, 2)) / total
        nv = cv + (wts * offs[None, :, None]).sum(axis=(1, 2)) / total
        nu = np.where(flat, pts[idx, 0], nu)
        nv = np.where(flat, pts[idx, 1], nv)
        step = np.hypot(nu - pts[idx, 0], nv - pts[idx, 1])
        pts[idx, 0] = nu
        pts[idx, 1] = nv
        active[idx[(step < step_tolerance) | flat]] = False

    pts[:, 0] = np.clip(pts[:, 0], 0.0, W - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, H - 1)
    return KeypointSet(pts, bilinear(G, pts[:, 0], pts[:, 1]))


def collapse_duplicates(kp: KeypointSet, min_separation: float = 1.0) -> KeypointSet:
    """Merge points closer than ``min_separation``, keeping the highest score.

    Survivors keep their original relative order.
    """
    order = np.argsort(-kp.scores, kind="stable")
    kept: list[int] = []
    for i in order:
        if kept:
            d = np.hypot(*(kp.points[kept] - kp.points[i]).T)
            if d.min() < min_separation:
                continue
        kept.append(int(i))
    kept.sort()
    return KeypointSet(kp.points[kept], kp.scores[kept])


def filter_by_mask(kp: KeypointSet, g: GuidanceMap, quantile: float = 0.7) -> KeypointSet:
    """Keep points scoring at least the ``quantile`` of all guidance values."""
    if not 0.0 <= quantile < 1.0:
        raise InvalidInputError("quantile must be in [0, 1)")
    threshold = np.quantile(np.asarray(g.values, dtype=float), quantile)
    keep = kp.scores >= threshold
    if not keep.any():
        raise AllPointsFilteredError(
            f"all {len(kp)} keypoints below guidance quantile {quantile} ({threshold:.4g})")
    return KeypointSet(kp.points[keep], kp.scores[keep])


def sample_descriptors(features: FeatureMap, kp: KeypointSet) -> LocalDescriptorSet:
    """Bilinearly interpolate all channels at each keypoint; returns N x C."""
    u, v = kp.points[:, 0], kp.points[:, 1]
    if np.any(u < 0) or np.any(v < 0) or np.any(u > features.width - 1) \
            or np.any(v > features.height - 1):
        raise InvalidInputError("keypoint outside feature map bounds")
    return LocalDescriptorSet(bilinear(features.data, u, v).T)


def keypoints_to_points(kp: KeypointSet, stride: int, meters_per_pixel: float,
                        image_center: tuple[float, float]) -> np.ndarray:
    """Metric sensor-frame (x, y) for each keypoint."""
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    cx, cy = image_center
    x = (kp.points[:, 0] * stride - cx) * meters_per_pixel
    y = (kp.points[:, 1] * stride - cy) * meters_per_pixel
    return np.stack([x, y], axis=1)


def points_to_keypoints(points, stride: int, meters_per_pixel: float,
                        image_center: tuple[float, float]) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    cx, cy = image_center
    return np.stack([(pts[:, 0] / meters_per_pixel + cx) / stride,
                     (pts[:, 1] / meters_per_pixel + cy) / stride], axis=1)


def cell_center_origin(image_center: tuple[float, float], stride: int) -> tuple[float, float]:
    """Image centre shifted so cell ``u`` maps to the centre of its pooled pixels."""
    off = (stride - 1) / 2.0
    return (image_center[0] - off, image_center[1] - off)


def write_keypoints_csv(kp: KeypointSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "score"])
        for (u, v), s in zip(kp.points, kp.scores):
            w.writerow([repr(float(u)), repr(float(v)), repr(float(s))])


def read_keypoints_csv(path) -> KeypointSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = [[float(r["u"]), float(r["v"])] for r in rows]
    return KeypointSet(np.array(pts).reshape(-1, 2), [float(r["score"]) for r in rows])
