"""Descriptor matching, RANSAC rigid fitting and point-to-point ICP in 2-D.

Poses returned here map *source* points into the *target* frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateDescriptorError, InvalidInputError
from .geometry import Pose2, wrap_angle
from .keypoints import LocalDescriptorSet

RESULT_HEADER = ["id_i", "id_j", "dx_m", "dy_m", "dtheta_rad", "converged", "residual_m", "inliers"]


@dataclass
class MatchSet:
    pairs: np.ndarray  # (M, 2) int: (source index, target index)
    distances: np.ndarray  # (M,)

    def __len__(self):
        return len(self.distances)


@dataclass
class RegistrationResult:
    pose: Pose2
    converged: bool
    iterations: int
    residual: float
    inlier_count: int


def _as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances; rows or columns of zero-norm vectors are inf."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sa = np.where(na > 0, na, 1.0)
    sb = np.where(nb > 0, nb, 1.0)
    d = 1.0 - (a / sa[:, None]) @ (b / sb[:, None]).T
    d = np.clip(d, 0.0, 2.0)
    d[na == 0, :] = np.inf
    d[:, nb == 0] = np.inf
    return d


def match_descriptors(src: LocalDescriptorSet, dst: LocalDescriptorSet,
                      ratio: float = 0.8) -> MatchSet:
    """Mutual nearest neighbours under cosine distance with a Lowe ratio test."""
    if len(src) == 0 or len(dst) == 0:
        raise InvalidInputError("both descriptor sets must be non-empty")
    if not 0 < ratio <= 1:
        raise InvalidInputError("ratio must lie in (0, 1]")
    d = cosine_distance_matrix(src.descriptors, dst.descriptors)
    if not np.isfinite(d).any():
        raise DegenerateDescriptorError("all descriptors are degenerate")
    best = np.argmin(d, axis=1)
    back = np.argmin(d, axis=0)
    rows = np.arange(len(src))
    best_d = d[rows, best]
    if d.shape[1] > 1:
        second = np.partition(d, 1, axis=1)[:, 1]
    else:
        second = np.full(len(src), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(second > 0, best_d / second, 1.0)
    keep = np.isfinite(best_d) & (back[best] == rows) & (r <= ratio)
    idx = np.flatnonzero(keep)
    return MatchSet(np.stack([idx, best[idx]], axis=1).astype(int), best_d[idx])


def _kabsch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation(s) and translation(s); batched over leading axes."""
    ms = src.mean(axis=-2, keepdims=True)
    md = dst.mean(axis=-2, keepdims=True)
    H = np.swapaxes(src - ms, -1, -2) @ (dst - md)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, -1, -2)
    Ut = np.swapaxes(U, -1, -2)
    det = np.linalg.det(V @ Ut)
    fix = np.ones(det.shape + (2,))
    fix[..., 1] = np.where(det < 0, -1.0, 1.0)
    Rm = (V * fix[..., None, :]) @ Ut
    t = md[..., 0, :] - np.einsum("...ij,...j->...i", Rm, ms[..., 0, :])
    return Rm, t


def estimate_rigid2d(src_pts, dst_pts) -> Pose2:
    """Rigid transform minimising sum |R src + t - dst|^2 (reflections excluded)."""
    src = _as_points(src_pts)
    dst = _as_points(dst_pts)
    if len(src) != len(dst):
        raise InvalidInputError("source and target lists differ in length")
    if len(src) < 2:
        raise InvalidInputError("need at least 2 point pairs")
    if np.ptp(src, axis=0).max() == 0 or np.ptp(dst, axis=0).max() == 0:
        raise InvalidInputError("all points coincide")
    Rm, t = _kabsch(src, dst)
    return Pose2(t[0], t[1], math.atan2(Rm[1, 0], Rm[0, 0]))


def ransac_rigid2d(matches: MatchSet, src_cloud, dst_cloud, iterations: int = 500,
                   inlier_tol: float = 0.5, seed: int = 0) -> RegistrationResult:
    """Two-match minimal-sample RANSAC, refit on the inliers of the best model.

    The best hypothesis has the most inliers, then the lowest mean inlier
    residual, then the earliest index.
    """
    if len(matches) < 2:
        raise InvalidInputError("RANSAC needs at least 2 matches")
    if not inlier_tol > 0:
        raise InvalidInputError("inlier_tol must be positive")
    src = _as_points(src_cloud)[matches.pairs[:, 0]]
    dst = _as_points(dst_cloud)[matches.pairs[:, 1]]
    M = len(src)
    rng = np.random.default_rng(seed)
    first = rng.integers(0, M, size=iterations)
    second = (first + rng.integers(1, M, size=iterations)) % M
    sample_src = np.stack([src[first], src[second]], axis=1)
    sample_dst = np.stack([dst[first], dst[second]], axis=1)
    ok = np.hypot(*(sample_src[:, 0] - sample_src[:, 1]).T) > 1e-9
    Rm, t = _kabsch(sample_src, sample_dst)
    moved = np.einsum("bij,mj->bmi", Rm, src) + t[:, None, :]
    res = np.hypot(*(moved - dst[None]).transpose(2, 0, 1))
    inl = (res <= inlier_tol) & ok[:, None]
    counts = inl.sum(axis=1)
    mean_res = np.where(counts > 0, (res * inl).sum(axis=1) / np.maximum(counts, 1), np.inf)
    best = int(np.lexsort((np.arange(iterations), mean_res, -counts))[0])
    if counts[best] < 2:
        return RegistrationResult(Pose2(), False, iterations,
                                  float(np.hypot(*(src - dst).T).mean()), 0)
    inliers = inl[best]
    pose = estimate_rigid2d(src[inliers], dst[inliers])
    final = np.hypot(*(pose.transform(src) - dst).T)
    final_inl = final <= inlier_tol
    residual = float(final[final_inl].mean()) if final_inl.any() else float(final.mean())
    return RegistrationResult(pose, True, iterations, residual, int(final_inl.sum()))


def icp2d(src, dst, initial_guess: Pose2 = Pose2(), max_iterations: int = 50,
          correspondence_radius: float = 2.0, convergence_tol: float = 1e-4) -> RegistrationResult:
    """Point-to-point ICP from an initial guess.

    Converges when the pose update moves the source cloud by less than
    ``convergence_tol`` metres (rotation counted at the cloud's RMS radius).
    """
    src = _as_points(src)
    dst = _as_points(dst)
    if len(src) < 3 or len(dst) < 3:
        raise InvalidInputError("ICP needs at least 3 points per cloud")
    tree = cKDTree(dst)
    lever = float(np.sqrt(np.mean(np.sum((src - src.mean(axis=0)) ** 2, axis=1))))
    pose = initial_guess
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        d, j = tree.query(pose.transform(src), distance_upper_bound=correspondence_radius)
        valid = np.isfinite(d)
        if valid.sum() < 2:
            return RegistrationResult(pose, False, it, math.inf, int(valid.sum()))
        try:
            new = estimate_rigid2d(src[valid], dst[j[valid]])
        except InvalidInputError:
            return RegistrationResult(pose, False, it, float(d[valid].mean()), int(valid.sum()))
        step = max(math.hypot(new.x - pose.x, new.y - pose.y),
                   abs(wrap_angle(new.theta - pose.theta)) * lever)
        pose = new
        if step < convergence_tol:
            converged = True
            break
    d, _ = tree.query(pose.transform(src), distance_upper_bound=correspondence_radius)
    valid = np.isfinite(d)
    residual = float(d[valid].mean()) if valid.any() else math.inf
    return RegistrationResult(pose, converged and valid.sum() >= 2, it, residual, int(valid.sum()))


@dataclass(frozen=True)
class ClosureConfig:
    ratio: float = 0.8
    ransac_iterations: int = 500
    inlier_tol: float = 0.5
    icp_max_iterations: int = 50
    correspondence_radius: float = 2.0
    convergence_tol: float = 1e-4
    residual_threshold: float = 0.5
    seed: int = 0


@dataclass
class ProcessedScan:
    """Metric keypoints (sensor frame) with their local descriptors."""

    points: np.ndarray
    descriptors: LocalDescriptorSet
    scan_id: str = ""


@dataclass
class ClosureResult:
    result: RegistrationResult
    ransac: Optional[RegistrationResult]
    fallback: bool = False
    match_count: int = 0
    accepted: bool = field(default=False)


def close_loop(scan_a: ProcessedScan, scan_b: ProcessedScan,
               config: ClosureConfig = ClosureConfig()) -> ClosureResult:
    """Estimate the pose of ``scan_b`` in the frame of ``scan_a``.

    Matching and RANSAC seed ICP; when RANSAC fails ICP starts from the
    identity and the result is flagged as a fallback.
    """
    matches = match_descriptors(scan_b.descriptors, scan_a.descriptors, config.ratio)
    ransac = None
    if len(matches) >= 2:
        ransac = ransac_rigid2d(matches, scan_b.points, scan_a.points,
                                config.ransac_iterations, config.inlier_tol, config.seed)
    fallback = ransac is None or not ransac.converged
    guess = Pose2() if fallback else ransac.pose
    result = icp2d(scan_b.points, scan_a.points, guess, config.icp_max_iterations,
                   config.correspondence_radius, config.convergence_tol)
    accepted = result.converged and result.residual <= config.residual_threshold
    return ClosureResult(result, ransac, fallback, len(matches), accepted)


def write_results_csv(rows, path) -> None:
    """``rows``: iterable of (id_i, id_j, RegistrationResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for id_i, id_j, r in rows:
            w.writerow([id_i, id_j, repr(r.pose.x), repr(r.pose.y), repr(r.pose.theta),
                        int(r.converged), repr(r.residual), r.inlier_count])


def read_results_csv(path) -> list[tuple[str, str, RegistrationResult]]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append((r["id_i"], r["id_j"], RegistrationResult(
                Pose2(float(r["dx_m"]), float(r["dy_m"]), float(r["dtheta_rad"])),
                r["converged"] == "1", 0, float(r["residual_m"]), int(r["inliers"]))))
    return out
