"""Synthetic point-landmark scenes, radar rendering, and revisiting trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose2
from .radar import PolarScan, uniform_azimuths

BLOB_SIGMA_BINS = 1.0
_BLOB_HALF = 4


@dataclass
class SceneModel:
    positions: np.ndarray  # (L, 2) world metres
    reflectivity: np.ndarray  # (L,) in (0, 1]

    def __len__(self):
        return len(self.reflectivity)


def simulate_scene(seed: int, landmark_count: int, extent: float, segments: int = 0,
                   districts: int = 0, segment_length: tuple[float, float] = (4.0, 16.0),
                   segment_spacing: float = 0.5) -> SceneModel:
    """Landmarks uniform over the square ``[-extent/2, extent/2]^2``.

    ``segments`` optionally adds wall-like structures, each a straight chain of
    point landmarks ``segment_spacing`` apart sharing one reflectivity.
    ``districts`` optionally splits the square into nearest-centre regions,
    each thinning points and walls at its own rate and scaling their
    reflectivity, so local appearance statistics vary across the map.
    """
    if landmark_count < 1:
        raise InvalidInputError("landmark_count must be >= 1")
    if not extent > 0:
        raise InvalidInputError("extent must be positive")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-extent / 2, extent / 2, size=(landmark_count, 2))
    reflectivity = 0.25 + 0.75 * (1.0 - rng.random(landmark_count))
    if segments <= 0 and districts <= 0:
        return SceneModel(positions, reflectivity)

    groups = np.arange(landmark_count)  # landmarks sharing a group are thinned together
    if segments > 0:
        chains, refl, grp = [positions], [reflectivity], [groups]
        starts = rng.uniform(-extent / 2, extent / 2, size=(segments, 2))
        angles = rng.uniform(0, math.pi, size=segments)
        lengths = rng.uniform(*segment_length, size=segments)
        values = 0.25 + 0.75 * (1.0 - rng.random(segments))
        for g, (p0, ang, length, val) in enumerate(zip(starts, angles, lengths, values)):
            t = np.arange(0.0, length, segment_spacing)
            chains.append(p0 + t[:, None] * np.array([math.cos(ang), math.sin(ang)]))
            refl.append(np.full(len(t), val))
            grp.append(np.full(len(t), landmark_count + g))
        positions = np.concatenate(chains)
        reflectivity = np.concatenate(refl)
        groups = np.concatenate(grp)
    if districts > 0:
        centres = rng.uniform(-extent / 2, extent / 2, size=(districts, 2))
        point_keep = rng.uniform(0.1, 1.0, size=districts)
        wall_keep = rng.uniform(0.0, 1.0, size=districts)
        gain = rng.uniform(0.3, 1.0, size=districts)
        n_groups = int(groups.max()) + 1
        anchor = np.zeros((n_groups, 2))
        anchor[groups] = positions  # last member stands for the group
        owner = np.argmin(((anchor[:, None, :] - centres[None]) ** 2).sum(axis=2), axis=1)
        is_wall = np.arange(n_groups) >= landmark_count
        keep_p = np.where(is_wall, wall_keep[owner], point_keep[owner])
        group_kept = rng.random(n_groups) < keep_p
        keep = group_kept[groups]
        if not keep.any():
            keep[0] = True
        positions = positions[keep]
        reflectivity = reflectivity[keep] * gain[owner[groups[keep]]]
    return SceneModel(positions, reflectivity)


def render_scan(scene: SceneModel, sensor_pose: Pose2, azimuth_count: int, range_bins: int,
                range_resolution: float, noise_sigma: float, rng_seed: int,
                scan_id: str = "scan", timestamp: int = 0) -> PolarScan:
    """Render each landmark as a Gaussian blob (sigma one bin in azimuth and range).

    Blobs add; additive Gaussian noise follows and the result is clamped to [0, 1].
    """
    A, R = int(azimuth_count), int(range_bins)
    if A < 4 or R < 4:
        raise InvalidInputError("need at least 4 azimuths and 4 range bins")
    if noise_sigma < 0:
        raise InvalidInputError("noise_sigma must be non-negative")
    power = np.zeros((A, R))

    local = sensor_pose.inverse().transform(scene.positions) if len(scene) else np.zeros((0, 2))
    rng_m = np.hypot(local[:, 0], local[:, 1])
    keep = rng_m <= R * range_resolution
    local, refl, rng_m = local[keep], scene.reflectivity[keep], rng_m[keep]
    if len(refl):
        bearing = np.mod(np.arctan2(local[:, 1], local[:, 0]), 2 * math.pi)
        az_bin = bearing * A / (2 * math.pi)
        r_bin = rng_m / range_resolution
        offs = np.arange(-_BLOB_HALF, _BLOB_HALF + 1)
        a_idx = np.round(az_bin)[:, None] + offs[None, :]  # (L, K)
        r_idx = np.round(r_bin)[:, None] + offs[None, :]
        wa = np.exp(-0.5 * ((a_idx - az_bin[:, None]) / BLOB_SIGMA_BINS) ** 2)
        wr = np.exp(-0.5 * ((r_idx - r_bin[:, None]) / BLOB_SIGMA_BINS) ** 2)
        wr = np.where((r_idx >= 0) & (r_idx < R), wr, 0.0)
        blob = refl[:, None, None] * wa[:, :, None] * wr[:, None, :]
        ai = np.broadcast_to((a_idx.astype(int) % A)[:, :, None], blob.shape)
        ri = np.broadcast_to(np.clip(r_idx, 0, R - 1).astype(int)[:, None, :], blob.shape)
        np.add.at(power, (ai.ravel(), ri.ravel()), blob.ravel())

    if noise_sigma > 0:
        power += np.random.default_rng(rng_seed).normal(0.0, noise_sigma, size=power.shape)
    return PolarScan(scan_id, uniform_azimuths(A), np.clip(power, 0.0, 1.0),
                     range_resolution, timestamp)


def make_trajectory(seed: int, n_scans: int, revisits: int, revisit_length: int,
                    step: float = 2.0, lateral_offset: float = 2.0,
                    heading_jitter_deg: float = 5.0) -> list[Pose2]:
    """A non-returning first pass followed by ``revisits`` re-driven segments.

    The first pass meanders but never turns back, so loops occur only on the
    revisit segments, which retrace a stretch of the first pass in the same
    direction with a lateral offset, a longitudinal jitter and heading noise.
    """
    n_first = n_scans - revisits * revisit_length
    if revisits < 0 or revisit_length < 1:
        raise InvalidInputError("revisits must be >= 0 and revisit_length >= 1")
    if n_first < max(2, revisit_length if revisits else 2):
        raise InvalidInputError(
            f"{n_scans} scans cannot hold {revisits} revisits of length {revisit_length}")
    rng = np.random.default_rng(seed)
    heading0 = rng.uniform(-math.pi, math.pi)
    phase = rng.uniform(0, 2 * math.pi)
    amp = math.radians(50.0)
    period = 40.0
    k = np.arange(n_first)
    heading = heading0 + amp * np.sin(2 * math.pi * k / period + phase)
    xy = np.cumsum(step * np.stack([np.cos(heading), np.sin(heading)], axis=1), axis=0)
    xy -= 0.5 * (xy.min(axis=0) + xy.max(axis=0))
    poses = [Pose2(px, py, h) for (px, py), h in zip(xy, heading)]

    for _ in range(revisits):
        start = int(rng.integers(0, n_first - revisit_length + 1))
        lateral = rng.uniform(-lateral_offset, lateral_offset)
        for m in range(revisit_length):
            base = poses[start + m]
            along = rng.uniform(-step / 2, step / 2)
            c, s = math.cos(base.theta), math.sin(base.theta)
            poses.append(Pose2(
                base.x + along * c - lateral * s,
                base.y + along * s + lateral * c,
                base.theta + math.radians(rng.normal(0.0, heading_jitter_deg)),
            ))
    return poses


def scene_extent_for(poses: list[Pose2], max_range: float) -> float:
    """Side of an origin-centred square covering every pose plus sensor range."""
    xy = np.array([[p.x, p.y] for p in poses])
    return float(2 * (np.abs(xy).max() + max_range))
