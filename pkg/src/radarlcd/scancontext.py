"""Scan Context baseline on 2-D radar intensity.

Each (ring, sector) bin keeps the maximum pixel power. Descriptor file:

    b"RSC1" | u32 Nr | u32 Ns | f32 max_range | Nr*Ns float32 row-major   (little-endian)
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DegenerateDescriptorError, DimensionMismatchError, \
    InvalidInputError, NonFiniteError
from .geometry import wrap_angle
from .radar import CartesianImage

RSC_MAGIC = b"RSC1"


@dataclass
class ScanContextDescriptor:
    matrix: np.ndarray  # Nr x Ns
    max_range: float
    clipped: bool = False

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise InvalidInputError("scan context matrix must be 2-D")
        if not np.all(np.isfinite(self.matrix)):
            raise NonFiniteError("scan context matrix must be finite")

    @property
    def rings(self) -> int:
        return self.matrix.shape[0]

    @property
    def sectors(self) -> int:
        return self.matrix.shape[1]

    @property
    def ring_key(self) -> np.ndarray:
        return self.matrix.mean(axis=1)


def make_scan_context(image: CartesianImage, rings: int = 20, sectors: int = 60,
                      max_range: float = 80.0) -> ScanContextDescriptor:
    """Polar max-pooling of the image about the sensor.

    A ``max_range`` beyond the image half-extent is clipped to it and the
    descriptor is flagged ``clipped``.
    """
    if rings < 2 or sectors < 2:
        raise InvalidInputError("need at least 2 rings and 2 sectors")
    if not max_range > 0:
        raise InvalidInputError("max_range must be positive")
    extent = min(image.width, image.height) / 2.0 * image.meters_per_pixel
    clipped = max_range > extent
    if clipped:
        warnings.warn(f"max_range {max_range} m exceeds image extent {extent} m; clipped")
        max_range = extent
    x, y = image.metric_grid()
    radius = np.hypot(x, y)
    bearing = np.mod(np.arctan2(y, x), 2 * math.pi)
    inside = radius < max_range
    ring = np.minimum((radius[inside] / (max_range / rings)).astype(int), rings - 1)
    sector = np.minimum((bearing[inside] / (2 * math.pi / sectors)).astype(int), sectors - 1)
    mat = np.zeros(rings * sectors)
    np.maximum.at(mat, ring * sectors + sector, image.pixels[inside])
    return ScanContextDescriptor(np.clip(mat.reshape(rings, sectors), 0.0, 1.0), max_range,
                                 clipped)


def _column_distance(m1: np.ndarray, m2: np.ndarray) -> float:
    n1 = np.linalg.norm(m1, axis=0)
    n2 = np.linalg.norm(m2, axis=0)
    both = (n1 > 0) & (n2 > 0)
    either = (n1 > 0) | (n2 > 0)
    if not either.any():
        return 0.0
    sim = np.zeros(m1.shape[1])
    sim[both] = np.sum(m1[:, both] * m2[:, both], axis=0) / (n1[both] * n2[both])
    return float(np.mean(1.0 - sim[either]))


def sc_distance(d1: ScanContextDescriptor, d2: ScanContextDescriptor) -> tuple[float, int]:
    """Minimum over circular column shifts of the mean column cosine distance.

    Shift ``s`` pairs column ``j`` of ``d1`` with column ``j + s`` of ``d2``.
    Columns empty in both are skipped; a column empty in only one counts as
    distance 1. ``best_shift * 2*pi/Ns`` is the heading of the ``d1`` scan
    relative to the ``d2`` scan. Ties go to the smallest shift.
    """
    if d1.matrix.shape != d2.matrix.shape:
        raise DimensionMismatchError("scan context shapes differ")
    if not d1.matrix.any() and not d2.matrix.any():
        raise DegenerateDescriptorError("both scan contexts are empty")
    Ns = d1.sectors
    dists = np.array([_column_distance(d1.matrix, np.roll(d2.matrix, -s, axis=1))
                      for s in range(Ns)])
    best = int(np.argmin(dists))
    return float(np.clip(dists[best], 0.0, 1.0)), best


def shift_to_yaw(shift: int, sectors: int) -> float:
    return wrap_angle(shift * 2 * math.pi / sectors)


def sc_detect(query: ScanContextDescriptor, database: list[ScanContextDescriptor],
              candidate_k: int = 10, threshold: float = 0.3) -> list[tuple[int, float, float]]:
    """Ring-key pruning followed by full matching.

    Returns ``(index, distance, yaw_estimate)`` for candidates within
    ``threshold``, nearest first.
    """
    if not database:
        raise InvalidInputError("database is empty")
    if candidate_k < 1:
        raise InvalidInputError("candidate_k must be >= 1")
    keys = np.array([d.ring_key for d in database])
    l1 = np.abs(keys - query.ring_key).sum(axis=1)
    cands = np.argsort(l1, kind="stable")[:candidate_k]
    hits = []
    for idx in cands:
        dist, shift = sc_distance(query, database[idx])
        if dist <= threshold:
            hits.append((int(idx), dist, shift_to_yaw(shift, query.sectors)))
    hits.sort(key=lambda h: (h[1], h[0]))
    return hits


def save_scan_context(desc: ScanContextDescriptor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(RSC_MAGIC + struct.pack("<2If", desc.rings, desc.sectors, desc.max_range))
        fh.write(desc.matrix.astype("<f4").tobytes())


def load_scan_context(path) -> ScanContextDescriptor:
    raw = Path(path).read_bytes()
    if raw[:4] != RSC_MAGIC:
        raise BadMagicError(f"{path}: expected magic {RSC_MAGIC!r}")
    nr, ns, max_range = struct.unpack("<2If", raw[4:16])
    payload = raw[16:]
    if len(payload) != 4 * nr * ns:
        raise DimensionMismatchError(f"{path}: payload size does not match {nr} x {ns}")
    mat = np.frombuffer(payload, dtype="<f4").reshape(nr, ns).astype(float)
    return ScanContextDescriptor(mat, float(max_range))
