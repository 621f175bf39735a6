"""Radar scan containers, polar to Cartesian projection, and scan file I/O.

A polar scan file is a JSON sidecar (``<name>.json``) describing the raster and
a raw payload (``<name>.bin``) of ``A*R`` little-endian float32 values stored
row-major by azimuth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError, NonFiniteError


@dataclass
class PolarScan:
    """Raw power raster, one row per azimuth and one column per range bin.

    Range bin ``i`` sits at range ``i * range_resolution``.
    """

    scan_id: str
    azimuths: np.ndarray
    power: np.ndarray
    range_resolution: float
    timestamp: int = 0

    def __post_init__(self):
        self.azimuths = np.asarray(self.azimuths, dtype=float).ravel()
        self.power = np.asarray(self.power, dtype=float)
        _validate_polar(self.azimuths, self.power, self.range_resolution)
        self.timestamp = int(self.timestamp)

    @property
    def azimuth_count(self) -> int:
        return self.power.shape[0]

    @property
    def range_bins(self) -> int:
        return self.power.shape[1]

    @property
    def max_range(self) -> float:
        return self.range_bins * self.range_resolution


def _validate_polar(azimuths, power, range_resolution):
    if power.ndim != 2 or power.shape[0] == 0 or power.shape[1] == 0:
        raise InvalidInputError(f"power must be a non-empty A x R matrix, got shape {power.shape}")
    if azimuths.shape[0] != power.shape[0]:
        raise DimensionMismatchError(
            f"{azimuths.shape[0]} azimuths for {power.shape[0]} power rows")
    if not np.all(np.isfinite(power)):
        raise NonFiniteError("power contains non-finite values")
    if power.min() < 0.0 or power.max() > 1.0:
        raise InvalidInputError("power must lie in [0, 1]")
    if not np.all(np.isfinite(azimuths)):
        raise NonFiniteError("azimuths contain non-finite values")
    if azimuths[0] < 0.0 or azimuths[-1] >= 2 * math.pi or np.any(np.diff(azimuths) <= 0):
        raise InvalidInputError("azimuths must be strictly increasing in [0, 2*pi)")
    if not range_resolution > 0:
        raise InvalidInputError("range_resolution must be positive")


def uniform_azimuths(count: int) -> np.ndarray:
    return 2 * math.pi * np.arange(count) / count


@dataclass
class CartesianImage:
    """Metric raster centred on the sensor.

    Pixel ``(col, row)`` maps to sensor-frame coordinates
    ``x = (col - cx) * mpp`` and ``y = (row - cy) * mpp`` where
    ``(cx, cy) = ((W - 1) / 2, (H - 1) / 2)``.
    """

    pixels: np.ndarray
    meters_per_pixel: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise InvalidInputError("pixels must be a 2-D array")
        if not np.all(np.isfinite(self.pixels)):
            raise NonFiniteError("pixels contain non-finite values")
        if not self.meters_per_pixel > 0:
            raise InvalidInputError("meters_per_pixel must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def center(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def metric_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Sensor-frame (x, y) coordinates of every pixel centre, each H x W."""
        cx, cy = self.center
        cols = (np.arange(self.width) - cx) * self.meters_per_pixel
        rows = (np.arange(self.height) - cy) * self.meters_per_pixel
        return np.meshgrid(cols, rows)


def polar_to_cartesian(scan: PolarScan, width: int, height: int,
                       meters_per_pixel: float) -> CartesianImage:
    """Resample a polar scan onto a sensor-centred Cartesian grid.

    Bilinear in (azimuth, range) with circular wrap in azimuth. Pixels whose
    radius exceeds ``R * range_resolution`` are set to exactly zero.
    """
    if width < 8 or height < 8:
        raise InvalidInputError("output image must be at least 8 x 8")
    if not meters_per_pixel > 0:
        raise InvalidInputError("meters_per_pixel must be positive")
    az = np.asarray(scan.azimuths, dtype=float)
    power = np.asarray(scan.power, dtype=float)
    if az.size == 0 or power.shape[0] == 0:
        raise InvalidInputError("scan has no azimuths")
    if not np.all(np.isfinite(power)):
        raise NonFiniteError("power contains non-finite values")

    A, R = power.shape
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    xs = (np.arange(width) - cx) * meters_per_pixel
    ys = (np.arange(height) - cy) * meters_per_pixel
    x, y = np.meshgrid(xs, ys)
    radius = np.hypot(x, y)
    bearing = np.mod(np.arctan2(y, x), 2 * math.pi)

    # azimuth neighbours with circular wrap
    hi = np.searchsorted(az, bearing, side="right")
    lo = hi - 1
    az_lo = np.where(lo < 0, az[-1] - 2 * math.pi, az[lo % A])
    az_hi = np.where(hi >= A, az[0] + 2 * math.pi, az[hi % A])
    lo %= A
    hi %= A
    span = az_hi - az_lo
    fa = np.where(span > 0, (bearing - az_lo) / np.where(span > 0, span, 1.0), 0.0)

    rb = np.clip(radius / scan.range_resolution, 0.0, R - 1.0)
    r0 = np.floor(rb).astype(int)
    r1 = np.minimum(r0 + 1, R - 1)
    fr = rb - r0

    top = power[lo, r0] + fr * (power[lo, r1] - power[lo, r0])
    bot = power[hi, r0] + fr * (power[hi, r1] - power[hi, r0])
    out = top + fa * (bot - top)
    out[radius > R * scan.range_resolution] = 0.0
    return CartesianImage(np.clip(out, 0.0, 1.0), meters_per_pixel)


def write_polar_scan(scan: PolarScan, path) -> Path:
    """Write ``<path>.json`` + ``<path>.bin``; returns the sidecar path."""
    base = Path(path).with_suffix("")
    sidecar = {
        "scan_id": scan.scan_id,
        "A": scan.azimuth_count,
        "R": scan.range_bins,
        "range_resolution": scan.range_resolution,
        "azimuths": [float(a) for a in scan.azimuths],
        "timestamp": scan.timestamp,
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")
    scan.power.astype("<f4").tofile(base.with_suffix(".bin"))
    return base.with_suffix(".json")


def read_polar_scan(path) -> PolarScan:
    """Read a scan from its sidecar (``.json``) or payload (``.bin``) path.

    An optional ``max_power`` sidecar key rescales raw values into [0, 1].
    """
    base = Path(path).with_suffix("")
    meta = json.loads(base.with_suffix(".json").read_text())
    A, R = int(meta["A"]), int(meta["R"])
    if A <= 0 or R <= 0:
        raise InvalidInputError("A and R must be positive")
    raw = np.fromfile(base.with_suffix(".bin"), dtype="<f4")
    if raw.size != A * R:
        raise DimensionMismatchError(f"payload has {raw.size} values, header implies {A * R}")
    power = raw.astype(float).reshape(A, R)
    if not np.all(np.isfinite(power)):
        raise NonFiniteError("payload contains non-finite values")
    max_power = float(meta.get("max_power", 1.0))
    if max_power != 1.0:
        power = np.clip(power / max_power, 0.0, 1.0)
    return PolarScan(
        scan_id=str(meta["scan_id"]),
        azimuths=np.asarray(meta["azimuths"], dtype=float),
        power=power,
        range_resolution=float(meta["range_resolution"]),
        timestamp=int(meta["timestamp"]),
    )
