"""Feature extraction and the guidance heatmap.

The reference encoder is a fixed bank of linear 3x3-ish filters followed by
two 2x2 average-pooling stages, giving 8 channels at stride 4. It has no
nonlinearity, so it is linear and translation-equivariant up to the stride.
Maps computed elsewhere can be loaded from ``.rfm`` files:

    b"RFM1" | u32 C | u32 Hf | u32 Wf | u32 stride | C*Hf*Wf float32   (little-endian)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage, signal

from .errors import BadMagicError, DimensionMismatchError, InvalidInputError, NonFiniteError
from .radar import CartesianImage

RFM_MAGIC = b"RFM1"
REFERENCE_STRIDE = 4

CHANNEL_NAMES = (
    "smooth",
    "grad_x",
    "grad_y",
    "grad_diag",
    "grad_antidiag",
    "neg_laplacian",
    "blurred_grad_s1",
    "blurred_grad_s2",
)
GRADIENT_CHANNELS = (1, 2, 3, 4, 6, 7)


@dataclass
class FeatureMap:
    """C x Hf x Wf float32 map; one cell covers ``stride`` x ``stride`` image pixels."""

    data: np.ndarray
    stride: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise InvalidInputError(f"feature data must be C x H x W, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("feature map contains non-finite values")
        if self.stride < 1:
            raise InvalidInputError("stride must be >= 1")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class GuidanceMap:
    values: np.ndarray  # Hf x Wf

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EncoderConfig:
    """``kind`` is ``"reference"`` or ``"external"``; external maps are read
    from ``<external_dir>/<scan_id>.rfm``."""

    kind: str = "reference"
    external_dir: Optional[str] = None


def _gaussian(sigma: float) -> np.ndarray:
    half = int(np.ceil(3 * sigma))
    t = np.arange(-half, half + 1)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def first_moment(kernel: np.ndarray) -> np.ndarray:
    """``sum k[r, c] * (c - c0, r - r0)`` about the kernel centre."""
    h, w = kernel.shape
    rows, cols = np.mgrid[0:h, 0:w]
    return np.array([np.sum(kernel * (cols - (w - 1) / 2)), np.sum(kernel * (rows - (h - 1) / 2))])


def _with_moment(kernel: np.ndarray, target) -> np.ndarray:
    """Rescale an odd kernel so its first moment equals ``target``."""
    m = first_moment(kernel)
    return kernel * (np.dot(target, m) / np.dot(m, m))


@lru_cache(maxsize=1)
def reference_kernels() -> tuple[np.ndarray, ...]:
    """Correlation kernels of the reference encoder, indexed [row, col].

    Gradient kernels are scaled to first moments (1, 0), (0, 1), (-1, -1),
    (-1, 1), (1, 0) at blur sigma 1 and (0, -1) at blur sigma 2. The moments
    cancel, so the channel mean has no odd part to first order and
    its peaks sit on the underlying blobs.
    """
    smooth_1d = np.array([1.0, 2.0, 1.0]) / 4
    diff_1d = np.array([-1.0, 0.0, 1.0]) / 2
    grad_x = np.outer(smooth_1d, diff_1d)
    grad_y = grad_x.T.copy()
    diag = np.array([[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]])
    antidiag = np.array([[0.0, -1.0, -2.0], [1.0, 0.0, -1.0], [2.0, 1.0, 0.0]])
    lap = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]) / 4

    def blurred(sigma, base):
        k = signal.convolve2d(_gaussian(sigma), base, mode="full")
        return k - k.mean()  # exact zero sum despite truncation

    return (
        np.outer(smooth_1d, smooth_1d),
        _with_moment(grad_x, (1.0, 0.0)),
        _with_moment(grad_y, (0.0, 1.0)),
        _with_moment(diag, (-1.0, -1.0)),
        _with_moment(antidiag, (-1.0, 1.0)),
        lap,
        _with_moment(blurred(1.0, grad_x), (1.0, 0.0)),
        _with_moment(blurred(2.0, grad_y), (0.0, -1.0)),
    )


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    x = x[..., : 2 * h, : 2 * w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def reference_encoder(pixels: np.ndarray) -> FeatureMap:
    pixels = np.asarray(pixels, dtype=float)
    if pixels.shape[0] < 2 * REFERENCE_STRIDE or pixels.shape[1] < 2 * REFERENCE_STRIDE:
        raise InvalidInputError(
            f"image {pixels.shape} too small for stride {REFERENCE_STRIDE}")
    responses = np.stack([ndimage.correlate(pixels, k, mode="constant", cval=0.0)
                          for k in reference_kernels()])
    return FeatureMap(_avg_pool2(_avg_pool2(responses)), REFERENCE_STRIDE)


def extract_features(image: CartesianImage, encoder: EncoderConfig = EncoderConfig(),
                     scan_id: Optional[str] = None) -> FeatureMap:
    if encoder.kind == "reference":
        return reference_encoder(image.pixels)
    if encoder.kind == "external":
        if encoder.external_dir is None or scan_id is None:
            raise InvalidInputError("external encoder needs external_dir and scan_id")
        fmap = load_feature_map(Path(encoder.external_dir) / f"{scan_id}.rfm")
        if fmap.height * fmap.stride > image.height or fmap.width * fmap.stride > image.width:
            raise DimensionMismatchError("external feature map larger than its image")
        return fmap
    raise InvalidInputError(f"unknown encoder kind {encoder.kind!r}")


def guidance_map(features: FeatureMap) -> GuidanceMap:
    """Per-cell mean over channels."""
    return GuidanceMap(features.data.astype(float).mean(axis=0))


def save_feature_map(fmap: FeatureMap, path) -> None:
    C, H, W = fmap.data.shape
    with open(path, "wb") as fh:
        fh.write(RFM_MAGIC + struct.pack("<4I", C, H, W, fmap.stride))
        fh.write(fmap.data.astype("<f4").tobytes(order="C"))


def load_feature_map(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if raw[:4] != RFM_MAGIC:
        raise BadMagicError(f"{path}: expected magic {RFM_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 20:
        raise DimensionMismatchError(f"{path}: truncated header")
    C, H, W, stride = struct.unpack("<4I", raw[4:20])
    payload = raw[20:]
    if len(payload) != 4 * C * H * W:
        raise DimensionMismatchError(
            f"{path}: payload has {len(payload)} bytes, header implies {4 * C * H * W}")
    data = np.frombuffer(payload, dtype="<f4").reshape(C, H, W)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: payload contains non-finite values")
    return FeatureMap(data.astype(np.float32), stride)
