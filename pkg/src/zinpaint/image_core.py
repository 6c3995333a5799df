"""Rasters, masks, patch windows and the fill front.

Pixel coordinates are ``(row, col)`` pairs.  Images are stored as
``(height, width, channels)`` uint8 arrays, masks as boolean ``known`` maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class RasterImage:
    """8-bit image with 1 (grayscale) or 3 (RGB) channels."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W) or (H, W, 1|3) data, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {data.dtype}")
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "RasterImage":
        return RasterImage(self.data.copy())


@dataclass
class MaskImage:
    """Per-pixel KNOWN (True) / UNKNOWN (False) state."""

    known: np.ndarray

    def __post_init__(self):
        known = np.asarray(self.known)
        if known.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {known.shape}")
        self.known = np.ascontiguousarray(known, dtype=np.bool_)

    @classmethod
    def from_gray(cls, gray: np.ndarray) -> "MaskImage":
        """Mask from an 8-bit image; values >= 128 are KNOWN."""
        gray = np.asarray(gray)
        if gray.ndim == 3:
            gray = gray[:, :, 0]
        return cls(gray >= 128)

    def to_gray(self) -> np.ndarray:
        return np.where(self.known, 255, 0).astype(np.uint8)

    @property
    def height(self) -> int:
        return self.known.shape[0]

    @property
    def width(self) -> int:
        return self.known.shape[1]

    def unknown_count(self) -> int:
        return int(self.known.size - np.count_nonzero(self.known))

    def copy(self) -> "MaskImage":
        return MaskImage(self.known.copy())


class PatchKey(NamedTuple):
    """Top-left corner of a dictionary patch."""

    x: int
    y: int

    def encode(self, width: int) -> int:
        """Integer key whose order is row-major order."""
        return self.y * width + self.x

    @classmethod
    def decode(cls, key: int, width: int) -> "PatchKey":
        y, x = divmod(int(key), width)
        return cls(x, y)


@dataclass(frozen=True)
class PatchView:
    """Values and known flags of a K x K window; unknown pixels read 0."""

    values: np.ndarray  # (K, K, channels) uint8
    known: np.ndarray  # (K, K) bool

    @property
    def K(self) -> int:
        return self.known.shape[0]


def check_pair(image: RasterImage, mask: MaskImage) -> None:
    if (image.height, image.width) != (mask.height, mask.width):
        raise ValueError(
            f"mask is {mask.width}x{mask.height} but image is {image.width}x{image.height}")


def check_patch_size(K: int) -> None:
    if K < 3 or K % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 3, got {K}")


def window_origin(center, K: int, height: int, width: int) -> tuple[int, int]:
    """Top-left corner of the window centred at ``center``; raises if it leaves the image."""
    r, c = int(center[0]), int(center[1])
    h = (K - 1) // 2
    if r - h < 0 or c - h < 0 or r + h >= height or c + h >= width:
        raise IndexError(f"{K}x{K} window at {(r, c)} leaves the {width}x{height} image")
    return r - h, c - h


def clamp_center(center, K: int, height: int, width: int) -> tuple[int, int]:
    """Nearest centre whose window fits inside the image."""
    h = (K - 1) // 2
    r = min(max(int(center[0]), h), height - 1 - h)
    c = min(max(int(center[1]), h), width - 1 - h)
    return r, c


def extract_patch(image: RasterImage, mask: MaskImage, center, K: int) -> PatchView:
    """Copy the K x K window centred at ``center`` (row, col)."""
    check_patch_size(K)
    check_pair(image, mask)
    r0, c0 = window_origin(center, K, image.height, image.width)
    known = mask.known[r0:r0 + K, c0:c0 + K].copy()
    values = image.data[r0:r0 + K, c0:c0 + K].copy()
    values[~known] = 0
    return PatchView(values, known)


def fillfront_map(known: np.ndarray) -> np.ndarray:
    """Boolean map of KNOWN pixels with an UNKNOWN 4-neighbour."""
    unknown = ~known
    near = np.zeros_like(known)
    near[1:, :] |= unknown[:-1, :]
    near[:-1, :] |= unknown[1:, :]
    near[:, 1:] |= unknown[:, :-1]
    near[:, :-1] |= unknown[:, 1:]
    return known & near


def compute_fillfront(mask: MaskImage) -> np.ndarray:
    """Fill-front pixels as an ``(n, 2)`` array of (row, col), row-major."""
    return np.argwhere(fillfront_map(mask.known))
