"""Quaternion algebra and the quaternion encoding of color images.

A quaternion ``a + bi + cj + dk`` is handled as any array whose last axis has
length 4, so the scalar functions below also work element-wise on stacks of
quaternions.  Color images are encoded with luminance in the real part and
R, G, B in the three imaginary parts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Rec.601 luma weights; they sum to one so (1, 1, 1) maps to L = 1.
LUMA = (0.299, 0.587, 0.114)


class Quaternion(NamedTuple):
    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def hamilton(x, y) -> np.ndarray:
    """Hamilton product ``x ⊗ y`` over the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a1, b1, c1, d1 = np.moveaxis(x, -1, 0)
    a2, b2, c2, d2 = np.moveaxis(y, -1, 0)
    return np.stack(
        [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ],
        axis=-1,
    )


def conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnorm(q) -> np.ndarray | float:
    q = np.asarray(q, dtype=float)
    out = np.sqrt(np.sum(q * q, axis=-1))
    return float(out) if out.ndim == 0 else out


def luma(rgb: np.ndarray) -> np.ndarray:
    """Luma of an ``(..., 3)`` array."""
    rgb = np.asarray(rgb, dtype=float)
    return LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]


@dataclass
class QImage:
    """Quaternion image with planes ``(L, R, G, B)`` stored as a ``(4, H, W)`` array."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=float)
        if self.planes.ndim != 3 or self.planes.shape[0] != 4:
            raise ValueError(f"QImage planes must have shape (4, H, W), got {self.planes.shape}")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def L(self):
        return self.planes[0]

    @property
    def R(self):
        return self.planes[1]

    @property
    def G(self):
        return self.planes[2]

    @property
    def B(self):
        return self.planes[3]

    @property
    def rgb(self) -> np.ndarray:
        return np.moveaxis(self.planes[1:], 0, -1)

    def quaternions(self) -> np.ndarray:
        """Pixels as an ``(H, W, 4)`` quaternion array."""
        return np.moveaxis(self.planes, 0, -1)


def encode_image(rgb) -> QImage:
    """Encode an ``H×W×3`` image in [0, 1] as ``L + Ri + Gj + Bk``."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError(f"expected an H×W×3 image, got shape {rgb.shape}")
    if not np.all(np.isfinite(rgb)):
        raise ValueError("image contains non-finite values")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    planes = np.empty((4,) + rgb.shape[:2])
    planes[0] = luma(rgb)
    planes[1:] = np.moveaxis(rgb, -1, 0)
    return QImage(planes)


def decode_image(q) -> np.ndarray:
    """Drop the luminance plane and clamp R, G, B to [0, 1]."""
    planes = q.planes if isinstance(q, QImage) else np.asarray(q, dtype=float)
    return np.clip(np.moveaxis(planes[1:], 0, -1), 0.0, 1.0)
