"""Synthetic weather degradations for desk-scale training data.

Haze uses the scattering form ``I = J·t + A·(1 - t)``; rain streaks are
rasterized line segments screen-blended over the image; snow is soft disks
alpha-blended toward white; low light is a power law.  ``composite`` applies
haze, rain, snow, then low light.  Everything is deterministic in the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("haze", "rain", "snow", "lowlight", "composite")


@dataclass(frozen=True)
class DegradeSpec:
    kind: str = "composite"
    airlight: float = 0.85
    transmission: float = 0.6
    rain_count: int = 40
    rain_angle: float = -15.0
    rain_length: float = 9.0
    rain_intensity: float = 0.5
    snow_count: int = 20
    snow_radius: tuple[float, float] = (0.8, 2.0)
    snow_opacity: float = 0.8
    lowlight_exponent: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        checks = [
            (0.7 <= self.airlight <= 1.0, "airlight must lie in [0.7, 1]"),
            (0.0 <= self.transmission <= 1.0, "transmission must lie in [0, 1]"),
            (self.rain_count >= 0, "rain_count must be non-negative"),
            (-90.0 <= self.rain_angle <= 90.0, "rain_angle must lie in [-90, 90] degrees"),
            (self.rain_length > 0, "rain_length must be positive"),
            (0.0 <= self.rain_intensity <= 1.0, "rain_intensity must lie in [0, 1]"),
            (self.snow_count >= 0, "snow_count must be non-negative"),
            (0 < self.snow_radius[0] <= self.snow_radius[1], "snow_radius must be an increasing positive range"),
            (0.0 <= self.snow_opacity <= 1.0, "snow_opacity must lie in [0, 1]"),
            (self.lowlight_exponent >= 1.0, "lowlight_exponent must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


def random_spec(rng: np.random.Generator, kind: str = "composite", seed: int | None = None) -> DegradeSpec:
    """Draw haze parameters from ``A ∈ [0.7, 1]``, ``t ∈ [0.3, 1]``."""
    return DegradeSpec(
        kind=kind,
        airlight=float(rng.uniform(0.7, 1.0)),
        transmission=float(rng.uniform(0.3, 1.0)),
        rain_angle=float(rng.uniform(-30, 30)),
        seed=int(rng.integers(2**31)) if seed is None else seed,
    )


def haze(img: np.ndarray, airlight: float, transmission: float) -> np.ndarray:
    if transmission == 1.0:
        return img.copy()
    return img * transmission + airlight * (1.0 - transmission)


def rain_layer(shape, rng: np.random.Generator, count: int, angle_deg: float, length: float,
               intensity: float) -> np.ndarray:
    H, W = shape
    layer = np.zeros((H, W))
    theta = math.radians(angle_deg)
    dx, dy = math.sin(theta), math.cos(theta)
    steps = max(2, int(length * 2))
    for _ in range(count):
        x0, y0 = rng.uniform(0, W), rng.uniform(-length, H)
        strength = intensity * rng.uniform(0.6, 1.0)
        s = np.linspace(0.0, length, steps)
        xs = np.round(x0 + s * dx).astype(int)
        ys = np.round(y0 + s * dy).astype(int)
        ok = (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
        layer[ys[ok], xs[ok]] = np.maximum(layer[ys[ok], xs[ok]], strength)
    # soften along the streak axis
    return np.clip(0.5 * layer + 0.25 * (np.roll(layer, 1, axis=0) + np.roll(layer, -1, axis=0)), 0.0, 1.0)


def rain(img: np.ndarray, rng: np.random.Generator, spec: DegradeSpec) -> np.ndarray:
    m = rain_layer(img.shape[:2], rng, spec.rain_count, spec.rain_angle, spec.rain_length, spec.rain_intensity)
    return 1.0 - (1.0 - img) * (1.0 - m[..., None])


def snow(img: np.ndarray, rng: np.random.Generator, spec: DegradeSpec) -> np.ndarray:
    H, W = img.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W]
    mask = np.zeros((H, W))
    for _ in range(spec.snow_count):
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        r = rng.uniform(*spec.snow_radius)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        mask = np.maximum(mask, np.exp(-d2 / (2.0 * r * r)))
    alpha = spec.snow_opacity * mask[..., None]
    return img * (1.0 - alpha) + alpha


def lowlight(img: np.ndarray, exponent: float) -> np.ndarray:
    return np.power(img, exponent)


def degrade(clean: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    """Apply ``spec`` to an ``H×W×3`` image in [0, 1]."""
    img = np.asarray(clean, dtype=float)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an H×W×3 image, got {img.shape}")
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind in ("haze", "composite"):
        img = haze(img, spec.airlight, spec.transmission)
    if kind in ("rain", "composite"):
        img = rain(img, rng, spec)
    if kind in ("snow", "composite"):
        img = snow(img, rng, spec)
    if kind in ("lowlight", "composite"):
        img = lowlight(img, spec.lowlight_exponent)
    return np.clip(img, 0.0, 1.0)


def synthetic_scene(size: int | tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """A smooth random color scene with a few shapes, for training pairs."""
    H, W = (size, size) if isinstance(size, int) else size
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    img = np.empty((H, W, 3))
    for c in range(3):
        a, b, ph = rng.uniform(0.5, 3.0, 2).tolist() + [rng.uniform(0, 2 * np.pi)]
        img[..., c] = 0.5 + 0.25 * np.sin(2 * np.pi * (a * xx + b * yy) + ph)
    for _ in range(3):
        cy, cx, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.2)
        color = rng.uniform(0.15, 0.9, 3)
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[inside] = 0.5 * img[inside] + 0.5 * color
    return np.clip(img, 0.0, 1.0)
