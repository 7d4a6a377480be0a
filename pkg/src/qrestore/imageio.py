"""8-bit PNG / PPM reading and writing with round-half-up quantization."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] to 0..255, rounding halves up."""
    return np.floor(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB (or gray) PNG/PPM as ``H×W×3`` floats in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L", "RGBA", "P"):
            raise ValueError(f"{path}: unsupported image mode {im.mode} (8-bit RGB expected)")
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(float) / 255.0


def write_image(path: str | Path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    # fixed encoder settings keep repeated writes byte-identical
    Image.fromarray(arr, mode="RGB").save(path, format=fmt)
