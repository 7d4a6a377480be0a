"""Structure/texture decomposition and the DNet refinement network.

The initial split follows ``I = S ∘ T``: the structure map is the local
3×3 mean of the exponentiated luma gradient magnitude, and the texture is
``I / S`` per color plane.  Both are clamped (``S ≥ eps``, ``T ≤ t_max``) so
flat regions do not divide by zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DecompParams
from .qalg import LUMA, QImage, luma
from .qlayers import Module, make_conv


@dataclass
class DecompResult:
    S: QImage
    T: QImage
    G: np.ndarray


def gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    """``sqrt(gx² + gy²)`` from central differences with replicated borders.

    Works on any array whose last two axes are ``H×W``.
    """
    width = [(0, 0)] * (plane.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(np.asarray(plane, dtype=float), width, mode="edge")
    gx = 0.5 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2])
    gy = 0.5 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1])
    return np.sqrt(gx * gx + gy * gy)


def box_mean(x: np.ndarray, size: int) -> np.ndarray:
    r = size // 2
    width = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    p = np.pad(x, width, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(p, (size, size), axis=(-2, -1))
    return win.mean(axis=(-2, -1))


def _luma_plane(I) -> np.ndarray:
    return I.L if isinstance(I, QImage) else np.asarray(I, dtype=float)


def guidance_map(I, gamma_t: float = 0.5) -> np.ndarray:
    """``|∇I|^gamma_t`` of the luma plane."""
    if gamma_t <= 0:
        raise ValueError("gamma_t must be positive")
    return gradient_magnitude(_luma_plane(I)) ** gamma_t


def structure_map(I, gamma_s: float = 1.5, patch: int = 3, eps: float = 1e-3, clamp: bool = True) -> np.ndarray:
    """Local mean of ``|∇I|^gamma_s`` over a ``patch×patch`` window, clamped to ``[eps, 1]``."""
    if gamma_s <= 0:
        raise ValueError("gamma_s must be positive")
    if patch % 2 == 0:
        raise ValueError("patch size must be odd")
    s0 = box_mean(gradient_magnitude(_luma_plane(I)) ** gamma_s, patch)
    return np.clip(s0, eps, 1.0) if clamp else s0


def _planes_from_rgb(rgb_planes: np.ndarray) -> np.ndarray:
    """Prepend the luma plane to a ``(..., 3, H, W)`` stack."""
    L = LUMA[0] * rgb_planes[..., 0, :, :] + LUMA[1] * rgb_planes[..., 1, :, :] + LUMA[2] * rgb_planes[..., 2, :, :]
    return np.concatenate([L[..., None, :, :], rgb_planes], axis=-3)


def structure_image(s0: np.ndarray) -> QImage:
    """A scalar structure map as a gray quaternion image."""
    return QImage(_planes_from_rgb(np.repeat(s0[None], 3, axis=0)))


def texture_init(I: QImage, s0: np.ndarray, t_max: float = 10.0) -> QImage:
    """``T0 = I ⊘ S0`` per color plane, clamped to ``[0, t_max]``."""
    rgb = I.planes[1:] / s0[None]
    return QImage(_planes_from_rgb(np.clip(rgb, 0.0, t_max)))


def decompose(I: QImage, params: DecompParams = DecompParams()) -> DecompResult:
    G = guidance_map(I, params.gamma_t)
    s0 = structure_map(I, params.gamma_s, params.patch, params.eps)
    return DecompResult(structure_image(s0), texture_init(I, s0, params.t_max), G)


def decompose_batch(x: np.ndarray, params: DecompParams = DecompParams()):
    """Batched split of ``B×4×H×W`` quaternion images into ``(S0, T0, G)`` arrays."""
    L = x[:, 0]
    G = guidance_map(L, params.gamma_t)
    s0 = structure_map(L, params.gamma_s, params.patch, params.eps)
    S = _planes_from_rgb(np.repeat(s0[:, None], 3, axis=1))
    T = _planes_from_rgb(np.clip(x[:, 1:] / s0[:, None], 0.0, params.t_max))
    return S, T, G


def recompose_error_bound(I: QImage, s0: np.ndarray, t_max: float = 10.0) -> np.ndarray:
    """Per-pixel worst case of ``|S0·T0 - I|`` under the clamp policy.

    The floor on S0 does not break the product because T0 is computed from
    the clamped S0; only the texture ceiling does, and then the product is
    ``S0·t_max < I``.
    """
    return np.maximum(I.planes[1:] - s0[None] * t_max, 0.0)


class DNet(Module):
    """Three quaternion 3×3 convolutions: ReLU, ReLU, sigmoid."""

    def __init__(self, width: int = 4, quaternion: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = make_conv(quaternion, 1, width, 3, rng=rng)
        self.conv2 = make_conv(quaternion, width, width, 3, rng=rng)
        self.conv3 = make_conv(quaternion, width, 1, 3, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        y = ad.relu(self.conv1(x))
        y = ad.relu(self.conv2(y))
        return ad.sigmoid(self.conv3(y))


def dnet_refine(x: QImage, net: DNet) -> QImage:
    with ad.no_grad():
        out = net(Tensor(x.planes[None]))
    return QImage(out.data[0])
