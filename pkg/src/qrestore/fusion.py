"""Attentive fusion (FNet), gamma correction and recomposition.

Fusion runs at image resolution on one-quaternion-channel maps: each
attention map is a sigmoid-gated two-layer convolution of
``[component, damaged image]``, and the fused components multiply back into
the restored image.  A final projection mixes that product with the damaged
image.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .qlayers import Module, make_conv, qcat, regenerate_luma


class AttentionMap(Module):
    """``sigmoid(W2 relu(W1 [f, I]))`` with 3×3 quaternion convolutions."""

    def __init__(self, width: int = 4, quaternion: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = make_conv(quaternion, 2, width, 3, rng=rng)
        self.conv2 = make_conv(quaternion, width, 1, 3, rng=rng)

    def forward(self, component: Tensor, damaged: Tensor) -> Tensor:
        if component.shape != damaged.shape:
            raise ValueError(f"cannot concatenate {component.shape} with {damaged.shape}")
        return ad.sigmoid(self.conv2(ad.relu(self.conv1(qcat([component, damaged])))))


class ProjectOut(Module):
    """3×3 projection of the fused map, concatenated with the damaged image, then a 3×3 conv and sigmoid."""

    def __init__(self, quaternion: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.proj = make_conv(quaternion, 1, 1, 3, rng=rng)
        self.out = make_conv(quaternion, 2, 1, 3, rng=rng)

    def forward(self, fused: Tensor, damaged: Tensor) -> Tensor:
        return ad.sigmoid(self.out(qcat([self.proj(fused), damaged])))


def gamma_correct(S, gamma: float) -> Tensor:
    """Power law on the color planes of a ``B×4×H×W`` map in [0, 1]; luma regenerated."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    S = ad.as_tensor(S)
    rgb = ad.pow(S[:, 1:4], gamma)
    return regenerate_luma(ad.concat([S[:, 0:1], rgb], axis=1))


def fuse(F_S, F_T, M_S, M_T) -> Tensor:
    """``M_S ⊙ F_S + M_T ⊙ F_T`` (element-wise)."""
    shapes = {ad.as_tensor(t).shape for t in (F_S, F_T, M_S, M_T)}
    if len(shapes) != 1:
        raise ValueError(f"fusion inputs have mismatched shapes: {sorted(shapes)}")
    return ad.mul(M_S, F_S) + ad.mul(M_T, F_T)


def recompose(S, T) -> Tensor:
    """Element-wise product of the color planes, clamped to [0, 1]; luma regenerated."""
    S, T = ad.as_tensor(S), ad.as_tensor(T)
    if S.shape != T.shape:
        raise ValueError(f"structure {S.shape} and texture {T.shape} differ in shape")
    rgb = ad.clip(ad.mul(S[:, 1:4], T[:, 1:4]), 0.0, 1.0)
    return regenerate_luma(ad.concat([S[:, 0:1], rgb], axis=1))
