"""QSSIM, SSIM and PSNR.

QSSIM treats every pixel as a quaternion ``(L, R, G, B)``.  Over each
non-overlapping 8×8 window it combines a luminance term built from the
norms of the quaternion means with a structure term built from the norm of
the quaternion covariance ``mean(dev_gt ⊗ conj(dev_rec))``.  The same tensor
code serves the metric and the differentiable training loss.

Stabilizers use the dynamic range of the quantity they stabilize: a pixel
quaternion with components in [0, 1] has norm up to 2, so QSSIM uses
``(0.01·2)²`` and ``(0.03·2)²`` while luma SSIM uses ``0.01²`` and ``0.03²``.
On gray images (all four components equal) the two indices then coincide
wherever the window covariance is non-negative.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .qalg import QImage, encode_image, luma

WINDOW = 8
K1, K2 = 0.01, 0.03
QSSIM_C1 = (K1 * 2.0) ** 2
QSSIM_C2 = (K2 * 2.0) ** 2
SSIM_C1 = K1**2
SSIM_C2 = K2**2
PSNR_CAP = 100.0


def _as_planes(img) -> np.ndarray:
    """``(4, H, W)`` planes from a QImage, a plane array or an RGB image."""
    if isinstance(img, QImage):
        return img.planes
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return encode_image(arr).planes
    if arr.ndim == 3 and arr.shape[0] == 4:
        return arr
    raise ValueError(f"cannot interpret array of shape {arr.shape} as an image")


def _windows(x: Tensor, window: int) -> Tensor:
    """``B×C×H×W`` to ``B×nh×nw×C×window²`` (trailing rows/cols past the last full window dropped)."""
    B, C, H, W = x.shape
    if H < window or W < window:
        raise ValueError(f"image {H}×{W} is smaller than the {window}×{window} window")
    nh, nw = H // window, W // window
    x = x[:, :, : nh * window, : nw * window]
    x = x.reshape(B, C, nh, window, nw, window).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(B, nh, nw, C, window * window)


def qssim_map(gt, rec, window: int = WINDOW, c1: float = QSSIM_C1, c2: float = QSSIM_C2) -> Tensor:
    """Per-window QSSIM of ``B×4×H×W`` tensors; returns ``B×nh×nw``."""
    gt, rec = ad.as_tensor(gt), ad.as_tensor(rec)
    if gt.shape != rec.shape:
        raise ValueError(f"image shapes differ: {gt.shape} vs {rec.shape}")
    if gt.shape[1] != 4:
        raise ValueError("QSSIM needs quaternion images with 4 planes")
    g = _windows(gt, window)
    r = _windows(rec, window)
    mu_g = g.mean(axis=-1, keepdims=True)
    mu_r = r.mean(axis=-1, keepdims=True)
    n_g = (mu_g * mu_g).sum(axis=(-2, -1))
    n_r = (mu_r * mu_r).sum(axis=(-2, -1))
    lum = (2.0 * ad.sqrt(n_g * n_r) + c1) / (n_g + n_r + c1)

    dg = g - mu_g
    dr = r - mu_r
    a1, b1, c1_, d1 = (dg[..., i, :] for i in range(4))
    a2, b2, c2_, d2 = (dr[..., i, :] for i in range(4))
    var_g = (dg * dg).sum(axis=-2).mean(axis=-1)
    var_r = (dr * dr).sum(axis=-2).mean(axis=-1)
    # dev_gt ⊗ conj(dev_rec), averaged over the window
    cov_r = (dg * dr).sum(axis=-2).mean(axis=-1)
    cov_i = (-a1 * b2 + b1 * a2 - c1_ * d2 + d1 * c2_).mean(axis=-1)
    cov_j = (-a1 * c2_ + b1 * d2 + c1_ * a2 - d1 * b2).mean(axis=-1)
    cov_k = (-a1 * d2 - b1 * c2_ + c1_ * b2 + d1 * a2).mean(axis=-1)
    cov_norm = ad.sqrt(cov_r * cov_r + cov_i * cov_i + cov_j * cov_j + cov_k * cov_k)
    struct = (2.0 * cov_norm + c2) / (var_g + var_r + c2)
    return lum * struct


def qssim_tensor(gt, rec, window: int = WINDOW) -> Tensor:
    return qssim_map(gt, rec, window).mean()


def qssim_loss(gt, rec, window: int = WINDOW) -> Tensor:
    """``1 - QSSIM`` as a scalar on the tape; gradients flow into ``rec``."""
    return 1.0 - qssim_tensor(gt, rec, window)


def qssim(gt, rec, window: int = WINDOW) -> float:
    g, r = _as_planes(gt), _as_planes(rec)
    if g.shape != r.shape:
        raise ValueError(f"image shapes differ: {g.shape} vs {r.shape}")
    with ad.no_grad():
        return float(qssim_tensor(Tensor(g[None]), Tensor(r[None]), window).data)


def _luma_of(img) -> np.ndarray:
    if isinstance(img, QImage):
        return luma(img.rgb)
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return luma(arr)
    if arr.ndim == 3 and arr.shape[0] == 4:
        return luma(np.moveaxis(arr[1:], 0, -1))
    if arr.ndim == 2:
        return arr
    raise ValueError(f"cannot interpret array of shape {arr.shape} as an image")


def ssim(gt, rec, window: int = WINDOW) -> float:
    """Single-scale SSIM of the luma planes over non-overlapping windows."""
    g, r = _luma_of(gt), _luma_of(rec)
    if g.shape != r.shape:
        raise ValueError(f"image shapes differ: {g.shape} vs {r.shape}")
    gw = _windows(Tensor(g[None, None]), window).data[..., 0, :]
    rw = _windows(Tensor(r[None, None]), window).data[..., 0, :]
    mg, mr = gw.mean(axis=-1), rw.mean(axis=-1)
    dg, dr = gw - mg[..., None], rw - mr[..., None]
    vg, vr = (dg * dg).mean(axis=-1), (dr * dr).mean(axis=-1)
    cov = (dg * dr).mean(axis=-1)
    s = ((2 * mg * mr + SSIM_C1) * (2 * cov + SSIM_C2)) / ((mg * mg + mr * mr + SSIM_C1) * (vg + vr + SSIM_C2))
    return float(s.mean())


def _rgb_of(img) -> np.ndarray:
    if isinstance(img, QImage):
        return img.rgb
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 3 and arr.shape[0] == 4:
        return np.moveaxis(arr[1:], 0, -1)
    return arr


def psnr(gt, rec) -> float:
    """``10·log10(1 / MSE)`` over the color planes, capped at 100 dB."""
    g, r = _rgb_of(gt), _rgb_of(rec)
    if g.shape != r.shape:
        raise ValueError(f"image shapes differ: {g.shape} vs {r.shape}")
    mse = float(np.mean((g - r) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
