"""Twin quaternion transformer encoder-decoders (TNet-H, TNet-S).

Each encoder runs four stages of overlapping patch embedding followed by
quaternion transformer blocks.  When features are shared, the two
fourth-stage outputs are concatenated ``[H | S]`` and both decoders start
from that joint map.  Decoders upsample three times (nearest 2×, conv, skip
concatenation, conv), reduce to one quaternion channel with a 1×1 conv,
upsample to full resolution, and mix with the stage input through a final
3×3 conv and sigmoid.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TNetConfig
from .qlayers import Module, PatchEmbed, QTransformerBlock, make_conv, qcat, to_spatial


class Stage(Module):
    def __init__(self, in_q: int, out_q: int, k: int, stride: int, heads: int, depth: int, ffn_ratio: int,
                 quaternion: bool, rng: np.random.Generator):
        self.embed = PatchEmbed(in_q, out_q, k, stride, quaternion, rng=rng)
        self.blocks = [QTransformerBlock(out_q, heads, ffn_ratio, quaternion, rng=rng) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        tokens, H, W = self.embed(x)
        for blk in self.blocks:
            tokens = blk(tokens, H, W)
        return to_spatial(tokens, H, W)


class UpStage(Module):
    def __init__(self, in_q: int, skip_q: int, out_q: int, quaternion: bool, rng: np.random.Generator):
        self.up = make_conv(quaternion, in_q, out_q, 3, rng=rng)
        self.fuse = make_conv(quaternion, out_q + skip_q, out_q, 3, rng=rng)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        y = ad.upsample_nearest(x, 2)
        # a rounded-up deeper map can overshoot the skip by one row/column
        h, w = skip.shape[-2:]
        if y.shape[-2:] != (h, w):
            y = y[:, :, :h, :w]
        y = ad.relu(self.up(y))
        return ad.relu(self.fuse(qcat([y, skip])))


class TNet(Module):
    def __init__(self, cfg: TNetConfig = TNetConfig(), quaternion: bool = True, in_q: int = 1,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        w = cfg.widths
        ins = (in_q,) + tuple(w[:-1])
        self.stages = [
            Stage(ins[i], w[i], cfg.kernels[i], cfg.strides[i], cfg.heads[i], cfg.depth, cfg.ffn_ratio, quaternion, rng)
            for i in range(4)
        ]
        top = 2 * w[3] if cfg.share_features else w[3]
        self.ups = [
            UpStage(top, w[2], w[2], quaternion, rng),
            UpStage(w[2], w[1], w[1], quaternion, rng),
            UpStage(w[1], w[0], w[0], quaternion, rng),
        ]
        self.reduce = make_conv(quaternion, w[0], in_q, 1, rng=rng)
        self.head = make_conv(quaternion, 2 * in_q, in_q, 3, rng=rng)

    def check_input(self, x: Tensor):
        H, W = x.shape[-2:]
        s = self.cfg.input_multiple
        if H % s or W % s:
            raise ValueError(f"image sides {H}×{W} must be multiples of {s}")

    def encode(self, x: Tensor) -> list[Tensor]:
        self.check_input(x)
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats

    def decode(self, top: Tensor, skips: list[Tensor], x: Tensor) -> Tensor:
        for up, skip in zip(self.ups, (skips[2], skips[1], skips[0])):
            if up.up.in_q * 4 != top.shape[1]:
                raise ValueError(f"decoder expects {up.up.in_q} quaternion channels, got {top.shape[1] // 4}")
            top = up(top, skip)
        y = ad.upsample_nearest(self.reduce(top), self.cfg.strides[0])
        return ad.sigmoid(self.head(qcat([y, x])))


def share_stage4(fH: Tensor, fS: Tensor) -> Tensor:
    """Join the two fourth-stage maps as ``[H-features | S-features]``."""
    if fH.shape[2:] != fS.shape[2:]:
        raise ValueError(f"stage-4 spatial sizes differ: {fH.shape[2:]} vs {fS.shape[2:]}")
    return qcat([fH, fS])


def tnet_pair(tnet_h: TNet, tnet_s: TNet, x_h: Tensor, x_s: Tensor, share: bool = True) -> tuple[Tensor, Tensor]:
    """Clean the structure and texture paths; returns ``(S_clean, T_clean)``."""
    fH = tnet_h.encode(x_h)
    fS = tnet_s.encode(x_s)
    if share:
        top_h = top_s = share_stage4(fH[3], fS[3])
    else:
        top_h, top_s = fH[3], fS[3]
    return tnet_h.decode(top_h, fH, x_h), tnet_s.decode(top_s, fS, x_s)


class LatentM(Module):
    """1×1 quaternion convolution with softplus, giving a positive multiplier field."""

    def __init__(self, quaternion: bool = True, rng: np.random.Generator | None = None):
        self.conv = make_conv(quaternion, 1, 1, 1, rng=rng)

    def forward(self, s_clean: Tensor) -> Tensor:
        return ad.softplus(self.conv(s_clean))


def closed_form_M(S, I, A: float, t, eps: float = 1e-3) -> np.ndarray:
    """Reference multiplier ``(S + tA - A) / (t I)`` from the scattering model."""
    S = np.asarray(S, dtype=float)
    I = np.asarray(I, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("transmission must lie in (0, 1]")
    if np.any(I < eps):
        raise ValueError(f"intensity below {eps} is rejected")
    return (S + t * A - A) / (t * I)
