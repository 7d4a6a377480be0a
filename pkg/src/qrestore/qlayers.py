"""Quaternion layers over the autodiff substrate.

A feature map of ``C`` quaternion channels is a real tensor with ``4·C``
channels grouped as ``[all real | all i | all j | all k]``.  Image-shaped
maps are ``B×4C×H×W``; token sequences are ``B×N×4C``.

Each quaternion layer stores four real weight tensors ``W0..W3`` and, on the
forward pass, assembles the ``4O×4I`` real kernel whose blocks carry the
Hamilton sign pattern of ``W ⊗ q``.  One real (grouped) convolution or
matmul then applies it.  ``Real*`` classes are the unconstrained twins with
the same real widths, used for the parameter-count comparison and the
real-network ablation.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# (component index, sign) for each (output component, input component) block
# of W ⊗ q.
HAMILTON_BLOCKS = (
    ((0, 1.0), (1, -1.0), (2, -1.0), (3, -1.0)),
    ((1, 1.0), (0, 1.0), (3, -1.0), (2, 1.0)),
    ((2, 1.0), (3, 1.0), (0, 1.0), (1, -1.0)),
    ((3, 1.0), (2, -1.0), (1, 1.0), (0, 1.0)),
)


class Module:
    """Walks attributes for parameters, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def weight_count(self) -> int:
        """Scalar count of weights, biases excluded."""
        return int(sum(p.size for n, p in self.named_parameters() if "weight" in n.rsplit(".", 1)[-1]))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def hamilton_kernel(w0, w1, w2, w3) -> Tensor:
    """Assemble the real ``4O×4I×...`` kernel of ``W ⊗ q`` from its components."""
    comps = [ad.as_tensor(w) for w in (w0, w1, w2, w3)]
    O, I = comps[0].shape[:2]
    rest = comps[0].shape[2:]
    big = np.empty((4 * O, 4 * I) + rest)
    for r, row in enumerate(HAMILTON_BLOCKS):
        for c, (idx, sign) in enumerate(row):
            big[r * O : (r + 1) * O, c * I : (c + 1) * I] = sign * comps[idx].data

    def bw(g):
        grads = [np.zeros(comps[0].shape) for _ in range(4)]
        for r, row in enumerate(HAMILTON_BLOCKS):
            for c, (idx, sign) in enumerate(row):
                grads[idx] += sign * g[r * O : (r + 1) * O, c * I : (c + 1) * I]
        return tuple(grads)

    return Tensor.from_op(big, comps, bw)


# ---------------------------------------------------------------- layout helpers


def qsplit(x: Tensor, axis: int = 1) -> list[Tensor]:
    """Split a quaternion map into its r, i, j, k component blocks."""
    n = x.shape[axis]
    if n % 4:
        raise ValueError(f"real channel count {n} is not a multiple of 4")
    c = n // 4
    sl = [slice(None)] * x.ndim
    parts = []
    for q in range(4):
        sl[axis] = slice(q * c, (q + 1) * c)
        parts.append(x[tuple(sl)])
    return parts


def qcat(xs, axis: int = 1) -> Tensor:
    """Concatenate quaternion maps channel-wise, keeping the component grouping."""
    split = [qsplit(ad.as_tensor(x), axis) for x in xs]
    return ad.concat([s[q] for q in range(4) for s in split], axis=axis)


def qchannels(x: Tensor, axis: int = 1) -> int:
    n = x.shape[axis]
    if n % 4:
        raise ValueError(f"real channel count {n} is not a multiple of 4")
    return n // 4


def to_tokens(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1)


def to_spatial(x: Tensor, H: int, W: int) -> Tensor:
    B, N, C = x.shape
    if N != H * W:
        raise ValueError(f"{N} tokens do not form a {H}×{W} grid")
    return x.transpose(0, 2, 1).reshape(B, C, H, W)


# ---------------------------------------------------------------- conv / linear


class QConv2d(Module):
    def __init__(self, in_q: int, out_q: int, k: int = 3, stride: int = 1, pad: int | None = None,
                 bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_q, self.out_q, self.k, self.stride = in_q, out_q, k, stride
        self.pad = k // 2 if pad is None else pad
        shape = (out_q, in_q, k, k)
        # fans of the assembled real kernel, so the quaternion layer and its
        # real twin start at the same scale
        fan_in, fan_out = 4 * in_q * k * k, 4 * out_q * k * k
        for comp in "rijk":
            setattr(self, f"weight_{comp}", ad.parameter(glorot(rng, shape, fan_in, fan_out)))
        self.bias = ad.parameter(np.zeros(4 * out_q)) if bias else None

    def kernel(self) -> Tensor:
        return hamilton_kernel(self.weight_r, self.weight_i, self.weight_j, self.weight_k)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != 4 * self.in_q:
            raise ValueError(f"expected {self.in_q} quaternion channels, got {x.shape[1] / 4:g}")
        return ad.conv2d(x, self.kernel(), self.bias, stride=self.stride, pad=self.pad)


class RealConv2d(Module):
    """Unconstrained real convolution with the same real widths as ``QConv2d``."""

    def __init__(self, in_q: int, out_q: int, k: int = 3, stride: int = 1, pad: int | None = None,
                 bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_q, self.out_q, self.k, self.stride = in_q, out_q, k, stride
        self.pad = k // 2 if pad is None else pad
        fan_in, fan_out = 4 * in_q * k * k, 4 * out_q * k * k
        self.weight = ad.parameter(glorot(rng, (4 * out_q, 4 * in_q, k, k), fan_in, fan_out))
        self.bias = ad.parameter(np.zeros(4 * out_q)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class QLinear(Module):
    """Hamilton-structured affine map on ``B×N×4C`` tokens."""

    def __init__(self, in_q: int, out_q: int, bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_q, self.out_q = in_q, out_q
        for comp in "rijk":
            setattr(self, f"weight_{comp}", ad.parameter(glorot(rng, (out_q, in_q), 4 * in_q, 4 * out_q)))
        self.bias = ad.parameter(np.zeros(4 * out_q)) if bias else None

    def kernel(self) -> Tensor:
        return hamilton_kernel(self.weight_r, self.weight_i, self.weight_j, self.weight_k)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != 4 * self.in_q:
            raise ValueError(f"expected {4 * self.in_q} real features, got {x.shape[-1]}")
        y = ad.matmul(x, self.kernel().transpose(1, 0))
        return y + self.bias if self.bias is not None else y


class RealLinear(Module):
    def __init__(self, in_q: int, out_q: int, bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_q, self.out_q = in_q, out_q
        self.weight = ad.parameter(glorot(rng, (4 * out_q, 4 * in_q), 4 * in_q, 4 * out_q))
        self.bias = ad.parameter(np.zeros(4 * out_q)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight.transpose(1, 0))
        return y + self.bias if self.bias is not None else y


def make_conv(quaternion: bool, *args, **kwargs) -> Module:
    return (QConv2d if quaternion else RealConv2d)(*args, **kwargs)


def make_linear(quaternion: bool, *args, **kwargs) -> Module:
    return (QLinear if quaternion else RealLinear)(*args, **kwargs)


class DepthwiseConv2d(Module):
    """Per-real-channel ``k×k`` convolution."""

    def __init__(self, channels: int, k: int = 3, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.k = channels, k
        self.weight = ad.parameter(glorot(rng, (channels, 1, k, k), k * k, k * k))
        self.bias = ad.parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, pad=self.k // 2, groups=self.channels)


# ---------------------------------------------------------------- transformer parts


class QMSA(Module):
    """Multi-head self-attention with quaternion projections.

    The score of a token pair is the real part of ``Σ q ⊗ conj(k)`` over the
    head's channels, which equals the dot product of the head's ``4·C/h``
    real components.
    """

    def __init__(self, q: int, heads: int, quaternion: bool = True, rng: np.random.Generator | None = None):
        if q % heads:
            raise ValueError(f"{q} quaternion channels cannot be split into {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.q, self.heads = q, heads
        self.to_q = make_linear(quaternion, q, q, rng=rng)
        self.to_k = make_linear(quaternion, q, q, rng=rng)
        self.to_v = make_linear(quaternion, q, q, rng=rng)
        self.proj = make_linear(quaternion, q, q, rng=rng)

    @property
    def head_dim(self) -> int:
        return 4 * self.q // self.heads

    def _heads(self, x: Tensor) -> Tensor:
        B, N, _ = x.shape
        h = self.heads
        return x.reshape(B, N, 4, h, self.q // h).transpose(0, 3, 1, 2, 4).reshape(B, h, N, self.head_dim)

    def attention(self, x: Tensor) -> Tensor:
        """Attention weights, ``B×h×N×N``."""
        q, k = self._heads(self.to_q(x)), self._heads(self.to_k(x))
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        return ad.softmax(scores, axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        B, N, _ = x.shape
        h = self.heads
        attn = self.attention(x)
        v = self._heads(self.to_v(x))
        out = ad.matmul(attn, v)
        out = out.reshape(B, h, N, 4, self.q // h).transpose(0, 2, 3, 1, 4).reshape(B, N, 4 * self.q)
        return self.proj(out)


class QFFN(Module):
    """``QMLP(GELU(DWC(QMLP(x)))) + x`` on tokens laid out on an ``H×W`` grid."""

    def __init__(self, q: int, ratio: int = 2, quaternion: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = q * ratio
        self.fc1 = make_linear(quaternion, q, hidden, rng=rng)
        self.dwc = DepthwiseConv2d(4 * hidden, 3, rng=rng)
        self.fc2 = make_linear(quaternion, hidden, q, rng=rng)

    def forward(self, x: Tensor, H: int, W: int) -> Tensor:
        y = to_spatial(self.fc1(x), H, W)
        y = ad.gelu(self.dwc(y))
        return self.fc2(to_tokens(y)) + x


class QTransformerBlock(Module):
    """``QFFN(QMSA(x) + x)``; the feed-forward part carries its own residual."""

    def __init__(self, q: int, heads: int, ffn_ratio: int = 2, quaternion: bool = True,
                 rng: np.random.Generator | None = None):
        self.msa = QMSA(q, heads, quaternion, rng=rng)
        self.ffn = QFFN(q, ffn_ratio, quaternion, rng=rng)

    def forward(self, x: Tensor, H: int, W: int) -> Tensor:
        return self.ffn(self.msa(x) + x, H, W)


class PatchEmbed(Module):
    """Overlapping patch embedding: strided conv, then flatten to tokens."""

    def __init__(self, in_q: int, embed_q: int, k: int, stride: int, quaternion: bool = True,
                 rng: np.random.Generator | None = None):
        if k <= stride:
            raise ValueError(f"overlapping embedding needs kernel > stride, got k={k}, stride={stride}")
        self.k, self.stride = k, stride
        self.conv = make_conv(quaternion, in_q, embed_q, k, stride, k // 2, rng=rng)

    def forward(self, x: Tensor) -> tuple[Tensor, int, int]:
        y = self.conv(x)
        return to_tokens(y), y.shape[2], y.shape[3]


# ---------------------------------------------------------------- functional forms


def qconv2d(x: Tensor, weights, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Quaternion convolution from explicit ``(W0, W1, W2, W3)`` components."""
    return ad.conv2d(x, hamilton_kernel(*weights), bias, stride=stride, pad=pad)


def qlinear(x: Tensor, weights, bias=None) -> Tensor:
    y = ad.matmul(x, hamilton_kernel(*weights).transpose(1, 0))
    return y + bias if bias is not None else y


def regenerate_luma(x: Tensor) -> Tensor:
    """Replace the real plane of a ``B×4×H×W`` image with the luma of its R, G, B planes."""
    from .qalg import LUMA

    rgb = x[:, 1:4]
    L = rgb[:, 0:1] * LUMA[0] + rgb[:, 1:2] * LUMA[1] + rgb[:, 2:3] * LUMA[2]
    return ad.concat([L, rgb], axis=1)
