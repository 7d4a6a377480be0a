"""A small dense tensor with reverse-mode automatic differentiation.

Every operation on a :class:`Tensor` that requires gradients records its
parents and a backward rule.  :func:`backward` orders the recorded graph
topologically and walks it once in reverse, accumulating gradients into the
leaves.  Arrays are plain numpy arrays; grouped convolution is done with an
im2col view and batched matmul.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DIV_EPS = 1e-12

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DomainError(ArithmeticError):
    """Raised when an operation is evaluated outside its domain."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or infinity."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Create the output of an op.

        ``backward(g)`` receives the output gradient and returns one gradient
        (or ``None``) per parent.
        """
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # array-like surface
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=float), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(np.abs(b.data) < DIV_EPS):
        raise DomainError(f"division by a value below {DIV_EPS}")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), bw)


def pow(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = np.power(a.data, p)
    return Tensor.from_op(out, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),))


def abs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * sign,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor.from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """Exact GELU, ``x Φ(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return Tensor.from_op(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


_TINY = np.finfo(float).tiny


def _flush(a: np.ndarray) -> np.ndarray:
    """Zero subnormal entries in place.

    Underflowed exponentials otherwise leak subnormals into the GEMMs,
    which then run several times slower.
    """
    a[np.abs(a) < _TINY] = 0.0
    return a


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return _flush(np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (_flush(g * out * (1.0 - out)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = _sigmoid(x)
    return Tensor.from_op(out, (a,), lambda g: (g * sig,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _flush(np.exp(a.data))
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < DIV_EPS):
        raise DomainError("log of a value below 1e-12")
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a, floor: float = 1e-12) -> Tensor:
    """Square root whose backward rule is capped where the input is ~0."""
    a = as_tensor(a)
    out = np.sqrt(np.maximum(a.data, 0.0))
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / np.maximum(out, floor),))


def clip(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return Tensor.from_op(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shapes


def sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor.from_op(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(a.shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return Tensor.from_op(a.data[idx], (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data @ b.data, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = _flush(np.exp(z))
    out = _flush(e / e.sum(axis=axis, keepdims=True))
    return Tensor.from_op(
        out, (a,), lambda g: (_flush(out * (g - (g * out).sum(axis=axis, keepdims=True))),)
    )


# ---------------------------------------------------------------- image ops


def _pad_index(n: int, p: int, mode: str) -> np.ndarray:
    return np.pad(np.arange(n), p, mode={"reflect": "reflect", "replicate": "edge"}[mode])


def pad2d(a, p: int, mode: str = "zero") -> Tensor:
    """Pad the last two axes by ``p`` using ``zero``, ``reflect`` or ``replicate``."""
    a = as_tensor(a)
    if p == 0:
        return a
    if mode == "zero":
        width = [(0, 0)] * (a.ndim - 2) + [(p, p), (p, p)]
        return Tensor.from_op(np.pad(a.data, width), (a,), lambda g: (g[..., p:-p, p:-p],))
    if mode not in ("reflect", "replicate"):
        raise ValueError(f"unknown padding mode {mode!r}")
    ri = _pad_index(a.shape[-2], p, mode)
    ci = _pad_index(a.shape[-1], p, mode)
    out = a.data[..., ri[:, None], ci[None, :]]

    def bw(g):
        # adjoint of the gather: rows then columns
        rows = np.zeros(g.shape[:-2] + (a.shape[-2], g.shape[-1]))
        np.add.at(rows, (Ellipsis, ri, slice(None)), g)
        full = np.zeros(a.shape)
        np.add.at(full, (Ellipsis, slice(None), ci), rows)
        return (full,)

    return Tensor.from_op(out, (a,), bw)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, bias=None, stride: int = 1, pad: int = 0, groups: int = 1, pad_mode: str = "zero") -> Tensor:
    """Grouped 2-D cross-correlation.

    ``x`` is ``B×C×H×W``, ``w`` is ``O×(C/groups)×k×k`` and ``bias`` has
    length ``O``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    B, C, H, W = x.shape
    O, Cg, k, k2 = w.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if C % groups or O % groups:
        raise ValueError(f"channels ({C} in, {O} out) not divisible by groups={groups}")
    if Cg != C // groups:
        raise ValueError(f"weight expects {Cg} channels per group, input has {C // groups}")
    Ho, Wo = conv_output_size(H, k, stride, pad), conv_output_size(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"input {H}×{W} too small for kernel {k} with pad {pad}")
    if pad and pad_mode != "zero":
        x = pad2d(x, pad, pad_mode)
        pad = 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if groups == C and Cg == 1 and O == C:
        return _depthwise(x, w, bias, xp, stride, pad, Ho, Wo)
    g, Og = groups, O // groups
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (B, C, k, k, Ho, Wo), (sb, sc, sh, sw, sh * stride, sw * stride), writeable=False
    )
    K, L = Cg * k * k, Ho * Wo
    # columns laid out (group, K, batch·pixels) so each group is one GEMM
    cols = view.reshape(B, g, K, L).transpose(1, 2, 0, 3).reshape(g, K, B * L)
    wm = w.data.reshape(g, Og, K)
    out = (wm @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, O, 1, 1)
        parents.append(bias)

    def bw(gout):
        gm = gout.transpose(1, 0, 2, 3).reshape(g, Og, B * L)
        gw = gx = None
        if w.requires_grad:
            gw = (gm @ np.swapaxes(cols, -1, -2)).reshape(w.shape)
        if x.requires_grad:
            dcols = (np.swapaxes(wm, -1, -2) @ gm).reshape(g, Cg, k, k, B, Ho, Wo)
            dcols = dcols.reshape(C, k, k, B, Ho, Wo)
            dxp = np.zeros((C, B) + xp.shape[2:])
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[:, i, j]
            dxp = dxp.transpose(1, 0, 2, 3)
            gx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor.from_op(out, parents, bw)


def _depthwise(x, w, bias, xp, stride, pad, Ho, Wo):
    """One filter per channel, as a sum of shifted, scaled copies."""
    B, C, H, W = x.shape
    k = w.shape[-1]
    wd = w.data[:, 0]
    out = np.zeros((B, C, Ho, Wo))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] * wd[None, :, i, j, None, None]
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, C, 1, 1)
        parents.append(bias)

    def bw(gout):
        gw = np.zeros(w.shape) if w.requires_grad else None
        dxp = np.zeros(xp.shape) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + stride * Ho, stride), slice(j, j + stride * Wo, stride))
                if gw is not None:
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", gout, xp[sl])
                if dxp is not None:
                    dxp[sl] += gout * wd[None, :, i, j, None, None]
        gx = None
        if dxp is not None:
            gx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor.from_op(out, parents, bw)


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    H, W = x.shape[-2:]

    def bw(g):
        return (g.reshape(g.shape[:-2] + (H, factor, W, factor)).sum(axis=(-3, -1)),)

    return Tensor.from_op(out, (x,), bw)


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` ordered so parents precede children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, inputs: Iterable[Tensor] | None = None):
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf.

    Tensors listed in ``inputs`` that the loss does not depend on get a
    zero gradient instead of ``None``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if inputs is not None:
        for t in inputs:
            if t.grad is None:
                t.grad = np.zeros(t.shape)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else np.array(pg, dtype=float)


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-6,
    exclude: Callable[[Tensor, int], bool] | None = None,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` is called with the tensors in ``x`` (positionally) and must return
    a scalar.  ``exclude(t, flat_index)`` removes coordinates that sit on a
    kink of a non-smooth op.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    loss = f(*xs)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite at the check point")
    backward(loss, xs)
    worst = 0.0
    for t in xs:
        analytic = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        with no_grad():
            for idx in range(flat.size):
                if exclude is not None and exclude(t, idx):
                    continue
                orig = flat[idx]
                flat[idx] = orig + h
                fp = float(f(*xs).data)
                flat[idx] = orig - h
                fm = float(f(*xs).data)
                flat[idx] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NonFiniteError(f"non-finite value while perturbing element {idx}")
                num = (fp - fm) / (2.0 * h)
                err = float(np.abs(analytic[idx] - num)) / max(1.0, float(np.abs(analytic[idx])))
                worst = max(worst, err)
    return worst
