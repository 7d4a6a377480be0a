"""Finite-difference gradient suites, shared by the CLI and the tests.

Each check reduces an op's output to a scalar with a fixed random weighting
(so every output element contributes) and compares the tape gradient with
central differences.  Primitive ops must agree within 1e-6, composite
blocks within 1e-4.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import qlayers as ql
from .autodiff import Tensor
from .decomp import DNet
from .fusion import AttentionMap, ProjectOut, gamma_correct, recompose
from .metrics import qssim_loss
from .tnet import TNet, tnet_pair
from .config import TNetConfig

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    kind: str
    error: float

    @property
    def tol(self) -> float:
        return PRIMITIVE_TOL if self.kind == "primitive" else COMPOSITE_TOL

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _weighted(fn, shape_rng):
    """Wrap ``fn`` so it returns ``sum(fn(*xs) * R)`` for a fixed random ``R``."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "R" not in cache:
            cache["R"] = shape_rng.normal(size=out.shape)
        return (out * cache["R"]).sum()

    return f


def _away_from(x: np.ndarray, points, margin: float = 1e-2) -> np.ndarray:
    """Nudge entries of ``x`` out of a ``margin`` band around each kink."""
    x = x.copy()
    for p in points:
        near = np.abs(x - p) < margin
        x[near] = p + np.where(x[near] >= p, margin, -margin) * 2
    return x


def _primitive_cases(rng):
    n = lambda *s: rng.normal(size=s)
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)
    cases = {
        "add": (lambda a, b: a + b, [n(3, 4), n(4)]),
        "sub": (lambda a, b: a - b, [n(3, 4), n(3, 1)]),
        "mul": (lambda a, b: a * b, [n(2, 3, 4), n(3, 4)]),
        "div": (lambda a, b: a / b, [n(3, 4), pos(3, 4)]),
        "pow": (lambda a: ad.pow(a, 1.7), [pos(3, 4)]),
        "abs": (ad.abs, [_away_from(n(3, 4), [0.0])]),
        "relu": (ad.relu, [_away_from(n(3, 4), [0.0])]),
        "gelu": (ad.gelu, [n(3, 4)]),
        "sigmoid": (ad.sigmoid, [n(3, 4)]),
        "softplus": (ad.softplus, [n(3, 4)]),
        "exp": (ad.exp, [n(3, 4)]),
        "log": (ad.log, [pos(3, 4)]),
        "sqrt": (ad.sqrt, [pos(3, 4)]),
        "clip": (lambda a: ad.clip(a, -0.5, 0.5), [_away_from(n(3, 4), [-0.5, 0.5])]),
        "sum": (lambda a: ad.sum(a, axis=1, keepdims=True), [n(3, 4, 2)]),
        "mean": (lambda a: ad.mean(a, axis=(0, 2)), [n(3, 4, 2)]),
        "reshape": (lambda a: a.reshape(4, 6), [n(2, 3, 4)]),
        "transpose": (lambda a: a.transpose(2, 0, 1), [n(2, 3, 4)]),
        "getitem": (lambda a: ad.concat([a[1:, ::2], a[np.array([0, 0, 2]), :2]], axis=0), [n(3, 4)]),
        "concat": (lambda a, b: ad.concat([a, b, a], axis=1), [n(2, 3), n(2, 2)]),
        "matmul": (ad.matmul, [n(2, 3, 4), n(4, 5)]),
        "softmax": (lambda a: ad.softmax(a, axis=-1), [n(3, 5)]),
        "upsample_nearest": (lambda a: ad.upsample_nearest(a, 2), [n(1, 2, 3, 3)]),
        "conv2d": (lambda x, w, b: ad.conv2d(x, w, b, stride=1, pad=1), [n(2, 3, 5, 5), n(4, 3, 3, 3), n(4)]),
        "conv2d_strided": (lambda x, w: ad.conv2d(x, w, stride=2, pad=1), [n(1, 2, 6, 6), n(3, 2, 3, 3)]),
        "conv2d_grouped": (lambda x, w: ad.conv2d(x, w, groups=2, pad=1), [n(1, 4, 5, 5), n(6, 2, 3, 3)]),
        "conv2d_depthwise": (lambda x, w, b: ad.conv2d(x, w, b, groups=3, pad=1), [n(2, 3, 5, 5), n(3, 1, 3, 3), n(3)]),
        "conv2d_reflect": (lambda x, w: ad.conv2d(x, w, pad=1, pad_mode="reflect"), [n(1, 2, 4, 4), n(2, 2, 3, 3)]),
    }
    for mode in ("zero", "reflect", "replicate"):
        cases[f"pad2d_{mode}"] = (lambda a, m=mode: ad.pad2d(a, 2, m), [n(1, 2, 4, 4)])
    return cases


def _qlayer_primitive_cases(rng):
    n = lambda *s: rng.normal(size=s)
    return {
        "hamilton_kernel": (ql.hamilton_kernel, [n(2, 3, 3, 3) for _ in range(4)]),
        "qconv2d": (lambda x, *w: ql.qconv2d(x, w, pad=1), [n(1, 8, 4, 4)] + [n(3, 2, 3, 3) for _ in range(4)]),
        "qlinear": (lambda x, *w: ql.qlinear(x, w), [n(2, 5, 8)] + [n(3, 2) for _ in range(4)]),
        "qcat": (lambda a, b: ql.qcat([a, b]), [n(1, 4, 2, 2), n(1, 8, 2, 2)]),
        "regenerate_luma": (ql.regenerate_luma, [n(1, 4, 3, 3)]),
    }


def _params(module: ql.Module, limit: int = 2) -> list[Tensor]:
    """A few weight tensors of a module, so block checks also cover parameters."""
    return [p for name, p in module.named_parameters() if "weight" in name][:limit]


def _block(module: ql.Module, call: Callable, inputs: list[np.ndarray]):
    """Gradient w.r.t. the inputs and a couple of the module's weights."""
    ins = [Tensor(x) for x in inputs]
    params = _params(module)
    k = len(ins)
    return (lambda *xs: call(*xs[:k])), ins + params


def _composite_cases(module: str, rng):
    n = lambda *s: rng.normal(size=s)
    img = lambda *s: rng.uniform(0.2, 0.8, size=s)
    r = np.random.default_rng(int(rng.integers(2**31)))
    cases = {}
    if module == "qlayers":
        msa = ql.QMSA(2, 2, rng=r)
        ffn = ql.QFFN(2, 2, rng=r)
        blk = ql.QTransformerBlock(2, 1, 2, rng=r)
        emb = ql.PatchEmbed(1, 2, 3, 2, rng=r)
        cases["QMSA"] = _block(msa, msa, [n(1, 6, 8)])
        cases["QFFN"] = _block(ffn, lambda x: ffn(x, 2, 3), [n(1, 6, 8)])
        cases["QTransformerBlock"] = _block(blk, lambda x: blk(x, 2, 2), [n(1, 4, 8)])
        cases["PatchEmbed"] = _block(emb, lambda x: emb(x)[0], [n(1, 4, 6, 6)])
    elif module == "decomp":
        net = DNet(2, rng=r)
        cases["DNet refine"] = _block(net, net, [img(1, 4, 5, 5)])
    elif module == "restore":
        cfg = TNetConfig(widths=(1, 1, 1, 1), heads=(1, 1, 1, 1), kernels=(3, 3, 3, 3), strides=(2, 2, 2, 2))
        th, ts = TNet(cfg, rng=r), TNet(cfg, rng=r)
        pair = lambda a, b: ql.qcat(list(tnet_pair(th, ts, a, b, share=True)))
        fn, xs = _block(th, pair, [img(1, 4, 32, 32), img(1, 4, 32, 32)])
        # every 61st input pixel keeps the finite-difference sweep short
        cases["TNet pair (shared)"] = (fn, xs, lambda t, i: t.size > 1000 and i % 61)
    elif module == "fusion":
        att = AttentionMap(2, rng=r)
        proj = ProjectOut(rng=r)
        cases["FNet attention"] = _block(att, att, [img(1, 4, 4, 4), img(1, 4, 4, 4)])
        cases["projection"] = _block(proj, proj, [img(1, 4, 4, 4), img(1, 4, 4, 4)])
        cases["gamma_correct"] = (lambda s: gamma_correct(s, 0.7), [Tensor(img(1, 4, 3, 3))])
        cases["recompose"] = (recompose, [Tensor(img(1, 4, 3, 3)), Tensor(img(1, 4, 3, 3))])
    elif module == "metrics":
        cases["qssim_loss"] = (lambda g, x: qssim_loss(g, x), [Tensor(img(1, 4, 16, 16)), Tensor(img(1, 4, 16, 16))])
    return cases


MODULES = ("autodiff", "qlayers", "decomp", "restore", "fusion", "metrics")


def run_suite(module: str, seed: int = 0) -> list[CheckResult]:
    if module not in MODULES:
        raise KeyError(f"unknown module {module!r}; choose from {', '.join(MODULES)}")
    rng = np.random.default_rng(seed)
    out = []
    prims = {}
    if module == "autodiff":
        prims = _primitive_cases(rng)
    elif module == "qlayers":
        prims = _qlayer_primitive_cases(rng)
    for name, (fn, arrays) in prims.items():
        xs = [Tensor(np.array(a, dtype=float)) for a in arrays]
        err = ad.grad_check(_weighted(fn, rng), xs)
        out.append(CheckResult(module, name, "primitive", err))
    for name, (fn, xs, *skip) in _composite_cases(module, rng).items():
        err = ad.grad_check(_weighted(fn, rng), xs, exclude=skip[0] if skip else None)
        out.append(CheckResult(module, name, "composite", err))
    return out


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'module':<9} {'check':<20} {'kind':<10} {'max rel err':>12} {'threshold':>10}  result"]
    for r in results:
        lines.append(
            f"{r.module:<9} {r.name:<20} {r.kind:<10} {r.error:>12.3e} {r.tol:>10.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
