"""End-to-end restoration model, tiled inference and two-stage training.

The forward pass runs, in order: guidance and structure maps, texture
initialization, DNet refinement of both components, the twin TNets with
fourth-stage sharing, the latent multiplier on the structure path, gamma
correction, the two attention maps, element-wise fusion, recomposition and
the output projection.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .config import ModelConfig, TrainConfig
from .decomp import DNet, decompose_batch
from .degrade import DegradeSpec, degrade
from .fusion import AttentionMap, ProjectOut, gamma_correct, recompose
from .metrics import qssim_loss as _qssim_loss
from .qalg import LUMA
from .qlayers import Module, regenerate_luma
from .tnet import LatentM, TNet, tnet_pair

log = logging.getLogger(__name__)

GROUPS = ("dnet_s", "dnet_t", "tnet_h", "tnet_s", "latent_m", "fnet", "projection")
# groups held fixed during the first stage-2 epochs
FREEZE_SCHEDULE_GROUPS = ("dnet_s", "dnet_t", "fnet", "projection")
STAGE1_GROUPS = ("dnet_s", "dnet_t", "fnet", "projection")
# floor applied before the gamma power so its derivative stays finite
GAMMA_FLOOR = 1e-3


class FNet(Module):
    def __init__(self, width: int, quaternion: bool, rng: np.random.Generator):
        self.att_s = AttentionMap(width, quaternion, rng=rng)
        self.att_t = AttentionMap(width, quaternion, rng=rng)


class Model(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        q = cfg.quaternion_layers
        if cfg.use_dnet:
            self.dnet_s = DNet(cfg.dnet_width, q, rng=rng)
            self.dnet_t = DNet(cfg.dnet_width, q, rng=rng)
        self.tnet_h = TNet(cfg.tnet, q, rng=rng)
        self.tnet_s = TNet(cfg.tnet, q, rng=rng)
        self.latent_m = LatentM(q, rng=rng)
        self.fnet = FNet(cfg.fnet_width, q, rng)
        self.projection = ProjectOut(q, rng=rng)

    def groups(self) -> dict[str, Module]:
        return {g: getattr(self, g) for g in GROUPS if hasattr(self, g)}

    def named_parameters(self, prefix: str = ""):
        for g, module in self.groups().items():
            yield from module.named_parameters(f"{prefix}{g}.")

    def group_parameters(self, names) -> list[Tensor]:
        groups = self.groups()
        return [p for g in names if g in groups for p in groups[g].parameters()]

    def check_input(self, shape):
        H, W = shape[-2:]
        s = self.cfg.tnet.input_multiple
        if H < s or W < s or H % s or W % s:
            raise ValueError(f"image sides must be multiples of {s} (got {H}×{W})")

    def forward(self, x, trace: bool = False, bypass_tnet: bool = False):
        """Restore ``B×4×H×W`` quaternion images.

        With ``trace=True`` returns ``(output, stages)`` where ``stages`` maps
        each intermediate name to its array.
        """
        x = ad.as_tensor(x)
        self.check_input(x.shape)
        stages: dict[str, np.ndarray] = {}

        def keep(name, t):
            arr = t.data if isinstance(t, Tensor) else t
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"non-finite values at stage {name!r}")
            if trace:
                stages[name] = np.array(arr)
            return t

        cfg = self.cfg
        S0, T0, G = decompose_batch(x.data, cfg.decomp)
        keep("guidance", G)
        if cfg.use_dnet:
            keep("S0", S0)
            keep("T0", T0)
            S = keep("S", regenerate_luma(self.dnet_s(Tensor(S0))))
            T = keep("T", regenerate_luma(self.dnet_t(Tensor(T0))))
        else:
            S = T = x
        if bypass_tnet:
            s_clean, t_clean = S, T
        else:
            s_clean, t_clean = tnet_pair(self.tnet_h, self.tnet_s, S, T, cfg.tnet.share_features)
            s_clean = keep("S_clean_tnet", regenerate_luma(s_clean))
            t_clean = keep("T_clean", regenerate_luma(t_clean))
            M = keep("M", self.latent_m(s_clean))
            s_clean = keep("S_clean_M", regenerate_luma(M * s_clean))
        s_clean = ad.clip(s_clean, GAMMA_FLOOR, 1.0)
        s_clean = keep("S_clean", gamma_correct(s_clean, cfg.gamma))
        m_s = keep("M_S", self.fnet.att_s(s_clean, x))
        m_t = keep("M_T", self.fnet.att_t(t_clean, x))
        s_fused = keep("S_fused", m_s * s_clean)
        t_fused = keep("T_fused", m_t * t_clean)
        product = keep("product", recompose(s_fused, t_fused))
        out = keep("output", regenerate_luma(self.projection(product, x)))
        return (out, stages) if trace else out


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> Model:
    return Model(cfg, seed)


def count_params(model: Module, group: str | None = None) -> int:
    """Exact number of trainable scalars, optionally for one group."""
    if group is None:
        return model.num_parameters()
    groups = model.groups()
    if group not in groups:
        raise KeyError(f"unknown parameter group {group!r}")
    return groups[group].num_parameters()


# ---------------------------------------------------------------- inference


def encode_batch(images) -> np.ndarray:
    """``B×H×W×3`` (or one ``H×W×3``) RGB in [0, 1] to ``B×4×H×W``."""
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected H×W×3 images, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise ValueError("images must be finite and within [0, 1]")
    rgb = np.moveaxis(arr, -1, 1)
    L = LUMA[0] * rgb[:, 0] + LUMA[1] * rgb[:, 1] + LUMA[2] * rgb[:, 2]
    return np.concatenate([L[:, None], rgb], axis=1)


def decode_batch(x: np.ndarray) -> np.ndarray:
    return np.clip(np.moveaxis(x[:, 1:4], 1, -1), 0.0, 1.0)


def restore_image(image: np.ndarray, model: Model, trace: bool = False):
    """Restore one ``H×W×3`` image; sides must be multiples of the stride pyramid."""
    x = encode_batch(image)
    with ad.no_grad():
        result = model.forward(Tensor(x), trace=trace)
    if trace:
        out, stages = result
        return decode_batch(out.data)[0], stages
    return decode_batch(result.data)[0]


def tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return sorted(set(starts))


def _ramp(length: int, overlap: int, ramp_start: bool, ramp_end: bool) -> np.ndarray:
    w = np.ones(length)
    ramp = (np.arange(overlap) + 1.0) / (overlap + 1.0)
    if ramp_start:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if ramp_end:
        w[length - overlap :] = np.minimum(w[length - overlap :], ramp[::-1])
    return w


def restore_tiled(image: np.ndarray, model: Model, tile: int = 64, overlap: int = 16, restore_fn=None):
    """Restore overlapping tiles independently and blend them with linear feathering.

    Returns ``(restored, n_tiles)``.  ``restore_fn`` overrides the per-tile
    restoration (defaults to :func:`restore_image` with ``model``).
    """
    stride = model.cfg.tnet.input_multiple if model is not None else 16
    if tile % stride:
        raise ValueError(f"tile size must be a multiple of {stride}")
    if overlap < 8 or overlap >= tile:
        raise ValueError("overlap must be at least 8 and smaller than the tile")
    restore_fn = restore_fn or (lambda im: restore_image(im, model))
    H, W = image.shape[:2]
    ys, xs = tile_starts(H, tile, overlap), tile_starts(W, tile, overlap)
    if len(ys) == 1 and len(xs) == 1:
        return restore_fn(image), 1
    acc = np.zeros(image.shape)
    wsum = np.zeros(image.shape[:2])
    for y in ys:
        for x in xs:
            th, tw = min(tile, H - y), min(tile, W - x)
            out = restore_fn(image[y : y + th, x : x + tw])
            wy = _ramp(th, overlap, y > 0, y + th < H)
            wx = _ramp(tw, overlap, x > 0, x + tw < W)
            w = wy[:, None] * wx[None, :]
            acc[y : y + th, x : x + tw] += out * w[..., None]
            wsum[y : y + th, x : x + tw] += w
    return acc / wsum[..., None], len(ys) * len(xs)


# ---------------------------------------------------------------- training


class TrainingDiverged(FloatingPointError):
    def __init__(self, stage: int, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} in stage {stage}, epoch {epoch}")
        self.stage, self.epoch = stage, epoch


def cosine_lr(epoch: int, epochs: int, lr_init: float, lr_final: float) -> float:
    """Cosine annealing from ``lr_init`` at the first epoch to ``lr_final`` at the last."""
    if epochs <= 1:
        return lr_init
    t = epoch / (epochs - 1)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * t))


def step_lr(epoch: int, lr_init: float, halve_every: int) -> float:
    return lr_init * 0.5 ** (epoch // max(1, halve_every))


class SGD:
    def step(self, params, lr: float):
        for p in params:
            if p.grad is not None:
                p.data -= lr * p.grad


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, params, lr: float):
        b1, b2 = self.beta1, self.beta2
        for p in params:
            if p.grad is None:
                continue
            m, v, t = self.state.get(id(p), (np.zeros(p.shape), np.zeros(p.shape), 0))
            t += 1
            m = b1 * m + (1 - b1) * p.grad
            v = b2 * v + (1 - b2) * p.grad * p.grad
            self.state[id(p)] = (m, v, t)
            p.data -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + self.eps)


def make_optimizer(name: str):
    return Adam() if name == "adam" else SGD()


def compute_loss(out: Tensor, target: Tensor, cfg: TrainConfig) -> Tensor:
    l1 = ad.abs(out[:, 1:4] - target[:, 1:4]).mean()
    if not cfg.qssim_loss:
        return l1
    loss = _qssim_loss(target, out)
    return loss + cfg.l1_weight * l1 if cfg.l1_weight else loss


@dataclass
class TrainResult:
    model: Model
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1][2] if self.history else float("nan")


def _sample_batch(pairs, idx, patch: int, rng: np.random.Generator, augment: bool, stride: int):
    xs, ys = [], []
    for i in idx:
        deg, clean = pairs[i]
        H, W = deg.shape[:2]
        ph = min(patch, H) // stride * stride
        pw = min(patch, W) // stride * stride
        y0 = int(rng.integers(0, H - ph + 1))
        x0 = int(rng.integers(0, W - pw + 1))
        d, c = deg[y0 : y0 + ph, x0 : x0 + pw], clean[y0 : y0 + ph, x0 : x0 + pw]
        if augment:
            k = int(rng.integers(4))
            d, c = np.rot90(d, k), np.rot90(c, k)
        xs.append(d)
        ys.append(c)
    if len({x.shape for x in xs}) > 1:
        raise ValueError("images in one batch must share a patch size")
    return encode_batch(np.stack(xs)), encode_batch(np.stack(ys))


def train(dataset, cfg: TrainConfig, model: Model, progress=None) -> TrainResult:
    """Two-stage training with a frozen-group schedule.

    Stage 1 trains DNet and FNet (TNets bypassed) on low-light versions of
    the clean targets with a step-halving schedule.  Stage 2 trains the whole
    pipeline with cosine annealing; DNet and FNet stay frozen for the first
    ``freeze_epochs`` epochs.  ``progress(step, lr, loss)`` is called after
    every update.
    """
    pairs = [(np.asarray(d, dtype=float), np.asarray(c, dtype=float)) for d, c in dataset]
    if not pairs:
        raise ValueError("training needs at least one (degraded, clean) pair")
    stride = model.cfg.tnet.input_multiple
    for d, c in pairs:
        if d.shape != c.shape:
            raise ValueError("degraded and clean images must have equal shapes")
        if min(d.shape[:2]) < stride:
            raise ValueError(f"images must be at least {stride} pixels on each side")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer)
    result = TrainResult(model)
    groups = model.groups()
    always_frozen = set(cfg.frozen_groups)
    unknown = always_frozen - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
    step = 0

    def run_epoch(stage, epoch, data, trainable, lr, bypass):
        nonlocal step
        params = model.group_parameters(trainable)
        order = rng.permutation(len(data))
        for b in range(0, len(order), cfg.batch_size):
            x, y = _sample_batch(data, order[b : b + cfg.batch_size], cfg.patch, rng, cfg.augment, stride)
            for p in model.parameters():
                p.grad = None
            out = model.forward(Tensor(x), bypass_tnet=bypass)
            loss = compute_loss(out, Tensor(y), cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(stage, epoch, value)
            if params:
                ad.backward(loss, params)
                opt.step(params, lr)
            result.history.append((step, lr, value))
            if progress is not None:
                progress(step, lr, value)
            step += 1

    if cfg.stage1_epochs:
        low = [
            (degrade(c, DegradeSpec(kind="lowlight", seed=cfg.seed + i)), c) for i, (_, c) in enumerate(pairs)
        ]
        trainable = [g for g in STAGE1_GROUPS if g in groups and g not in always_frozen]
        for epoch in range(cfg.stage1_epochs):
            run_epoch(1, epoch, low, trainable, step_lr(epoch, cfg.lr_init, cfg.stage1_halve_every), True)

    for epoch in range(cfg.epochs):
        frozen = set(always_frozen)
        if epoch < cfg.freeze_epochs:
            frozen |= set(FREEZE_SCHEDULE_GROUPS)
        trainable = [g for g in groups if g not in frozen]
        if cfg.schedule == "cosine":
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init, cfg.lr_final)
        else:
            lr = cfg.lr_init
        run_epoch(2, epoch, pairs, trainable, lr, False)
    return result
