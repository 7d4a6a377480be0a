"""Report figures rendered to files (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META if path.suffix == ".png" else None)
    plt.close(fig)


def loss_curve(history, path, title: str = "training loss"):
    """``history`` rows are ``(step, lr, loss)``."""
    steps = [h[0] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [h[2] for h in history], lw=1.2, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax2 = ax.twinx()
    ax2.plot(steps, [h[1] for h in history], lw=0.8, color="tab:gray", ls="--")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    fig.tight_layout()
    _save(fig, path)


def eval_bars(rows, path):
    """Per-image PSNR and QSSIM bars; rows are dicts with name, psnr_db, qssim."""
    names = [r["name"] for r in rows]
    x = np.arange(len(rows))
    fig, (a, b) = plt.subplots(1, 2, figsize=(max(6, 0.6 * len(rows) + 3), 3.5))
    a.bar(x, [r["psnr_db"] for r in rows], color="tab:blue")
    a.set_ylabel("PSNR (dB)")
    b.bar(x, [r["qssim"] for r in rows], color="tab:orange")
    b.set_ylabel("QSSIM")
    b.set_ylim(0, 1)
    for ax in (a, b):
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def decomposition_panel(image, S, T, G, path, t_max: float = 10.0):
    """Input, structure, texture (scaled by ``1/t_max``) and guidance side by side."""
    panels = [("input", image), ("structure S", S), (f"texture T / {t_max:g}", np.clip(T / t_max, 0, 1)),
              ("guidance G", G)]
    fig, axes = plt.subplots(1, 4, figsize=(12, 3.4))
    for ax, (title, im) in zip(axes, panels):
        if im.ndim == 2:
            ax.imshow(im, cmap="gray", vmin=0, vmax=max(1e-12, float(im.max())) if title.startswith("guid") else 1)
        else:
            ax.imshow(np.clip(im, 0, 1))
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)


def restore_panel(degraded, restored, path, clean=None):
    items = [("degraded", degraded), ("restored", restored)] + ([("clean", clean)] if clean is not None else [])
    fig, axes = plt.subplots(1, len(items), figsize=(3.2 * len(items), 3.4))
    for ax, (title, im) in zip(axes, items):
        ax.imshow(np.clip(im, 0, 1))
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)
