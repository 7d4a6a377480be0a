"""The overfit recipe used by the trainability check (and the README)."""
from pathlib import Path

import numpy as np

from qrestore.config import load_config
from qrestore.degrade import DegradeSpec, degrade, synthetic_scene

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "overfit.json"
OVERFIT = load_config(CONFIG).train


def overfit_pairs(seed: int = 0, size: int = 64):
    """Two synthetic scenes under the composite degradation."""
    r = np.random.default_rng(seed)
    clean = [synthetic_scene(size, r) for _ in range(2)]
    return [(degrade(c, DegradeSpec(kind="composite", seed=i)), c) for i, c in enumerate(clean)]
