"""Quaternion multi-degradation image restoration on a small numpy autodiff engine."""
from .config import Config, DecompParams, ModelConfig, TNetConfig, TrainConfig
from .pipeline import build_model, count_params, restore_image, restore_tiled, train
from .qalg import QImage, decode_image, encode_image, hamilton

__version__ = "0.1.0"
