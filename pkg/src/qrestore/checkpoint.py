"""Checkpoint files: a text header followed by little-endian float64 blobs.

Layout::

    QRCKPT <version>
    config_hash <hex>
    config <one-line JSON of the model config>
    payload_sha256 <hex>
    tensors <n>
    <name> <group> <d0,d1,...> <offset> <nbytes>     (n lines)
    end
    <payload bytes>

Offsets are relative to the start of the payload.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig, from_dict, to_dict
from .pipeline import Model

MAGIC = "QRCKPT"
FORMAT_VERSION = 1
DTYPE = "<f8"


class CheckpointError(Exception):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ConfigMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


def save_checkpoint(model: Model, path: str | Path) -> None:
    entries, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=DTYPE).tobytes()
        group = name.split(".", 1)[0]
        shape = ",".join(str(d) for d in p.shape) or "-"
        entries.append(f"{name} {group} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    header = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"config_hash {model.cfg.hash()}",
        "config " + json.dumps(to_dict(model.cfg), sort_keys=True, separators=(",", ":")),
        f"payload_sha256 {hashlib.sha256(payload).hexdigest()}",
        f"tensors {len(entries)}",
        *entries,
        "end",
    ]
    Path(path).write_bytes(("\n".join(header) + "\n").encode() + payload)


def _read_header(raw: bytes):
    lines, pos = [], 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CorruptCheckpoint("header is truncated")
        line = raw[pos:nl].decode("utf-8", errors="strict")
        pos = nl + 1
        lines.append(line)
        if line == "end":
            return lines, pos
        if len(lines) > 1_000_000:
            raise CorruptCheckpoint("header has no end marker")


def read_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Parse a checkpoint into its model config and named arrays."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    try:
        lines, start = _read_header(raw)
    except UnicodeDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: header is not text") from exc
    first = lines[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    if first[1] != str(FORMAT_VERSION):
        raise VersionMismatch(f"{path}: format version {first[1]}, this build reads {FORMAT_VERSION}")
    try:
        fields = dict(line.split(" ", 1) for line in lines[1:5])
        cfg = from_dict(json.loads(fields["config"]), ModelConfig)
        n = int(fields["tensors"])
        table = [line.split() for line in lines[5 : 5 + n]]
        expected_hash, payload_sha = fields["config_hash"], fields["payload_sha256"]
    except (KeyError, ValueError, ConfigError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed header ({exc})") from exc
    if cfg.hash() != expected_hash:
        raise CorruptCheckpoint(f"{path}: stored config does not match its hash")
    payload = raw[start:]
    if hashlib.sha256(payload).hexdigest() != payload_sha:
        raise CorruptCheckpoint(f"{path}: payload is truncated or damaged")
    tensors = {}
    for entry in table:
        if len(entry) != 5:
            raise CorruptCheckpoint(f"{path}: malformed tensor entry {' '.join(entry)!r}")
        name, _group, shape_s, off_s, nbytes_s = entry
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
        off, nbytes = int(off_s), int(nbytes_s)
        if off + nbytes > len(payload) or nbytes != 8 * int(np.prod(shape, dtype=int)):
            raise CorruptCheckpoint(f"{path}: tensor {name} lies outside the payload")
        tensors[name] = np.frombuffer(payload, dtype=DTYPE, count=nbytes // 8, offset=off).reshape(shape).astype(float)
    return cfg, tensors


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> Model:
    """Rebuild the model stored at ``path``.

    If ``expected`` is given, the checkpoint's config hash must match it.
    """
    cfg, tensors = read_checkpoint(path)
    if expected is not None and expected.hash() != cfg.hash():
        raise ConfigMismatch(
            f"{path}: checkpoint config hash {cfg.hash()} does not match the requested config {expected.hash()}"
        )
    model = Model(cfg)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ShapeMismatch(f"{path}: tensor names differ from the config (missing {missing[:3]}, extra {extra[:3]})")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise ShapeMismatch(f"{path}: {name} has shape {tensors[name].shape}, config expects {p.shape}")
        p.data = tensors[name].copy()
    return model
