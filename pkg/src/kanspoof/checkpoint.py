"""KFCK checkpoint files.

Layout (little-endian): magic ``KFCK``, u32 version, 32-byte SHA-256 of the
model config, then one record per tensor until end of file::

    u32 name_len | name (UTF-8) | u32 ndim | ndim x u32 extents | float64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import FormatError
from .kanformer import KanformerModel, ModelConfig, build_model

MAGIC = b"KFCK"
VERSION = 1


class IncompatibleCheckpointError(ValueError):
    """Checkpoint was written for a different model configuration."""


def encode_state(state: dict[str, np.ndarray], config_hash: bytes) -> bytes:
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), config_hash]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_state(raw: bytes, where: str = "checkpoint") -> tuple[bytes, dict[str, np.ndarray]]:
    if raw[:4] != MAGIC:
        raise FormatError(f"{where}: bad magic {raw[:4]!r} at offset 0")
    if len(raw) < 40:
        raise FormatError(f"{where}: truncated header at offset {len(raw)}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at offset 4")
    config_hash = raw[8:40]
    off = 40
    state: dict[str, np.ndarray] = {}

    def need(n: int) -> None:
        if off + n > len(raw):
            raise FormatError(f"{where}: truncated record at offset {off}")

    while off < len(raw):
        need(4)
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        need(name_len + 4)
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        need(8 * n)
        state[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    return config_hash, state


def save_checkpoint(model: KanformerModel, path) -> None:
    Path(path).write_bytes(encode_state(model.state_dict(), model.config.hash()))


def save_state(state: dict[str, np.ndarray], config: ModelConfig, path) -> None:
    Path(path).write_bytes(encode_state(state, config.hash()))


def load_into(model: KanformerModel, path) -> KanformerModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    config_hash, state = decode_state(path.read_bytes(), str(path))
    if config_hash != model.config.hash():
        raise IncompatibleCheckpointError(f"{path}: config hash does not match the model configuration")
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise IncompatibleCheckpointError(f"{path}: {exc}") from None
    return model


def load_checkpoint(path, config: ModelConfig) -> KanformerModel:
    return load_into(build_model(config), path)
