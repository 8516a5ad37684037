"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic "CFPL" | u32 format version
    u64 length + utf8 resolved config text
    u64 length + utf8 canonical JSON meta (step count, optimizer step,
        rng stream states)
    u64 parameter count, then per parameter:
        u64 length + utf8 name | u8 frozen flag |
        u64 length + utf8 dtype | u32 ndim | u64 dims... | raw values
    u64 optimizer entry count, then per entry:
        u64 length + utf8 name | first-moment array | second-moment array
        (arrays encoded as dtype/ndim/dims/raw, as above)

Serialization is canonical — parameters in registration order, JSON with
sorted keys — so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config_text

MAGIC = b"CFPL"
FORMAT_VERSION = 1

_LE = {"float32": "<f4", "float64": "<f8"}


def _write_bytes(fh, payload: bytes) -> None:
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _write_str(fh, text: str) -> None:
    _write_bytes(fh, text.encode("utf-8"))


def _write_array(fh, arr: np.ndarray) -> None:
    dtype = str(arr.dtype)
    if dtype not in _LE:
        raise ValueError(f"unsupported checkpoint dtype {dtype}")
    _write_str(fh, dtype)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(arr, dtype=_LE[dtype]).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def _read_bytes(fh) -> bytes:
    (n,) = struct.unpack("<Q", _read_exact(fh, 8))
    return _read_exact(fh, n)


def _read_str(fh) -> str:
    return _read_bytes(fh).decode("utf-8")


def _read_array(fh) -> np.ndarray:
    dtype = _read_str(fh)
    if dtype not in _LE:
        raise ValueError(f"unsupported checkpoint dtype {dtype}")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, count * np.dtype(_LE[dtype]).itemsize)
    return np.frombuffer(raw, dtype=_LE[dtype]).reshape(shape).astype(dtype)


@dataclass
class Checkpoint:
    """Full training state: config, weights, optimizer moments, rng states."""

    config: RunConfig
    params: dict[str, tuple[np.ndarray, bool]]
    opt_state: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    step: int = 0
    adam_step: int = 0
    rng_states: dict[str, dict] = field(default_factory=dict)

    def meta_json(self) -> str:
        return json.dumps(
            {"adam_step": self.adam_step, "rng": self.rng_states, "step": self.step},
            sort_keys=True, separators=(",", ":"))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _write_str(buf, ckpt.config.resolved_text())
    _write_str(buf, ckpt.meta_json())
    buf.write(struct.pack("<Q", len(ckpt.params)))
    for name, (arr, frozen) in ckpt.params.items():
        _write_str(buf, name)
        buf.write(struct.pack("<B", 1 if frozen else 0))
        _write_array(buf, arr)
    buf.write(struct.pack("<Q", len(ckpt.opt_state)))
    for name, (m, v) in ckpt.opt_state.items():
        _write_str(buf, name)
        _write_array(buf, m)
        _write_array(buf, v)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    with p.open("rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise ValueError(f"{p} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = parse_config_text(_read_str(fh))
        meta = json.loads(_read_str(fh))
        (n_params,) = struct.unpack("<Q", _read_exact(fh, 8))
        params = {}
        for _ in range(n_params):
            name = _read_str(fh)
            (frozen,) = struct.unpack("<B", _read_exact(fh, 1))
            params[name] = (_read_array(fh), bool(frozen))
        (n_opt,) = struct.unpack("<Q", _read_exact(fh, 8))
        opt_state = {}
        for _ in range(n_opt):
            name = _read_str(fh)
            m = _read_array(fh)
            v = _read_array(fh)
            opt_state[name] = (m, v)
    return Checkpoint(
        config=config, params=params, opt_state=opt_state,
        step=int(meta["step"]), adam_step=int(meta["adam_step"]),
        rng_states=meta.get("rng", {}),
    )
