"""Checkpoint container and fixed-layout binary persistence.

Layout (all integers little-endian):

    magic   8 bytes  b"RCLDTCK\\0"
    version u32      currently 1
    meta    u64 length + canonical JSON (model config, step, schedule, precision)
    count   u64      number of tensor records
    record  u16 name length + UTF-8 name
            u8  rank, then rank * u64 dims
            u8  dtype code (0 = f32, 1 = f64)
            raw little-endian array data

Records are written in sorted-name order so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import LoadError
from .schedule import NoiseSchedule, build_schedule

MAGIC = b"RCLDTCK\x00"
VERSION = 1

_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_NP_TO_NAME = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


@dataclass
class Checkpoint:
    """Named-tensor container for denoiser (and optionally encoder) weights."""

    config: ModelConfig
    step: int
    tensors: dict[str, np.ndarray]
    schedule_kind: str = "linear-beta"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    precision: str = "f32"

    def config_hash(self) -> str:
        return hashlib.sha256(self.config.to_json().encode()).hexdigest()

    def build_schedule(self) -> NoiseSchedule:
        return build_schedule(self.config.T, self.schedule_kind, self.beta_start, self.beta_end)

    def has_encoder(self) -> bool:
        return any(name.startswith("encoder.") for name in self.tensors)

    def meta_json(self) -> str:
        meta = {
            "beta_end": self.beta_end,
            "beta_start": self.beta_start,
            "model": json.loads(self.config.to_json()),
            "precision": self.precision,
            "schedule_kind": self.schedule_kind,
            "step": self.step,
        }
        return json.dumps(meta, sort_keys=True, separators=(",", ":"))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta = ckpt.meta_json().encode("utf-8")
    chunks.append(struct.pack("<Q", len(meta)))
    chunks.append(meta)
    names = sorted(ckpt.tensors)
    chunks.append(struct.pack("<Q", len(names)))
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name])
        dtype_name = _NP_TO_NAME.get(arr.dtype.newbyteorder("="))
        if dtype_name is None:
            raise LoadError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(struct.pack("<B", _DTYPE_CODES[dtype_name]))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise LoadError("truncated checkpoint file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint; raises LoadError on any corruption.

    When ``expect_config`` is given, a checkpoint whose config hash differs
    is rejected.
    """
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise LoadError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise LoadError(f"{path}: unknown checkpoint version {version}")
    (meta_len,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        config = ModelConfig(**meta["model"])
        step = int(meta["step"])
        schedule_kind = meta["schedule_kind"]
        beta_start = float(meta["beta_start"])
        beta_end = float(meta["beta_end"])
        precision = meta.get("precision", "f32")
    except (ValueError, KeyError, TypeError) as e:
        raise LoadError(f"{path}: bad checkpoint metadata: {e}") from e

    (count,) = r.unpack("<Q")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        (code,) = r.unpack("<B")
        if code not in _CODE_DTYPES:
            raise LoadError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        dtype = _CODE_DTYPES[code]
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n_items * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        if not np.all(np.isfinite(arr)):
            raise LoadError(f"{path}: tensor {name!r} contains non-finite values")
        tensors[name] = arr
    if r.pos != len(buf):
        raise LoadError(f"{path}: trailing bytes after last tensor record")

    ckpt = Checkpoint(config=config, step=step, tensors=tensors,
                      schedule_kind=schedule_kind, beta_start=beta_start,
                      beta_end=beta_end, precision=precision)
    if expect_config is not None and expect_config.to_json() != config.to_json():
        raise LoadError(
            f"{path}: checkpoint config hash {ckpt.config_hash()[:12]} does not match "
            "the requested architecture"
        )
    return ckpt
