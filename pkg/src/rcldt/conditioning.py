"""Conditioning vectors for the denoiser.

Three modes: unconditional (timestep embedding alone), class (timestep +
class-embedding table) and representation (timestep + linear projection of
the encoder output). The parts are combined by summation, and the combined
vector drives the per-block modulation inside the denoiser.

Also home to the pretrain -> finetune conditioning swap, which carries the
shared denoiser weights over verbatim while replacing the conditioning
pathway with a zero-initialized class table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .checkpoint import Checkpoint
from .errors import ConfigError, ModeError, TimestepError
from .tensor import Tensor

_COND_TENSOR_PREFIXES = ("denoiser.repr_proj.", "denoiser.repr_tok.",
                         "denoiser.class_embed.", "encoder.")


@dataclass
class ConditioningVector:
    """Combined conditioning vector c of shape (batch, hidden) plus the mode
    that produced it; a denoiser configured for a different mode rejects it.

    In representation mode the raw representation rides along: besides
    driving the modulation pathway through c, it is injected directly into
    the denoiser's token stream, which keeps the encoder's gradient path
    open from the first step (see backbone.denoise)."""

    c: Tensor
    mode: str
    r: Tensor | None = None


def timestep_frequency_embedding(t, dim: int, max_period: float = 10000.0,
                                 dtype=np.float32) -> np.ndarray:
    """Raw sinusoidal features for integer timesteps: [sin | cos] halves.

    At t = 0 the sin half is all zeros and the cos half all ones.
    """
    t = np.atleast_1d(np.asarray(t)).astype(np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


def embed_timestep(params, t, T: int | None = None) -> Tensor:
    """Sinusoidal features followed by the 2-layer MLP held in ``params``.

    ``params`` is a denoiser parameter set exposing t_mlp.{w1,b1,w2,b2};
    output shape is (batch, hidden).
    """
    p = params.tensors
    hidden = p["t_mlp.w1"].shape[0]
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if np.any(t_arr < 0) or (T is not None and np.any(t_arr >= T)):
        raise TimestepError(f"timestep out of range: {t_arr}")
    freq = tt.constant(timestep_frequency_embedding(t_arr, hidden, dtype=p["t_mlp.w1"].dtype))
    h = tt.gelu(tt.matmul(freq, p["t_mlp.w1"]) + p["t_mlp.b1"])
    return tt.matmul(h, p["t_mlp.w2"]) + p["t_mlp.b2"]


def build_condition(params, mode: str, t_embed: Tensor, class_id=None,
                    r: Tensor | None = None) -> ConditioningVector:
    """Combine the timestep embedding with the mode's extra signal.

    unconditional: c = t_embed
    class:         c = t_embed + class_table[class_id]
    representation:c = t_embed + r @ repr_proj
    """
    p = params.tensors
    if mode == "unconditional":
        return ConditioningVector(c=t_embed, mode=mode)
    if mode == "class":
        if class_id is None:
            raise ModeError("class conditioning requires class_id")
        if "class_embed.table" not in p:
            raise ModeError("denoiser has no class-embedding table")
        ids = np.atleast_1d(np.asarray(class_id, dtype=np.int64))
        n_classes = p["class_embed.table"].shape[0]
        if np.any(ids < 0) or np.any(ids >= n_classes):
            raise ModeError(f"class id out of range [0, {n_classes})")
        return ConditioningVector(c=t_embed + tt.embedding(p["class_embed.table"], ids), mode=mode)
    if mode == "representation":
        if r is None:
            raise ModeError("representation conditioning requires r")
        if "repr_proj.w" not in p:
            raise ModeError("denoiser has no representation projection")
        r = tt.as_tensor(r)
        proj = tt.matmul(r, p["repr_proj.w"]) + p["repr_proj.b"]
        return ConditioningVector(c=t_embed + proj, mode=mode, r=r)
    raise ModeError(f"unknown conditioning mode {mode!r}")


def swap_conditioning(ckpt: Checkpoint, new_mode: str, num_classes: int | None = None) -> Checkpoint:
    """Re-target a trained checkpoint to a new conditioning mode.

    Shared denoiser weights are copied verbatim; encoder weights and the old
    conditioning pathway are dropped. Swapping to class mode installs a
    zero-initialized class table of size ``num_classes``, so at step 0 the
    swapped model behaves exactly like the unconditional one. The step
    counter resets to 0.
    """
    if new_mode == "representation":
        raise ConfigError("cannot swap to representation mode: a fresh encoder is required")
    if new_mode == "class":
        if num_classes is None or num_classes < 2:
            raise ConfigError(f"class mode requires num_classes >= 2, got {num_classes}")
    elif new_mode != "unconditional":
        raise ConfigError(f"unknown conditioning mode {new_mode!r}")

    dtype = np.float32 if ckpt.precision == "f32" else np.float64
    tensors = {
        name: arr.copy()
        for name, arr in ckpt.tensors.items()
        if not name.startswith(_COND_TENSOR_PREFIXES)
    }
    new_cfg = ckpt.config.with_conditioning(
        new_mode, num_classes if new_mode == "class" else None)
    if new_mode == "class":
        tensors["denoiser.class_embed.table"] = np.zeros(
            (num_classes, ckpt.config.hidden), dtype=dtype)
    return Checkpoint(config=new_cfg, step=0, tensors=tensors,
                      schedule_kind=ckpt.schedule_kind, beta_start=ckpt.beta_start,
                      beta_end=ckpt.beta_end, precision=ckpt.precision)
