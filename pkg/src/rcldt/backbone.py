"""The denoising network and the representation encoder.

The denoiser is a patch-token transformer: patchify -> linear embed ->
N blocks -> norm/linear decode head -> unpatchify. Conditioning enters
through per-block modulation (adaLN-zero): the conditioning vector produces
shift/scale/gate triples for the attention and MLP sub-layers, plus
shift/scale for the decode head. Gates and the decode linear start at zero,
so a freshly initialized network is an identity map on the token stream and
outputs zeros.

The encoder is a plain pre-LN ViT over the clean latent with its own patch
embedding (same patch size), mean pooling over tokens, and a linear head to
the representation dimension.

Parameter tensors are stored flat under dotted names (``blocks.0.q.w``);
weights are (in, out) so forward passes read ``x @ w + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .checkpoint import Checkpoint
from .conditioning import ConditioningVector, build_condition, embed_timestep
from .config import ModelConfig
from .errors import DimensionError, ModeError, TimestepError
from .tensor import Tensor

MLP_RATIO = 4
INIT_STD = 0.02


# ---------------------------------------------------------------------------
# parameter containers and initialization


@dataclass
class DenoiserParams:
    config: ModelConfig
    tensors: dict[str, Tensor]
    pos: Tensor = field(repr=False, default=None)

    def named(self):
        return self.tensors.items()


@dataclass
class EncoderParams:
    config: ModelConfig
    tensors: dict[str, Tensor]
    pos: Tensor = field(repr=False, default=None)

    def named(self):
        return self.tensors.items()


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float32):
    """Normal(0, std) truncated to [-2 std, 2 std] by resampling."""
    x = rng.normal(0.0, std, size=shape)
    for _ in range(8):
        bad = np.abs(x) > 2 * std
        if not bad.any():
            break
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    np.clip(x, -2 * std, 2 * std, out=x)
    return x.astype(dtype)


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / (10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim // 2)))
    args = positions[:, None] * omega[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def sincos_pos_embed_2d(dim: int, side: int, dtype=np.float32) -> np.ndarray:
    """Fixed 2-d sinusoidal positional table of shape (side*side, dim)."""
    ys, xs = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64), indexing="ij")
    emb = np.concatenate([_sincos_1d(dim // 2, ys.reshape(-1)),
                          _sincos_1d(dim // 2, xs.reshape(-1))], axis=1)
    return emb.astype(dtype)


def _block_tensors(prefix: str, hidden: int, rng, dtype, trainable: bool,
                   adaln: bool) -> dict[str, Tensor]:
    mk = lambda arr: Tensor(arr, requires_grad=trainable)
    t = {}
    for name in ("q", "k", "v"):
        t[f"{prefix}.{name}.w"] = mk(trunc_normal(rng, (hidden, hidden), dtype=dtype))
        t[f"{prefix}.{name}.b"] = mk(np.zeros(hidden, dtype=dtype))
    t.update({
        f"{prefix}.proj.w": mk(trunc_normal(rng, (hidden, hidden), dtype=dtype)),
        f"{prefix}.proj.b": mk(np.zeros(hidden, dtype=dtype)),
        f"{prefix}.mlp.w1": mk(trunc_normal(rng, (hidden, MLP_RATIO * hidden), dtype=dtype)),
        f"{prefix}.mlp.b1": mk(np.zeros(MLP_RATIO * hidden, dtype=dtype)),
        f"{prefix}.mlp.w2": mk(trunc_normal(rng, (MLP_RATIO * hidden, hidden), dtype=dtype)),
        f"{prefix}.mlp.b2": mk(np.zeros(hidden, dtype=dtype)),
    })
    if adaln:
        t[f"{prefix}.ada.w"] = mk(np.zeros((hidden, 6 * hidden), dtype=dtype))
        t[f"{prefix}.ada.b"] = mk(np.zeros(6 * hidden, dtype=dtype))
    else:
        t[f"{prefix}.ln1.g"] = mk(np.ones(hidden, dtype=dtype))
        t[f"{prefix}.ln1.b"] = mk(np.zeros(hidden, dtype=dtype))
        t[f"{prefix}.ln2.g"] = mk(np.ones(hidden, dtype=dtype))
        t[f"{prefix}.ln2.b"] = mk(np.zeros(hidden, dtype=dtype))
    return t


def init_denoiser(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                  trainable: bool = True) -> DenoiserParams:
    """Fresh denoiser parameters (adaLN-zero initialization)."""
    mk = lambda arr: Tensor(arr, requires_grad=trainable)
    h = cfg.hidden
    t: dict[str, Tensor] = {
        "patch_embed.w": mk(trunc_normal(rng, (cfg.patch_dim, h), dtype=dtype)),
        "patch_embed.b": mk(np.zeros(h, dtype=dtype)),
        "t_mlp.w1": mk(trunc_normal(rng, (h, h), dtype=dtype)),
        "t_mlp.b1": mk(np.zeros(h, dtype=dtype)),
        "t_mlp.w2": mk(trunc_normal(rng, (h, h), dtype=dtype)),
        "t_mlp.b2": mk(np.zeros(h, dtype=dtype)),
    }
    if cfg.conditioning == "class":
        t["class_embed.table"] = mk(trunc_normal(rng, (cfg.num_classes, h), dtype=dtype))
    elif cfg.conditioning == "representation":
        # unit-scale projections: with the 0.02 default the representation
        # enters the conditioning orders of magnitude below the timestep
        # embedding, the encoder receives almost no gradient, and at desk
        # scale it collapses to a constant instead of co-adapting
        r_std = 1.0 / math.sqrt(cfg.repr_dim)
        t["repr_proj.w"] = mk(trunc_normal(rng, (cfg.repr_dim, h), std=r_std, dtype=dtype))
        t["repr_proj.b"] = mk(np.zeros(h, dtype=dtype))
        t["repr_tok.w"] = mk(trunc_normal(rng, (cfg.repr_dim, h), std=r_std, dtype=dtype))
        t["repr_tok.b"] = mk(np.zeros(h, dtype=dtype))
    for i in range(cfg.blocks):
        t.update(_block_tensors(f"blocks.{i}", h, rng, dtype, trainable, adaln=True))
    t["final.ada.w"] = mk(np.zeros((h, 2 * h), dtype=dtype))
    t["final.ada.b"] = mk(np.zeros(2 * h, dtype=dtype))
    t["final.linear.w"] = mk(np.zeros((h, cfg.patch_dim), dtype=dtype))
    t["final.linear.b"] = mk(np.zeros(cfg.patch_dim, dtype=dtype))
    pos = tt.constant(sincos_pos_embed_2d(h, cfg.tokens_per_side, dtype=dtype))
    return DenoiserParams(config=cfg, tensors=t, pos=pos)


def init_encoder(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                 trainable: bool = True) -> EncoderParams:
    """Fresh ViT encoder parameters.

    The patch embedding is content-scaled (std 1/sqrt(patch_dim)): with the
    0.02 default, patch features drown under the O(1) positional table, the
    pooled representation starts out nearly constant across images, and the
    joint training never develops an informative code.
    """
    mk = lambda arr: Tensor(arr, requires_grad=trainable)
    h = cfg.encoder_hidden
    t: dict[str, Tensor] = {
        "patch_embed.w": mk(trunc_normal(rng, (cfg.patch_dim, h),
                                         std=1.0 / math.sqrt(cfg.patch_dim), dtype=dtype)),
        "patch_embed.b": mk(np.zeros(h, dtype=dtype)),
    }
    for i in range(cfg.encoder_blocks):
        t.update(_block_tensors(f"blocks.{i}", h, rng, dtype, trainable, adaln=False))
    t["pool_norm.g"] = mk(np.ones(h, dtype=dtype))
    t["pool_norm.b"] = mk(np.zeros(h, dtype=dtype))
    t["pool.w"] = mk(trunc_normal(rng, (h, cfg.repr_dim),
                                  std=1.0 / math.sqrt(h), dtype=dtype))
    t["pool.b"] = mk(np.zeros(cfg.repr_dim, dtype=dtype))
    pos = tt.constant(sincos_pos_embed_2d(h, cfg.tokens_per_side, dtype=dtype))
    return EncoderParams(config=cfg, tensors=t, pos=pos)


def denoiser_from_checkpoint(ckpt: Checkpoint, trainable: bool = False) -> DenoiserParams:
    cfg = ckpt.config
    dtype = np.float32 if ckpt.precision == "f32" else np.float64
    tensors = {
        name[len("denoiser."):]: Tensor(arr.copy(), requires_grad=trainable)
        for name, arr in ckpt.tensors.items() if name.startswith("denoiser.")
    }
    pos = tt.constant(sincos_pos_embed_2d(cfg.hidden, cfg.tokens_per_side, dtype=dtype))
    return DenoiserParams(config=cfg, tensors=tensors, pos=pos)


def encoder_from_checkpoint(ckpt: Checkpoint, trainable: bool = False) -> EncoderParams:
    cfg = ckpt.config
    dtype = np.float32 if ckpt.precision == "f32" else np.float64
    tensors = {
        name[len("encoder."):]: Tensor(arr.copy(), requires_grad=trainable)
        for name, arr in ckpt.tensors.items() if name.startswith("encoder.")
    }
    if not tensors:
        raise ModeError("checkpoint has no encoder tensors")
    pos = tt.constant(sincos_pos_embed_2d(cfg.encoder_hidden, cfg.tokens_per_side, dtype=dtype))
    return EncoderParams(config=cfg, tensors=tensors, pos=pos)


# ---------------------------------------------------------------------------
# token geometry


def patchify(z, patch_size: int) -> Tensor:
    """(B, C, H, W) -> (B, (H/p)*(W/p), p*p*C) tokens.

    Patch order is row-major over the patch grid; within a patch, features
    are laid out channel-major then row-major over pixels.
    """
    z = tt.as_tensor(z)
    if z.ndim != 4:
        raise DimensionError(f"patchify expects (B, C, H, W), got {z.shape}")
    b, c, hi, wi = z.shape
    p = patch_size
    if hi % p or wi % p:
        raise DimensionError(f"spatial dims {hi}x{wi} not divisible by patch {p}")
    x = tt.reshape(z, (b, c, hi // p, p, wi // p, p))
    x = tt.transpose(x, (0, 2, 4, 1, 3, 5))
    return tt.reshape(x, (b, (hi // p) * (wi // p), p * p * c))


def unpatchify(tokens, cfg: ModelConfig) -> Tensor:
    """Exact inverse of patchify for the configured geometry."""
    tokens = tt.as_tensor(tokens)
    b, n, d = tokens.shape
    p, c, side = cfg.patch_size, cfg.image_channels, cfg.tokens_per_side
    if n != side * side or d != cfg.patch_dim:
        raise DimensionError(f"token grid {tokens.shape} does not match config geometry")
    x = tt.reshape(tokens, (b, side, side, c, p, p))
    x = tt.transpose(x, (0, 3, 1, 4, 2, 5))
    return tt.reshape(x, (b, c, side * p, side * p))


# ---------------------------------------------------------------------------
# forward passes


def _attention(t: dict[str, Tensor], prefix: str, x: Tensor, heads: int) -> Tensor:
    b, n, h = x.shape
    hd = h // heads
    def heads_first(u):
        return tt.transpose(tt.reshape(u, (b, n, heads, hd)), (0, 2, 1, 3))
    q = heads_first(tt.matmul(x, t[f"{prefix}.q.w"]) + t[f"{prefix}.q.b"])
    k = heads_first(tt.matmul(x, t[f"{prefix}.k.w"]) + t[f"{prefix}.k.b"])
    v = heads_first(tt.matmul(x, t[f"{prefix}.v.w"]) + t[f"{prefix}.v.b"])
    scores = tt.matmul(q * (1.0 / math.sqrt(hd)), tt.transpose(k, (0, 1, 3, 2)))
    attn = tt.softmax(scores)
    o = tt.matmul(attn, v)
    o = tt.reshape(tt.transpose(o, (0, 2, 1, 3)), (b, n, h))
    return tt.matmul(o, t[f"{prefix}.proj.w"]) + t[f"{prefix}.proj.b"]


def _mlp(t: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    hdn = tt.gelu(tt.matmul(x, t[f"{prefix}.mlp.w1"]) + t[f"{prefix}.mlp.b1"])
    return tt.matmul(hdn, t[f"{prefix}.mlp.w2"]) + t[f"{prefix}.mlp.b2"]


def denoise(p: DenoiserParams, zt, cond: ConditioningVector, t, collect: list | None = None) -> Tensor:
    """Predict the noise in ``zt`` under the given conditioning vector.

    ``t`` is the integer timestep batch used to build ``cond``; it is
    validated against the configured range. When ``collect`` is a list it
    receives the raw token stream after embedding and after every block
    (used to verify the zero-init identity property).
    """
    cfg = p.config
    zt = tt.as_tensor(zt)
    if zt.ndim != 4 or zt.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
        raise DimensionError(
            f"zt shape {zt.shape} does not match configured "
            f"(B, {cfg.image_channels}, {cfg.image_size}, {cfg.image_size})"
        )
    if cond.mode != cfg.conditioning:
        raise ModeError(
            f"conditioning vector built for mode {cond.mode!r} fed to a "
            f"{cfg.conditioning!r} denoiser"
        )
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if np.any(t_arr < 0) or np.any(t_arr >= cfg.T):
        raise TimestepError(f"timestep {t_arr} outside [0, {cfg.T})")

    tn = p.tensors
    b = zt.shape[0]
    h = cfg.hidden
    x = patchify(zt, cfg.patch_size)
    x = tt.matmul(x, tn["patch_embed.w"]) + tn["patch_embed.b"]
    x = x + p.pos
    if cfg.conditioning == "representation":
        # the representation feeds the token stream directly (the residual
        # path then carries it into every block); the gated modulation
        # pathway alone leaves the encoder without useful gradient
        if cond.r is None:
            raise ModeError("representation conditioning vector lacks r")
        tok = tt.matmul(cond.r, tn["repr_tok.w"]) + tn["repr_tok.b"]
        x = x + tt.reshape(tok, (b, 1, h))
    if collect is not None:
        collect.append(x.data)

    gc = tt.gelu(cond.c)
    for i in range(cfg.blocks):
        pre = f"blocks.{i}"
        m = tt.matmul(gc, tn[f"{pre}.ada.w"]) + tn[f"{pre}.ada.b"]
        sh1, sc1, g1, sh2, sc2, g2 = (
            tt.reshape(tt.narrow(m, 1, j * h, h), (b, 1, h)) for j in range(6)
        )
        # modulation folds into layer_norm's affine: gain = scale + 1, bias = shift
        x = x + g1 * _attention(tn, pre, tt.layer_norm(x, sc1 + 1.0, sh1), cfg.heads)
        x = x + g2 * _mlp(tn, pre, tt.layer_norm(x, sc2 + 1.0, sh2))
        if collect is not None:
            collect.append(x.data)

    m = tt.matmul(gc, tn["final.ada.w"]) + tn["final.ada.b"]
    shift = tt.reshape(tt.narrow(m, 1, 0, h), (b, 1, h))
    scale = tt.reshape(tt.narrow(m, 1, h, h), (b, 1, h))
    y = tt.layer_norm(x, scale + 1.0, shift)
    y = tt.matmul(y, tn["final.linear.w"]) + tn["final.linear.b"]
    return unpatchify(y, cfg)


def encode_representation(p: EncoderParams, z0) -> Tensor:
    """ViT encoding of the clean latent: tokens -> blocks -> mean pool -> linear."""
    cfg = p.config
    z0 = tt.as_tensor(z0)
    if z0.ndim != 4 or z0.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
        raise DimensionError(
            f"z0 shape {z0.shape} does not match configured "
            f"(B, {cfg.image_channels}, {cfg.image_size}, {cfg.image_size})"
        )
    tn = p.tensors
    x = patchify(z0, cfg.patch_size)
    x = tt.matmul(x, tn["patch_embed.w"]) + tn["patch_embed.b"]
    x = x + p.pos
    for i in range(cfg.encoder_blocks):
        pre = f"blocks.{i}"
        x = x + _attention(tn, pre, tt.layer_norm(x, tn[f"{pre}.ln1.g"], tn[f"{pre}.ln1.b"]), cfg.heads)
        x = x + _mlp(tn, pre, tt.layer_norm(x, tn[f"{pre}.ln2.g"], tn[f"{pre}.ln2.b"]))
    x = tt.layer_norm(x, tn["pool_norm.g"], tn["pool_norm.b"])
    pooled = tt.tmean(x, axis=1)
    return tt.matmul(pooled, tn["pool.w"]) + tn["pool.b"]


# ---------------------------------------------------------------------------
# inference wrapper


class InferenceModel:
    """Frozen checkpoint weights with a convenience noise-prediction call."""

    def __init__(self, ckpt: Checkpoint):
        self.config = ckpt.config
        self.denoiser = denoiser_from_checkpoint(ckpt, trainable=False)
        self.encoder = encoder_from_checkpoint(ckpt) if ckpt.has_encoder() else None

    @property
    def mode(self) -> str:
        return self.config.conditioning

    def encode(self, z0) -> np.ndarray:
        if self.encoder is None:
            raise ModeError("checkpoint lacks an encoder")
        return encode_representation(self.encoder, z0).data

    def predict_eps(self, zt, t, class_id=None, r=None) -> np.ndarray:
        """Noise prediction for a raw array batch under this model's mode."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if t_arr.size == 1 and np.asarray(zt).shape[0] != 1:
            t_arr = np.full(np.asarray(zt).shape[0], int(t_arr[0]), dtype=np.int64)
        t_embed = embed_timestep(self.denoiser, t_arr, self.config.T)
        cond = build_condition(self.denoiser, self.mode, t_embed, class_id=class_id, r=r)
        return denoise(self.denoiser, zt, cond, t_arr).data
