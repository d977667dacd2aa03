"""Training: the joint denoising loss, optimization loops, checkpointing.

Pretraining minimizes the squared error between the drawn noise and the
denoiser's prediction, with the conditioning signal (in representation
mode) produced by the jointly trained encoder, so gradients flow into both
parameter sets through one backward pass. Fine-tuning swaps the
conditioning pathway to a class table and continues on labeled data.

Timesteps are drawn independently and uniformly per example per step; the
loss is the mean over every tensor element. The optimizer is AdamW with
default betas (0.9, 0.999) and decoupled weight decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .backbone import (DenoiserParams, EncoderParams, denoise,
                       denoiser_from_checkpoint, encode_representation,
                       encoder_from_checkpoint, init_denoiser, init_encoder)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: F401  (re-export)
from .conditioning import build_condition, embed_timestep, swap_conditioning
from .config import ModelConfig
from .errors import ConfigError, DimensionError, DivergenceError, ModeError
from .schedule import NoiseSchedule, build_schedule, noise
from .tensor import Tensor

PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    precision: str = "f32"
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    loss_log_every: int = 50
    schedule_kind: str = "linear-beta"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    freeze_blocks: bool = False
    # joint training is asymmetric: the denoiser must learn to exploit the
    # representation before encoder updates wash its variance out, so the
    # encoder usually trains on a smaller step size
    encoder_lr_scale: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.encoder_lr_scale <= 0:
            raise ConfigError(f"encoder_lr_scale must be > 0, got {self.encoder_lr_scale}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class Model:
    """Trainable parameter bundle: denoiser plus (in representation mode) encoder."""

    denoiser: DenoiserParams
    encoder: EncoderParams | None = None

    @property
    def config(self) -> ModelConfig:
        return self.denoiser.config

    def named_tensors(self) -> dict[str, Tensor]:
        out = {f"denoiser.{n}": t for n, t in self.denoiser.tensors.items()}
        if self.encoder is not None:
            out.update({f"encoder.{n}": t for n, t in self.encoder.tensors.items()})
        return out

    def trainables(self, freeze_blocks: bool = False) -> dict[str, Tensor]:
        named = self.named_tensors()
        if freeze_blocks:
            named = {n: t for n, t in named.items() if not n.startswith("denoiser.blocks.")}
        return {n: t for n, t in named.items() if t.requires_grad}

    def zero_grad(self) -> None:
        for t in self.named_tensors().values():
            t.grad = None


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> Model:
    denoiser = init_denoiser(cfg, rng, dtype=dtype)
    encoder = init_encoder(cfg, rng, dtype=dtype) if cfg.conditioning == "representation" else None
    return Model(denoiser=denoiser, encoder=encoder)


def model_to_checkpoint(model: Model, step: int, cfg: TrainConfig) -> Checkpoint:
    tensors = {name: np.array(t.data, copy=True) for name, t in model.named_tensors().items()}
    return Checkpoint(config=model.config, step=step, tensors=tensors,
                      schedule_kind=cfg.schedule_kind, beta_start=cfg.beta_start,
                      beta_end=cfg.beta_end, precision=cfg.precision)


def model_from_checkpoint(ckpt: Checkpoint, trainable: bool = True) -> Model:
    denoiser = denoiser_from_checkpoint(ckpt, trainable=trainable)
    encoder = encoder_from_checkpoint(ckpt, trainable=trainable) if ckpt.has_encoder() else None
    return Model(denoiser=denoiser, encoder=encoder)


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """AdamW over named tensors; deterministic given iteration order.

    ``lr_scales`` maps name prefixes to learning-rate multipliers (longest
    matching prefix wins), which realizes the slower encoder step size.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 lr_scales: dict | None = None):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scales = dict(lr_scales or {})
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def _lr_for(self, name: str) -> float:
        best = ""
        for prefix in self.lr_scales:
            if name.startswith(prefix) and len(prefix) > len(best):
                best = prefix
        return self.lr * self.lr_scales[best] if best else self.lr

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self._lr_for(name) * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# loss


def loss_step(model: Model, schedule: NoiseSchedule, batch, labels=None,
              rng: np.random.Generator | None = None, t=None, eps=None,
              denoise_fn=None) -> Tensor:
    """One training objective evaluation; returns the scalar loss tensor.

    Draws per-example uniform timesteps and unit Gaussian noise (unless both
    are supplied explicitly, as gradient-check tests do), corrupts the batch,
    builds the model's conditioning, and measures the mean squared error
    between the drawn and predicted noise. ``denoise_fn(zt, cond, t)`` may
    replace the real denoiser (oracle-substitution tests).
    """
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise DimensionError(f"batch must be (B, C, H, W), got {batch.shape}")
    cfg = model.config
    dtype = model.denoiser.tensors["patch_embed.w"].dtype
    z0 = batch.astype(dtype, copy=False)
    b = z0.shape[0]

    if t is None or eps is None:
        if rng is None:
            raise ConfigError("loss_step needs an rng when t/eps are not fixed")
        if t is None:
            t = rng.integers(0, cfg.T, size=b)
        if eps is None:
            eps = rng.standard_normal(z0.shape, dtype=dtype)
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    eps = np.asarray(eps, dtype=dtype)
    zt = noise(schedule, z0, t, eps)

    t_embed = embed_timestep(model.denoiser, t, cfg.T)
    mode = cfg.conditioning
    if mode == "class":
        if labels is None:
            raise ModeError("class-conditioned loss requires labels")
        cond = build_condition(model.denoiser, mode, t_embed,
                               class_id=np.asarray(labels, dtype=np.int64))
    elif mode == "representation":
        if model.encoder is None:
            raise ModeError("representation-conditioned loss requires an encoder")
        r = encode_representation(model.encoder, z0)
        cond = build_condition(model.denoiser, mode, t_embed, r=r)
    else:
        cond = build_condition(model.denoiser, mode, t_embed)

    predict = denoise_fn if denoise_fn is not None else denoise
    eps_hat = predict(model.denoiser, zt, cond, t)
    diff = eps_hat - tt.constant(eps)
    return tt.tmean(diff * diff)


# ---------------------------------------------------------------------------
# loss curves


@dataclass
class LossCurve:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def append(self, step: int, loss: float) -> None:
        self.steps.append(int(step))
        self.losses.append(float(loss))

    def final_smoothed(self, window: int = 10) -> float:
        if not self.losses:
            raise ConfigError("empty loss curve")
        tail = self.losses[-window:]
        return float(sum(tail) / len(tail))

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("step,loss\n")
            for s, l in zip(self.steps, self.losses):
                f.write(f"{s},{l!r}\n")

    @staticmethod
    def from_csv(path) -> "LossCurve":
        curve = LossCurve()
        with open(path) as f:
            header = f.readline().strip()
            if header != "step,loss":
                raise ConfigError(f"{path}: not a loss curve CSV")
            for line in f:
                s, l = line.strip().split(",")
                curve.append(int(s), float(l))
        return curve


# ---------------------------------------------------------------------------
# training loops


def _train_loop(model: Model, schedule: NoiseSchedule, dataset, cfg: TrainConfig,
                rng: np.random.Generator, labeled: bool,
                valid_set=None, log=None) -> tuple[LossCurve, LossCurve | None]:
    lr_scales = {"encoder.": cfg.encoder_lr_scale} if cfg.encoder_lr_scale != 1.0 else None
    opt = AdamW(model.trainables(cfg.freeze_blocks), lr=cfg.lr,
                weight_decay=cfg.weight_decay, lr_scales=lr_scales)
    curve = LossCurve()
    val_curve = LossCurve() if valid_set is not None else None
    n = len(dataset)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        batch = dataset.stack(idx)
        labels = [dataset.label(int(i)) for i in idx] if labeled else None
        loss = loss_step(model, schedule, batch, labels=labels, rng=rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", step=step)
        tt.backward(loss)
        opt.step()
        opt.zero_grad()
        if step % cfg.loss_log_every == 0 or step == cfg.steps - 1:
            curve.append(step, value)
            if log is not None:
                log(step, value)
        if val_curve is not None and (step + 1) % steps_per_epoch == 0:
            epoch = (step + 1) // steps_per_epoch
            val_curve.append(step, validation_loss(model, schedule, valid_set,
                                                   seed=(cfg.seed, 7, epoch)))
    return curve, val_curve


def validation_loss(model: Model, schedule: NoiseSchedule, dataset, seed) -> float:
    """Mean objective over a labeled set with a fixed evaluation noise draw."""
    rng = np.random.default_rng(seed)
    batch = dataset.stack()
    labels = dataset.labels if model.config.conditioning == "class" else None
    loss = loss_step(model, schedule, batch, labels=labels, rng=rng)
    return float(loss.data)


def pretrain(cfg: TrainConfig, model_cfg: ModelConfig, dataset,
             out_dir=None, log=None) -> tuple[Checkpoint, LossCurve]:
    """Self-supervised pretraining; labels are never read.

    Returns the final checkpoint and the logged loss curve; when ``out_dir``
    is given, writes ``checkpoint.bin`` and ``loss.csv`` there.
    """
    if model_cfg.conditioning not in ("unconditional", "representation"):
        raise ModeError("pretraining supports unconditional or representation conditioning")
    # separate init and draw streams: models with different parameter counts
    # still see identical batch/timestep/noise sequences at the same seed
    model = init_model(model_cfg, np.random.default_rng((cfg.seed, 0)), dtype=cfg.dtype)
    rng = np.random.default_rng((cfg.seed, 1))
    schedule = build_schedule(model_cfg.T, cfg.schedule_kind, cfg.beta_start, cfg.beta_end)
    curve, _ = _train_loop(model, schedule, dataset, cfg, rng, labeled=False, log=log)
    ckpt = model_to_checkpoint(model, step=cfg.steps, cfg=cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "checkpoint.bin")
        curve.to_csv(out_dir / "loss.csv")
    return ckpt, curve


def finetune(ckpt: Checkpoint, cfg: TrainConfig, train_set, valid_set=None,
             num_classes: int | None = None, out_dir=None,
             log=None) -> tuple[Checkpoint, LossCurve, LossCurve | None]:
    """Swap conditioning to a class table and tune on labeled data.

    The step counter restarts at 0; validation loss (when a validation split
    is supplied) is logged once per epoch.
    """
    if not train_set.labeled:
        raise ModeError("finetuning requires a labeled dataset")
    if num_classes is None:
        num_classes = max(2, train_set.num_classes())
    swapped = swap_conditioning(ckpt, "class", num_classes)
    model = model_from_checkpoint(swapped, trainable=True)
    rng = np.random.default_rng((cfg.seed, 1))
    schedule = build_schedule(model.config.T, cfg.schedule_kind, cfg.beta_start, cfg.beta_end)
    curve, val_curve = _train_loop(model, schedule, train_set, cfg, rng,
                                   labeled=True, valid_set=valid_set, log=log)
    out = model_to_checkpoint(model, step=cfg.steps, cfg=cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out, out_dir / "checkpoint.bin")
        curve.to_csv(out_dir / "loss.csv")
        if val_curve is not None:
            val_curve.to_csv(out_dir / "val_loss.csv")
    return out, curve, val_curve
