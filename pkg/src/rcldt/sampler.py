"""Reverse-process generation.

Ancestral sampling: the step at timestep t maps the state at t to the state
at t-1 using the predicted noise and the schedule's posterior mean/variance;
the variance vanishes automatically at t=0 because the previous noise level
is zero. Full generation runs all T steps from pure noise; partial denoising
injects a corrupted latent at an intermediate timestep and denoises from
there, which keeps generations comparable across conditioning modes.

Emitted images are clamped to [-1, 1]; PGM export maps that range linearly
onto 8-bit gray.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .backbone import InferenceModel
from .checkpoint import Checkpoint
from .data import write_pgm
from .errors import ModeError, TimestepError
from .schedule import NoiseSchedule, noise, predict_z0


def _prev_gamma_delta(s: NoiseSchedule, t: int) -> tuple[float, float]:
    if t == 0:
        return 1.0, 0.0
    return float(s.gamma[t - 1]), float(s.delta[t - 1])


def posterior_mean(s: NoiseSchedule, zt: np.ndarray, eps_hat: np.ndarray, t: int) -> np.ndarray:
    """Mean of the reverse transition at t given the predicted noise."""
    g_t, d_t = float(s.gamma[t]), float(s.delta[t])
    g_prev, _ = _prev_gamma_delta(s, t)
    alpha_t = (g_t / g_prev) ** 2
    beta_t = 1.0 - alpha_t
    return (zt - (beta_t / d_t) * eps_hat) / math.sqrt(alpha_t)


def posterior_sigma(s: NoiseSchedule, t: int) -> float:
    """Std-dev of the reverse transition; zero at t=0."""
    g_t, d_t = float(s.gamma[t]), float(s.delta[t])
    g_prev, d_prev = _prev_gamma_delta(s, t)
    alpha_t = (g_t / g_prev) ** 2
    beta_t = 1.0 - alpha_t
    return math.sqrt(d_prev ** 2 / d_t ** 2 * beta_t)


def _resolve_condition(model: InferenceModel, n: int, class_id=None, r=None,
                       ref_images=None):
    """Per-mode conditioning kwargs for predict_eps; validates the spec."""
    mode = model.mode
    if mode == "unconditional":
        if class_id is not None or r is not None or ref_images is not None:
            raise ModeError("unconditional checkpoint takes no conditioning inputs")
        return {}
    if mode == "class":
        if class_id is None:
            raise ModeError("class-conditioned checkpoint requires class_id")
        ids = np.atleast_1d(np.asarray(class_id, dtype=np.int64))
        if ids.size == 1:
            ids = np.full(n, int(ids[0]), dtype=np.int64)
        return {"class_id": ids}
    if r is None:
        if ref_images is None:
            raise ModeError("representation-conditioned checkpoint requires r or ref_images")
        r = model.encode(np.asarray(ref_images, dtype=np.float32))
    r = np.asarray(r, dtype=np.float32)
    if r.ndim == 1:
        r = np.broadcast_to(r, (n, r.shape[0])).copy()
    return {"r": r}


def _denoise_from(model: InferenceModel, s: NoiseSchedule, z: np.ndarray,
                  t_start: int, cond_kwargs: dict, rng: np.random.Generator) -> np.ndarray:
    for t in range(t_start, -1, -1):
        t_batch = np.full(z.shape[0], t, dtype=np.int64)
        eps_hat = model.predict_eps(z, t_batch, **cond_kwargs)
        z = posterior_mean(s, z, eps_hat, t)
        sigma = posterior_sigma(s, t)
        if sigma > 0:
            z = z + sigma * rng.standard_normal(z.shape).astype(z.dtype)
    return z


def sample(ckpt: Checkpoint, schedule: NoiseSchedule, n: int, seed: int,
           class_id=None, r=None, ref_images=None) -> np.ndarray:
    """Generate n images from pure noise via full-length ancestral sampling."""
    model = InferenceModel(ckpt)
    cfg = ckpt.config
    cond = _resolve_condition(model, n, class_id, r, ref_images)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, cfg.image_channels, cfg.image_size, cfg.image_size)).astype(np.float32)
    z = _denoise_from(model, schedule, z, schedule.T - 1, cond, rng)
    return np.clip(z, -1.0, 1.0)


def partial_denoise(ckpt: Checkpoint, schedule: NoiseSchedule, z0, t_start: int,
                    class_id=None, seed: int = 0) -> np.ndarray:
    """Corrupt z0 to timestep t_start with fresh noise, then denoise back.

    For representation-conditioned checkpoints the conditioning vector is
    computed from the original z0.
    """
    if not (0 < t_start < schedule.T):
        raise TimestepError(f"t_start must lie in (0, {schedule.T}), got {t_start}")
    z0 = np.asarray(z0, dtype=np.float32)
    if z0.ndim == 3:
        z0 = z0[None]
    model = InferenceModel(ckpt)
    cond = _resolve_condition(model, z0.shape[0], class_id=class_id,
                              ref_images=z0 if model.mode == "representation" else None)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    zt = noise(schedule, z0, t_start, eps)
    out = _denoise_from(model, schedule, zt, t_start, cond, rng)
    return np.clip(out, -1.0, 1.0)


def z0_prediction_sweep(ckpt: Checkpoint, schedule: NoiseSchedule, z0,
                        t_list, class_id=None, seed: int = 0) -> list:
    """For each t: one noising draw, one denoiser call, one inversion.

    Returns [(t, z_t, z0_pred), ...]; pair with :func:`save_sweep_grid` to
    emit the two-row image grid (noised on top, predictions below).
    """
    z0 = np.asarray(z0, dtype=np.float32)
    if z0.ndim == 3:
        z0 = z0[None]
    model = InferenceModel(ckpt)
    cond = _resolve_condition(model, z0.shape[0], class_id=class_id,
                              ref_images=z0 if model.mode == "representation" else None)
    rng = np.random.default_rng(seed)
    out = []
    for t in t_list:
        t = int(schedule.check_t(t))
        eps = rng.standard_normal(z0.shape).astype(np.float32)
        zt = noise(schedule, z0, t, eps)
        t_batch = np.full(z0.shape[0], t, dtype=np.int64)
        eps_hat = model.predict_eps(zt, t_batch, **cond)
        out.append((t, zt, predict_z0(schedule, zt, eps_hat, t)))
    return out


def save_sweep_grid(sweep, path, sample_index: int = 0) -> None:
    """PGM grid: columns are timesteps, top row z_t, bottom row z0 prediction."""
    tops = [np.clip(zt[sample_index, 0], -1, 1) for _, zt, _ in sweep]
    bots = [np.clip(zp[sample_index, 0], -1, 1) for _, _, zp in sweep]
    grid = np.concatenate([np.concatenate(tops, axis=1),
                           np.concatenate(bots, axis=1)], axis=0)
    write_pgm(path, grid)


def save_image_set(images: np.ndarray, out_dir, prefix: str, meta_rows: list) -> list:
    """Write images as numbered PGMs plus an index.csv of (filename, seed, t, condition)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(images.shape[0]):
        name = f"{prefix}_{i:04d}.pgm"
        write_pgm(out_dir / name, images[i])
        names.append(name)
    with open(out_dir / "index.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["filename", "seed", "t", "condition"])
        for name, row in zip(names, meta_rows):
            w.writerow([name, *row])
    return names
