"""Zero-shot classification with a frozen class-conditioned checkpoint.

Each sample draws a set of (timestep, noise) pairs once and reuses the same
pairs for every candidate label, so the per-class scores differ only through
the conditional noise predictions. A label's score is the Monte Carlo mean
of the squared reconstruction error, measured either between the clean
latent and its prediction (scoring space ``z0``) or between the drawn and
predicted noise (``epsilon``, the baseline). The predicted label is the
argmin; ties break toward the lowest class index.

Per-sample RNG streams derive from (seed, sample_index), which makes batch
classification identical to per-sample loops and safe to parallelize.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .backbone import InferenceModel
from .checkpoint import Checkpoint
from .errors import ConfigError, InputError, ModeError
from .metrics import ClassificationReport, classification_metrics
from .schedule import NoiseSchedule, noise, predict_z0

T_STRATEGIES = ("uniform-random", "fixed-list", "stratified")
SCORING_SPACES = ("z0", "epsilon")


@dataclass(frozen=True)
class ClassifierConfig:
    num_mc_samples: int = 32
    t_strategy: str = "stratified"
    t_values: tuple | None = None
    seed: int = 0
    scoring_space: str = "z0"
    independent_pairs: bool = False

    def __post_init__(self):
        if self.num_mc_samples < 1:
            raise ConfigError(f"num_mc_samples must be >= 1, got {self.num_mc_samples}")
        if self.t_strategy not in T_STRATEGIES:
            raise ConfigError(f"unknown t_strategy {self.t_strategy!r}")
        if self.t_strategy == "fixed-list" and not self.t_values:
            raise ConfigError("fixed-list strategy requires t_values")
        if self.scoring_space not in SCORING_SPACES:
            raise ConfigError(f"unknown scoring_space {self.scoring_space!r}")


@dataclass
class ScoreMatrix:
    """Per-sample, per-class Monte Carlo mean squared errors."""

    scores: np.ndarray  # (n_samples, n_classes)
    chosen: np.ndarray  # (n_samples,) argmin per row, lowest index on ties
    space: str

    def to_csv(self, path, labels=None) -> None:
        n, k = self.scores.shape
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header = ["sample"] + [f"score_{c}" for c in range(k)] + ["pred"]
            if labels is not None:
                header.append("label")
            w.writerow(header)
            for i in range(n):
                row = [i] + [repr(float(s)) for s in self.scores[i]] + [int(self.chosen[i])]
                if labels is not None:
                    row.append(int(labels[i]))
                w.writerow(row)


def _pair_timesteps(cfg: ClassifierConfig, T: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.t_strategy == "uniform-random":
        return rng.integers(0, T, size=cfg.num_mc_samples)
    if cfg.t_strategy == "fixed-list":
        t = np.asarray(cfg.t_values, dtype=np.int64)
        if np.any(t < 0) or np.any(t >= T):
            raise ConfigError(f"fixed-list t_values outside [0, {T})")
        return t
    # stratified: evenly spaced over the middle 90% of the schedule
    lo, hi = 0.05 * T, 0.95 * T
    if cfg.num_mc_samples == 1:
        return np.array([int(round((lo + hi) / 2))], dtype=np.int64)
    return np.round(np.linspace(lo, hi, cfg.num_mc_samples)).astype(np.int64)


def _draw_pairs(cfg: ClassifierConfig, T: int, shape: tuple, stream) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(stream)
    t = _pair_timesteps(cfg, T, rng)
    eps = rng.standard_normal((len(t),) + shape).astype(np.float32)
    return t, eps


def score_classes(predict_eps, schedule: NoiseSchedule, z0_batch: np.ndarray,
                  n_classes: int, cfg: ClassifierConfig, threads: int = 1,
                  start_index: int = 0) -> ScoreMatrix:
    """Core scoring engine over an arbitrary noise predictor.

    ``predict_eps(zt, t, class_id)`` maps an (S, C, H, W) batch with
    per-element timesteps and class ids to predicted noise of the same
    shape. Exposed so tests can drive stub predictors and brute-force
    comparisons through the exact production path.

    The pair stream of sample i derives from (seed, start_index + i), so a
    batched call equals a loop of single-sample calls at matching indices
    and samples can be scored in parallel.
    """
    z0_batch = np.asarray(z0_batch, dtype=np.float32)
    if z0_batch.ndim == 3:
        z0_batch = z0_batch[None]
    n = z0_batch.shape[0]

    def score_row(i: int) -> np.ndarray:
        z0 = z0_batch[i]
        row = np.empty(n_classes, dtype=np.float64)
        t, eps = _draw_pairs(cfg, schedule.T, z0.shape, (cfg.seed, start_index + i))
        zt = noise(schedule, np.broadcast_to(z0, eps.shape), t, eps)
        for c in range(n_classes):
            if cfg.independent_pairs:
                t, eps = _draw_pairs(cfg, schedule.T, z0.shape,
                                     (cfg.seed, start_index + i, c))
                zt = noise(schedule, np.broadcast_to(z0, eps.shape), t, eps)
            eps_hat = predict_eps(zt, t, np.full(len(t), c, dtype=np.int64))
            if cfg.scoring_space == "z0":
                z0_hat = predict_z0(schedule, zt, eps_hat, t)
                err = z0[None] - z0_hat
            else:
                err = eps - eps_hat
            axes = tuple(range(1, err.ndim))
            row[c] = float(np.mean(np.mean(err.astype(np.float64) ** 2, axis=axes)))
        return row

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(score_row, range(n)))
    else:
        rows = [score_row(i) for i in range(n)]
    scores = np.stack(rows)
    return ScoreMatrix(scores=scores, chosen=np.argmin(scores, axis=1), space=cfg.scoring_space)


def _checkpoint_predictor(ckpt: Checkpoint, n_classes: int):
    if ckpt.config.conditioning != "class":
        raise ModeError(f"classification needs a class-conditioned checkpoint, "
                        f"got {ckpt.config.conditioning!r}")
    table_rows = ckpt.tensors["denoiser.class_embed.table"].shape[0]
    if n_classes != table_rows:
        raise ConfigError(f"requested {n_classes} classes but checkpoint table has {table_rows}")
    model = InferenceModel(ckpt)
    return lambda zt, t, class_id: model.predict_eps(zt, t, class_id=class_id)


def classify(ckpt: Checkpoint, schedule: NoiseSchedule, z0, n_classes: int,
             cfg: ClassifierConfig, threads: int = 1,
             start_index: int = 0) -> tuple[np.ndarray, ScoreMatrix]:
    """Diffusion Classifier Zero: argmin over class labels of the clean-latent
    reconstruction error."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    cfg = replace(cfg, scoring_space="z0")
    matrix = score_classes(_checkpoint_predictor(ckpt, n_classes), schedule,
                           z0, n_classes, cfg, threads=threads, start_index=start_index)
    return matrix.chosen.copy(), matrix


def classify_epsilon(ckpt: Checkpoint, schedule: NoiseSchedule, z0, n_classes: int,
                     cfg: ClassifierConfig, threads: int = 1,
                     start_index: int = 0) -> tuple[np.ndarray, ScoreMatrix]:
    """Noise-space baseline: identical protocol, scores measured against eps."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    cfg = replace(cfg, scoring_space="epsilon")
    matrix = score_classes(_checkpoint_predictor(ckpt, n_classes), schedule,
                           z0, n_classes, cfg, threads=threads, start_index=start_index)
    return matrix.chosen.copy(), matrix


def evaluate(ckpt: Checkpoint, schedule: NoiseSchedule, test_set, cfg: ClassifierConfig,
             positive_class: int = 1, threads: int = 1) -> ClassificationReport:
    """Classify a labeled set and report accuracy plus per-class metrics.

    The ScoreMatrix rides along on the report for auditing.
    """
    if len(test_set) == 0:
        raise InputError("empty test set")
    if not test_set.labeled:
        raise InputError("evaluate requires a labeled test set")
    n_classes = ckpt.tensors["denoiser.class_embed.table"].shape[0]
    run = classify_epsilon if cfg.scoring_space == "epsilon" else classify
    y_pred, matrix = run(ckpt, schedule, test_set.stack(), n_classes, cfg, threads=threads)
    report = classification_metrics(test_set.labels, y_pred, positive_class=positive_class)
    report.predictions = [int(p) for p in y_pred]
    report.scores = matrix.scores
    return report
