"""Diffusion timestep machinery.

The forward corruption is ``z_t = gamma_t * z_0 + delta_t * eps`` with
``gamma_t^2 + delta_t^2 = 1``. Timesteps are integers in [0, T) with t=0
nearly clean. The signal/noise scales come from the linear-beta recipe:
``gamma_t = sqrt(prod_{s<=t} (1 - beta_s))`` with beta linearly spaced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, TimestepError
from .tensor import Tensor

SCHEDULE_KINDS = ("linear-beta",)

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

_GAMMA_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed signal scale gamma_t and noise scale delta_t for t in [0, T).

    Immutable after construction; safe for concurrent read.
    """

    T: int
    gamma: np.ndarray
    delta: np.ndarray
    kind: str = "linear-beta"
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if t.size == 0 or np.any(t < 0) or np.any(t >= self.T):
            raise TimestepError(f"timestep {t} outside [0, {self.T})")
        return t


def build_schedule(
    T: int,
    kind: str = "linear-beta",
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build the noise schedule; only the linear-beta kind is implemented."""
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; supported: {SCHEDULE_KINDS}")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"invalid beta range: need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    gamma = np.sqrt(alpha_bar)
    delta = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(T=T, gamma=gamma, delta=delta, kind=kind,
                         beta_start=float(beta_start), beta_end=float(beta_end))


def _scales(s: NoiseSchedule, t, ref: np.ndarray):
    """Per-example (gamma, delta) broadcast against ``ref``'s batch layout."""
    t = s.check_t(t)
    g = s.gamma[t].astype(ref.dtype, copy=False)
    d = s.delta[t].astype(ref.dtype, copy=False)
    if t.ndim == 1 and ref.ndim > 1 and t.shape[0] == ref.shape[0]:
        expand = (slice(None),) + (None,) * (ref.ndim - 1)
        g, d = g[expand], d[expand]
    return g, d


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def noise(s: NoiseSchedule, z0, t, eps) -> np.ndarray:
    """Forward corruption: gamma_t * z0 + delta_t * eps.

    ``t`` may be a scalar or a per-example array matching z0's batch dim.
    """
    z0a, epsa = _as_array(z0), _as_array(eps)
    if z0a.shape != epsa.shape:
        raise DimensionError(f"eps shape {epsa.shape} != z0 shape {z0a.shape}")
    g, d = _scales(s, t, z0a)
    return g * z0a + d * epsa


def predict_z0(s: NoiseSchedule, zt, eps_hat, t) -> np.ndarray:
    """Invert the forward process: (z_t - delta_t * eps_hat) / gamma_t."""
    zta, epsa = _as_array(zt), _as_array(eps_hat)
    g, d = _scales(s, t, zta)
    if np.any(np.asarray(g) < _GAMMA_FLOOR):
        raise NumericError(f"gamma_t below {_GAMMA_FLOOR}; inversion unsafe")
    return (zta - d * epsa) / g
