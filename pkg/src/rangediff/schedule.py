"""Variance schedules for the diffusion forward/reverse processes.

A schedule is the sequence {beta_t} for t = 1..T together with the derived
quantities alpha_t = 1 - beta_t and the cumulative signal-retention product
alpha_bar_t = prod_{s<=t} alpha_s.  Convention: alpha_bar_0 = 1, so t = 0
denotes the clean image and corruption at t = 0 is the identity.

All arrays are float64 and precomputed eagerly at construction; every
downstream query is a table lookup.  Schedules are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_COSINE_OFFSET = 0.008

# betas from the cosine shape are capped here before alpha_bar is rebuilt
BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha/alpha_bar tables.

    betas[i] holds beta_{i+1} (length T); alpha_bars has length T+1 with
    alpha_bars[0] = 1.  `config` records the recipe used to build the
    schedule so checkpoints can store it and rebuild the arrays on load.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    config: dict | None = field(default=None, compare=False)

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        self._check_t(t, low=1)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t, low=1)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t, low=0)
        return float(self.alpha_bars[t])

    def _check_t(self, t: int, low: int) -> None:
        if not low <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{low}, {self.T}]")


def _finalize(betas: np.ndarray, config: dict | None) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ValueError("betas must be a non-empty 1-d sequence")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
    if alpha_bars[-1] <= 0.0:
        raise ValueError("alpha_bar underflowed to zero; schedule too aggressive")
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars, config=config)


def schedule_from_betas(betas) -> NoiseSchedule:
    """Build a schedule from explicit beta values (mostly for tests)."""
    return _finalize(np.asarray(betas, dtype=np.float64), config=None)


def build_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linearly interpolated betas from beta_start (t=1) to beta_end (t=T)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    config = {"type": "linear", "T": T, "beta_start": beta_start, "beta_end": beta_end}
    return _finalize(betas, config)


def build_cosine_schedule(T: int, offset: float = DEFAULT_COSINE_OFFSET) -> NoiseSchedule:
    """Cosine-shaped alpha_bar with betas back-derived and capped.

    alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + offset)/(1 + offset)) * pi/2).
    beta_t = 1 - alpha_bar_t/alpha_bar_{t-1}, capped at BETA_MAX; alpha_bar is
    then rebuilt from the capped betas so the cumulative-product invariant
    holds exactly.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if offset <= 0.0:
        raise ValueError(f"offset must be positive, got {offset}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + offset) / (1.0 + offset)) * (math.pi / 2.0)) ** 2
    raw_bar = f / f[0]
    betas = 1.0 - raw_bar[1:] / raw_bar[:-1]
    betas = np.minimum(betas, BETA_MAX)
    config = {"type": "cosine", "T": T, "offset": offset}
    return _finalize(betas, config)


def schedule_to_metadata(schedule: NoiseSchedule) -> dict:
    """Serializable recipe; derived arrays are recomputed on load, never stored."""
    if schedule.config is None:
        raise ValueError("schedule was built from raw betas and has no stored recipe")
    return dict(schedule.config)


def schedule_from_metadata(meta: dict) -> NoiseSchedule:
    kind = meta.get("type")
    if kind == "linear":
        return build_linear_schedule(meta["T"], meta["beta_start"], meta["beta_end"])
    if kind == "cosine":
        return build_cosine_schedule(meta["T"], meta.get("offset", DEFAULT_COSINE_OFFSET))
    raise ValueError(f"unknown schedule type {kind!r}")
