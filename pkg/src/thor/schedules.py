"""Noise schedules and the forward (noising) process.

Timesteps are 1-indexed: ``t = 1`` is the first noising step and level 0 is
the clean image. Images are plain 2D float arrays; every function here also
accepts a leading batch axis.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from thor.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_min: float
    beta_max: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to ``t``; level 0 is defined as 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check(t)])

    def to_dict(self) -> dict:
        return {"kind": "linear", "T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return make_linear_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))


def make_linear_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    T = int(T)
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if not alpha_bars[-1] > 0 or np.any(np.diff(alpha_bars) >= 0):
        raise ConfigError("cumulative alpha underflows; shorten T or lower the betas")
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(T, float(beta_min), float(beta_max), betas, alphas, alpha_bars)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def forward_step(x_prev, t: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """One Markov noising step from level ``t-1`` to ``t``."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x_prev, eps)
    a = schedule.alpha(t)
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * eps


def forward_closed(x0, t: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """Jump straight from the clean image to level ``t``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x0, eps)
    ab = float(schedule.alpha_bars[schedule._check(t)])
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
