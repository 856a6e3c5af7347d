"""Reverse diffusion, partial-diffusion restoration and temporal harmonization.

Images may be single ``(H, W)`` arrays or batches ``(N, H, W)``; a batch is
restored in lockstep with one noise seed per image.

Noise draws are addressed per image seed: index 0 noises the input to
``t_start``, ``1 + t`` is the ancestral draw of reverse step ``t`` and
``T + 2 + t`` re-noises the input during harmonization at step ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from thor.anomaly_maps import MorphConfig, PerceptualMetric, anomaly_map, close_dilate, harmonic_score, normalize01
from thor.denoiser import DenoiserModel, predict_noise
from thor.errors import ConfigError, ShapeError
from thor.noise import NoiseSpec, sample_noise
from thor.schedules import NoiseSchedule, forward_closed

MaskHook = Callable[[int, np.ndarray], np.ndarray]


def reverse_step(x_t, t: int, eps_hat, schedule: NoiseSchedule, stochastic: bool = False, noise=None) -> np.ndarray:
    """Invert one noising step given the noise estimate.

    The deterministic form is the exact algebraic inverse of ``forward_step``.
    With ``stochastic`` an ancestral ``sqrt(beta_t) * noise`` term is added for
    ``t > 1``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"shape mismatch: {x_t.shape} vs {eps_hat.shape}")
    a = schedule.alpha(t)
    x_prev = (x_t - np.sqrt(1.0 - a) * eps_hat) / np.sqrt(a)
    if stochastic and t > 1:
        if noise is None:
            raise ValueError("stochastic reverse step needs a noise field")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != x_t.shape:
            raise ShapeError(f"noise shape {noise.shape} != {x_t.shape}")
        x_prev = x_prev + np.sqrt(schedule.beta(t)) * noise
    return x_prev


def predict_x0(x_t, t: int, eps_hat, schedule: NoiseSchedule, clamp: bool = True) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"shape mismatch: {x_t.shape} vs {eps_hat.shape}")
    ab = schedule.alpha_bar(t)
    x0 = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    return np.clip(x0, 0.0, 1.0) if clamp else x0


def default_t_start(kind: str, T: int) -> int:
    frac = 0.35 if kind == "gaussian" else 0.25
    return max(1, int(round(frac * T)))


def default_steps(t_start: int, n: int = 3) -> tuple[int, ...]:
    """``n`` evenly spaced steps strictly inside the chain, e.g. 75/50/25 %."""
    steps = {math.ceil(t_start * k / (n + 1)) for k in range(n, 0, -1)}
    return tuple(sorted((s for s in steps if 0 < s <= t_start), reverse=True))


@dataclass(frozen=True)
class HarmonizationPlan:
    t_start: int
    harmonization_steps: tuple[int, ...] = ()
    morph: MorphConfig = field(default_factory=MorphConfig)
    stochastic_reverse: bool = False

    def __post_init__(self):
        steps = tuple(int(s) for s in self.harmonization_steps)
        object.__setattr__(self, "harmonization_steps", steps)
        if self.t_start < 0:
            raise ConfigError("t_start must be non-negative")
        if any(not 0 < s <= self.t_start for s in steps):
            raise ConfigError(f"harmonization steps {steps} must lie in (0, {self.t_start}]")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ConfigError(f"harmonization steps {steps} must be strictly descending")

    @classmethod
    def default(cls, t_start: int, n_steps: int = 3, **kw) -> "HarmonizationPlan":
        return cls(t_start, default_steps(t_start, n_steps), **kw)

    def to_dict(self) -> dict:
        return {
            "t_start": self.t_start,
            "harmonization_steps": list(self.harmonization_steps),
            "morph": vars(self.morph).copy(),
            "stochastic_reverse": self.stochastic_reverse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonizationPlan":
        return cls(int(d["t_start"]), tuple(d.get("harmonization_steps", ())),
                   MorphConfig(**d.get("morph", {})), bool(d.get("stochastic_reverse", False)))


@dataclass
class RestorationTrace:
    final: np.ndarray
    per_step_maps: list[tuple[int, np.ndarray]] = field(default_factory=list)
    per_step_x0: list[tuple[int, np.ndarray]] = field(default_factory=list)
    per_step_masks: list[tuple[int, np.ndarray]] = field(default_factory=list)
    final_map: np.ndarray | None = None

    def score(self, eps_floor: float = 1e-8) -> np.ndarray:
        """Harmonic mean of the per-step maps, or the final map when no step ran."""
        if self.per_step_maps:
            return harmonic_score([m for _, m in self.per_step_maps], eps_floor)
        return self.final_map


class _Noise:
    """Per-image noise addressing for a lockstep batch."""

    def __init__(self, spec: NoiseSpec, seeds: Sequence[int], shape: tuple[int, int], batched: bool):
        self.specs = [spec.with_seed(s) for s in seeds]
        self.shape = shape
        self.batched = batched

    def __call__(self, index: int) -> np.ndarray:
        fields = np.stack([sample_noise(s, self.shape, index) for s in self.specs])
        return fields if self.batched else fields[0]


def image_seeds(seed, n: int) -> list[int]:
    if np.ndim(seed) == 0:
        if n == 1:
            return [int(seed)]
        return [int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0]) for i in range(n)]
    seeds = [int(s) for s in seed]
    if len(seeds) != n:
        raise ConfigError(f"got {len(seeds)} seeds for {n} images")
    return seeds


def _prepare(model: DenoiserModel, x_input, schedule, noise_spec, seed, strict_noise):
    model.check_compatible(schedule, noise_spec, strict_noise=strict_noise)
    x = np.asarray(x_input, dtype=np.float64)
    batched = x.ndim == 3
    n = x.shape[0] if batched else 1
    return x, _Noise(noise_spec, image_seeds(seed, n), x.shape[-2:], batched)


def restore_plain(model: DenoiserModel, x_input, t_start: int, schedule: NoiseSchedule, noise_spec: NoiseSpec,
                  stochastic: bool = False, seed=0, strict_noise: bool = True) -> np.ndarray:
    """Partial-diffusion restoration: noise to ``t_start`` and denoise back to 0."""
    x, noise = _prepare(model, x_input, schedule, noise_spec, seed, strict_noise)
    if t_start == 0:
        return x.copy()
    x_t = forward_closed(x, t_start, schedule, noise(0))
    for t in range(t_start, 0, -1):
        eps_hat = predict_noise(model, x_t, t)
        x_t = reverse_step(x_t, t, eps_hat, schedule, stochastic, noise(1 + t) if stochastic and t > 1 else None)
    return np.clip(x_t, 0.0, 1.0)


def restore_thor(model: DenoiserModel, x_input, plan: HarmonizationPlan, schedule: NoiseSchedule,
                 noise_spec: NoiseSpec, perceptual: PerceptualMetric | None = None, seed=0,
                 strict_noise: bool = True, mask_hook: MaskHook | None = None,
                 keep_x0: bool = False) -> RestorationTrace:
    """Partial-diffusion restoration with temporal harmonization.

    At each harmonization step the current clean-image estimate is compared
    with the input; the conditioned mask ``w`` keeps the chain where the map
    is high and substitutes the input, re-noised to the next level, where it
    is low. ``mask_hook(t, w)`` may replace the mask (used by tests).
    """
    x, noise = _prepare(model, x_input, schedule, noise_spec, seed, strict_noise)
    trace = RestorationTrace(final=x.copy())
    if plan.t_start == 0:
        trace.final_map = anomaly_map(x, trace.final, perceptual)
        return trace
    stochastic = plan.stochastic_reverse
    steps = set(plan.harmonization_steps)
    T = schedule.T
    x_t = forward_closed(x, plan.t_start, schedule, noise(0))
    for t in range(plan.t_start, 0, -1):
        eps_hat = predict_noise(model, x_t, t)
        chain = reverse_step(x_t, t, eps_hat, schedule, stochastic, noise(1 + t) if stochastic and t > 1 else None)
        if t not in steps:
            x_t = chain
            continue
        x0_pred = predict_x0(x_t, t, eps_hat, schedule)
        m = anomaly_map(x0_pred, x, perceptual)
        w = close_dilate(normalize01(m), plan.morph)
        if mask_hook is not None:
            w = np.asarray(mask_hook(t, w), dtype=np.float64)
        anchor = x if t == 1 else forward_closed(x, t - 1, schedule, noise(T + 2 + t))
        x_t = w * chain + (1.0 - w) * anchor
        trace.per_step_maps.append((t, m))
        trace.per_step_masks.append((t, w))
        if keep_x0:
            trace.per_step_x0.append((t, x0_pred))
    trace.final = np.clip(x_t, 0.0, 1.0)
    if not trace.per_step_maps:
        trace.final_map = anomaly_map(x, trace.final, perceptual)
    return trace


def split_trace(trace: RestorationTrace, i: int) -> RestorationTrace:
    """The ``i``-th image of a batched trace."""
    pick = lambda items: [(t, a[i]) for t, a in items]  # noqa: E731
    return RestorationTrace(
        final=trace.final[i],
        per_step_maps=pick(trace.per_step_maps),
        per_step_x0=pick(trace.per_step_x0),
        per_step_masks=pick(trace.per_step_masks),
        final_map=None if trace.final_map is None else trace.final_map[i],
    )
