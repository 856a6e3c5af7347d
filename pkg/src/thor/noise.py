"""Noise sources for the diffusion process: i.i.d. Gaussian and fractal simplex.

Every draw is addressed by ``(spec.seed, draw_index)`` so the same address
always reproduces the same field, independent of call order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np

from thor.errors import ConfigError

_F2 = 0.5 * (np.sqrt(3.0) - 1.0)
_G2 = (3.0 - np.sqrt(3.0)) / 6.0
# 2D projections of the 12 edge gradients of Gustavson's reference implementation
_GRAD2 = np.array(
    [[1, 1], [-1, 1], [1, -1], [-1, -1], [1, 0], [-1, 0],
     [1, 0], [-1, 0], [0, 1], [0, -1], [0, 1], [0, -1]],
    dtype=np.float64,
)


@dataclass(frozen=True)
class NoiseSpec:
    kind: Literal["gaussian", "simplex"] = "gaussian"
    seed: int = 0
    simplex_octaves: int = 6
    simplex_persistence: float = 0.8
    simplex_base_period: float = 32.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "simplex"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "simplex":
            if self.simplex_octaves < 1:
                raise ConfigError("simplex_octaves must be >= 1")
            if not 0.0 < self.simplex_persistence <= 1.0:
                raise ConfigError("simplex_persistence must lie in (0, 1]")
            if self.simplex_base_period <= 0:
                raise ConfigError("simplex_base_period must be positive")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)

    def identity(self) -> dict:
        """Fields that define the noise *distribution* (seed excluded)."""
        d = self.to_dict()
        d.pop("seed")
        if self.kind == "gaussian":
            d = {"kind": "gaussian"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)


def _rng(seed: int, draw_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(draw_index) & 0xFFFFFFFFFFFFFFFF])


def simplex2d(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Vectorized 2D simplex noise in roughly [-1, 1].

    ``perm`` is a permutation of 0..255; it is tiled to 512 entries internally.
    """
    p = np.concatenate([perm, perm]).astype(np.int64)
    s = (x + y) * _F2
    i = np.floor(x + s).astype(np.int64)
    j = np.floor(y + s).astype(np.int64)
    t = (i + j) * _G2
    x0 = x - (i - t)
    y0 = y - (j - t)
    upper = x0 > y0
    i1 = upper.astype(np.int64)
    j1 = 1 - i1
    x1 = x0 - i1 + _G2
    y1 = y0 - j1 + _G2
    x2 = x0 - 1.0 + 2.0 * _G2
    y2 = y0 - 1.0 + 2.0 * _G2
    ii = i & 255
    jj = j & 255
    gi0 = p[ii + p[jj]] % 12
    gi1 = p[ii + i1 + p[jj + j1]] % 12
    gi2 = p[ii + 1 + p[jj + 1]] % 12

    total = np.zeros_like(x0)
    for gi, dx, dy in ((gi0, x0, y0), (gi1, x1, y1), (gi2, x2, y2)):
        falloff = np.maximum(0.5 - dx * dx - dy * dy, 0.0)
        g = _GRAD2[gi]
        total += falloff**4 * (g[..., 0] * dx + g[..., 1] * dy)
    return 70.0 * total


def fractal_simplex(shape: tuple[int, int], spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Octave sum of simplex noise, not yet standardized."""
    h, w = shape
    perm = rng.permutation(256)
    offsets = rng.uniform(0.0, 256.0, size=(spec.simplex_octaves, 2))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    amplitude = 1.0
    freq = 1.0 / spec.simplex_base_period
    for o in range(spec.simplex_octaves):
        field += amplitude * simplex2d(xx * freq + offsets[o, 0], yy * freq + offsets[o, 1], perm)
        amplitude *= spec.simplex_persistence
        freq *= 2.0
    return field


def sample_noise(spec: NoiseSpec, shape: tuple[int, int], draw_index: int) -> np.ndarray:
    h, w = (int(v) for v in shape)
    if h <= 0 or w <= 0:
        raise ConfigError(f"noise shape must be positive, got {shape}")
    rng = _rng(spec.seed, draw_index)
    if spec.kind == "gaussian":
        return rng.standard_normal((h, w))
    field = fractal_simplex((h, w), spec, rng)
    field -= field.mean()
    std = field.std()
    if std == 0.0:
        return np.zeros((h, w))
    return field / std


def sample_noise_batch(spec: NoiseSpec, shape: tuple[int, int], draw_indices) -> np.ndarray:
    return np.stack([sample_noise(spec, shape, k) for k in draw_indices])
