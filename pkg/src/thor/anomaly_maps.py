"""Anomaly maps, mask conditioning and the harmonic-mean anomaly score.

All functions take single images ``(H, W)`` or stacks ``(N, H, W)``; spatial
operations act on the last two axes only.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage
from skimage.transform import resize

from thor.errors import ConfigError, ShapeError


class PerceptualMetric(Protocol):
    """Per-pixel dissimilarity between two images of the same shape.

    Implementations must return a non-negative map of the input shape that
    is zero for identical inputs.
    """

    receptive_radius: int

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...


def _spatial(size: int, ndim: int) -> tuple[int, ...]:
    return (1,) * (ndim - 2) + (size, size)


def _pool2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2:]
    if h % 2 or w % 2:
        pad = [(0, 0)] * (a.ndim - 2) + [(0, h % 2), (0, w % 2)]
        a = np.pad(a, pad, mode="edge")
        h, w = a.shape[-2:]
    a = a.reshape(a.shape[:-2] + (h // 2, 2, w // 2, 2))
    return a.mean(axis=(-3, -1))


def upsample_to(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes to ``shape``."""
    if a.shape[-2:] == tuple(shape):
        return a
    flat = a.reshape((-1,) + a.shape[-2:])
    out = np.stack([resize(img, shape, order=1, mode="edge", anti_aliasing=False) for img in flat])
    return out.reshape(a.shape[:-2] + tuple(shape))


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = 7, c1: float = 1e-4, c2: float = 9e-4) -> np.ndarray:
    """Local structural similarity with a uniform window, data range 1."""
    size = _spatial(window, x.ndim)
    f = lambda a: ndimage.uniform_filter(a, size=size, mode="reflect")  # noqa: E731
    mx, my = f(x), f(y)
    vx = f(x * x) - mx * mx
    vy = f(y * y) - my * my
    cov = f(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


@dataclass(frozen=True)
class MultiScaleSSIMMap:
    """Default perceptual metric: ``(1 - SSIM) / 2`` averaged over dyadic scales.

    Stands in for a learned perceptual distance. Each scale's map is bilinearly
    upsampled to the input resolution before averaging.
    """

    scales: int = 3
    window: int = 7

    @property
    def receptive_radius(self) -> int:
        coarsest = 2 ** (self.scales - 1)
        return (self.window // 2) * coarsest + coarsest

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
        shape = x.shape[-2:]
        total = np.zeros(x.shape)
        xs, ys = x, y
        for _ in range(self.scales):
            d = np.clip((1.0 - ssim_map(xs, ys, self.window)) / 2.0, 0.0, None)
            total += upsample_to(d, shape)
            xs, ys = _pool2(xs), _pool2(ys)
        return total / self.scales


def spatialize_layers(layer_maps: Sequence[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    """Turn per-layer distance maps of a learned metric into one per-pixel map."""
    return np.mean([upsample_to(np.asarray(m, dtype=np.float64), shape) for m in layer_maps], axis=0)


DEFAULT_METRIC = MultiScaleSSIMMap()


def perceptual_map(x, y, metric: PerceptualMetric | None = None) -> np.ndarray:
    metric = metric or DEFAULT_METRIC
    out = metric(x, y)
    return np.clip(out, 0.0, None)


def anomaly_map(x, x_rec, metric: PerceptualMetric | None = None) -> np.ndarray:
    """Residual magnitude weighted by perceptual dissimilarity."""
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {x_rec.shape}")
    return np.abs(x - x_rec) * perceptual_map(x, x_rec, metric)


def normalize01(m) -> np.ndarray:
    """Min-max scale each image to [0, 1]; constant images map to zeros."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("normalize01 needs finite input")
    lo = m.min(axis=(-2, -1), keepdims=True)
    span = m.max(axis=(-2, -1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (m - lo) / safe, 0.0)


_DISK = re.compile(r"^disk\((\d+)\)$")


def structuring_element(name: str) -> np.ndarray:
    if name == "square3":
        return np.ones((3, 3), dtype=bool)
    if name == "square5":
        return np.ones((5, 5), dtype=bool)
    hit = _DISK.match(name)
    if hit:
        r = int(hit.group(1))
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        return xx * xx + yy * yy <= r * r
    raise ConfigError(f"unknown structuring element {name!r}")


@dataclass(frozen=True)
class MorphConfig:
    structuring_element: str = "square3"
    closing_iterations: int = 1
    dilation_iterations: int = 1

    def __post_init__(self):
        fp = structuring_element(self.structuring_element)
        c = tuple(s // 2 for s in fp.shape)
        if not fp[c]:
            raise ConfigError("structuring element must contain its origin")
        if self.closing_iterations < 0 or self.dilation_iterations < 0:
            raise ConfigError("iteration counts must be non-negative")

    def footprint(self, ndim: int = 2) -> np.ndarray:
        fp = structuring_element(self.structuring_element)
        return fp.reshape((1,) * (ndim - 2) + fp.shape)


def grey_close(m: np.ndarray, footprint: np.ndarray) -> np.ndarray:
    d = ndimage.grey_dilation(m, footprint=footprint, mode="nearest")
    return ndimage.grey_erosion(d, footprint=footprint, mode="nearest")


def close_dilate(m, cfg: MorphConfig | None = None) -> np.ndarray:
    """Grayscale closing (repeated) followed by grayscale dilation (repeated)."""
    cfg = cfg or MorphConfig()
    m = np.asarray(m, dtype=np.float64)
    fp = cfg.footprint(m.ndim)
    for _ in range(cfg.closing_iterations):
        m = grey_close(m, fp)
    for _ in range(cfg.dilation_iterations):
        m = ndimage.grey_dilation(m, footprint=fp, mode="nearest")
    return np.clip(m, 0.0, 1.0)


def harmonic_score(maps: Sequence[np.ndarray], eps_floor: float = 1e-8) -> np.ndarray:
    """Pixelwise harmonic mean of per-step anomaly maps.

    The floor only guards the reciprocal; the result is capped by the
    arithmetic mean so sub-floor values cannot be inflated by it.
    """
    if len(maps) == 0:
        raise ValueError("harmonic_score needs at least one map")
    arrays = [np.asarray(m, dtype=np.float64) for m in maps]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ShapeError("maps must share one shape")
    stack = np.stack(arrays)
    if np.any(stack < 0):
        raise ValueError("anomaly maps must be non-negative")
    n = stack.shape[0]
    hm = n / np.sum(1.0 / np.maximum(stack, eps_floor), axis=0)
    return np.minimum(hm, stack.mean(axis=0))
