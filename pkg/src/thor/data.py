"""Synthetic healthy phantoms, lesion injection, preprocessing and datasets."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import ndimage
from skimage.transform import resize

from thor.errors import ConfigError
from thor.geometry import mask_boxes
from thor.io import load_mask, load_png16, save_mask, save_png16

REFERENCE_AREA = 128 * 128
SMALL_BELOW = 71
LARGE_FROM = 570
SIZE_CLASSES = ("small", "medium", "large")
SPLITS = ("train", "test_healthy", "test_anomalous")
MANIFEST_VERSION = 1


def size_bounds(shape: tuple[int, int]) -> tuple[float, float]:
    """Pixel-count thresholds (small below, large from) rescaled to ``shape``."""
    r = shape[0] * shape[1] / REFERENCE_AREA
    return SMALL_BELOW * r, LARGE_FROM * r


def size_class_of(count: int, shape: tuple[int, int]) -> str:
    small, large = size_bounds(shape)
    if count < small:
        return "small"
    if count < large:
        return "medium"
    return "large"


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    size: tuple[int, int] = (64, 64)
    n_structures: tuple[int, int] = (2, 4)
    intensity_bands: tuple[tuple[float, float], ...] = ((0.45, 0.05), (0.7, 0.05), (0.3, 0.05), (0.85, 0.04))
    texture_amplitude: float = 0.03

    def __post_init__(self):
        lo, hi = self.n_structures
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad n_structures {self.n_structures}")
        if not self.intensity_bands:
            raise ConfigError("need at least one intensity band")
        for mean, jitter in self.intensity_bands:
            if not 0.0 <= mean <= 1.0 or jitter < 0:
                raise ConfigError(f"bad intensity band {(mean, jitter)}")
        if self.texture_amplitude < 0:
            raise ConfigError("texture_amplitude must be non-negative")


def _soft_ellipse(yy, xx, cy, cx, ry, rx, angle, softness):
    c, s = math.cos(angle), math.sin(angle)
    u = ((xx - cx) * c + (yy - cy) * s) / rx
    v = (-(xx - cx) * s + (yy - cy) * c) / ry
    r = np.sqrt(u * u + v * v)
    return 1.0 / (1.0 + np.exp((r - 1.0) / softness))


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Nested soft-edged ellipses with banded intensities and faint texture."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy = (yy + 0.5) / h
    xx = (xx + 0.5) / w
    img = np.zeros((h, w))

    cy, cx = 0.5 + rng.uniform(-0.03, 0.03, size=2)
    ry, rx = rng.uniform(0.38, 0.45), rng.uniform(0.32, 0.41)
    angle = rng.uniform(-0.25, 0.25)
    soft = 0.6 / min(h, w) / min(ry, rx)
    outer = _soft_ellipse(yy, xx, cy, cx, ry, rx, angle, soft)

    def band(k):
        mean, jitter = spec.intensity_bands[k % len(spec.intensity_bands)]
        return float(np.clip(mean + rng.uniform(-jitter, jitter), 0.0, 1.0))

    img = outer * band(0)
    n_inner = int(rng.integers(spec.n_structures[0], spec.n_structures[1] + 1))
    py, px, pry, prx = cy, cx, ry, rx
    for k in range(1, n_inner + 1):
        scale = rng.uniform(0.5, 0.75)
        sry, srx = pry * scale * rng.uniform(0.85, 1.15), prx * scale * rng.uniform(0.85, 1.15)
        sy = py + rng.uniform(-0.3, 0.3) * (pry - sry)
        sx = px + rng.uniform(-0.3, 0.3) * (prx - srx)
        a = _soft_ellipse(yy, xx, sy, sx, sry, srx, angle + rng.uniform(-0.4, 0.4), 0.6 / min(h, w) / min(sry, srx))
        img = img * (1.0 - a) + band(k) * a
        py, px, pry, prx = sy, sx, sry, srx

    if spec.texture_amplitude > 0:
        tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(1.0, min(h, w) / 48))
        tex /= tex.std() or 1.0
        img = img + spec.texture_amplitude * tex * outer
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class AnomalySpec:
    seed: int = 0
    size_class: Literal["small", "medium", "large"] = "medium"
    polarity: Literal["hypo", "hyper"] = "hypo"
    shape: Literal["blob", "ellipse"] = "blob"

    def __post_init__(self):
        if self.size_class not in SIZE_CLASSES:
            raise ConfigError(f"unknown size class {self.size_class!r}")
        if self.polarity not in ("hypo", "hyper"):
            raise ConfigError(f"unknown polarity {self.polarity!r}")
        if self.shape not in ("blob", "ellipse"):
            raise ConfigError(f"unknown shape {self.shape!r}")


def _count_range(size_class: str, shape: tuple[int, int]) -> tuple[int, int]:
    """Inclusive pixel-count range for a class at this resolution."""
    small, large = size_bounds(shape)
    lo_small = max(4, math.ceil(small / 4))
    if size_class == "small":
        lo, hi = lo_small, math.ceil(small) - 1
    elif size_class == "medium":
        lo, hi = math.ceil(small), math.ceil(large) - 1
    else:
        lo, hi = math.ceil(large), math.ceil(2.5 * large)
    if lo > hi:
        raise ConfigError(f"resolution {shape} is too small for {size_class} lesions")
    return lo, hi


def _radial_profile(rng, shape: str):
    if shape == "ellipse":
        aspect = rng.uniform(0.6, 1.0)
        rot = rng.uniform(0, np.pi)
        return lambda th: aspect / np.sqrt((np.cos(th - rot) * aspect) ** 2 + np.sin(th - rot) ** 2)
    amps = rng.uniform(-0.18, 0.18, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    return lambda th: 1.0 + sum(a * np.cos((k + 2) * th + p) for k, (a, p) in enumerate(zip(amps, phases)))


def inject_anomaly(image: np.ndarray, spec: AnomalySpec, max_tries: int = 64):
    """Paint one lesion into the foreground.

    Returns ``(image, mask, boxes)``; pixels outside ``mask`` are untouched.
    """
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    h, w = image.shape
    lo, hi = _count_range(spec.size_class, (h, w))
    fg = ndimage.binary_fill_holes(image > 0.1)
    depth = ndimage.distance_transform_edt(fg)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    for _ in range(max_tries):
        target = int(rng.integers(lo, hi + 1))
        profile = _radial_profile(rng, spec.shape)
        reach = math.sqrt(target / math.pi) * 1.5 + 1.5
        candidates = np.argwhere(depth >= reach)
        if len(candidates) == 0:
            continue
        cy, cx = candidates[rng.integers(len(candidates))] + rng.uniform(-0.5, 0.5, size=2)
        dist = np.hypot(yy - cy, xx - cx)
        rim = profile(np.arctan2(yy - cy, xx - cx))

        def mask_for(radius):
            return dist <= radius * rim

        r_lo, r_hi = 0.3, 2.0 * math.sqrt(target / math.pi) + 2.0
        for _ in range(40):
            mid = 0.5 * (r_lo + r_hi)
            if mask_for(mid).sum() < target:
                r_lo = mid
            else:
                r_hi = mid
        radius = r_hi
        mask = mask_for(radius)
        count = int(mask.sum())
        if not lo <= count <= hi or np.any(mask & ~fg):
            continue
        if len(mask_boxes(mask)) != 1:
            continue
        edge = np.clip((radius * rim - dist) / 1.5 + 0.5, 0.5, 1.0)
        out = image.copy()
        if spec.polarity == "hypo":
            factor = rng.uniform(0.3, 0.7)
            out[mask] = image[mask] * (1.0 - (1.0 - factor) * edge[mask])
        else:
            offset = rng.uniform(0.25, 0.45)
            out[mask] = np.minimum(image[mask] + offset * edge[mask], 1.0)
        return out, mask, mask_boxes(mask)
    raise ValueError(f"could not fit a {spec.size_class} anomaly in the foreground")


def preprocess(raw: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Scale by the 98th percentile of nonzero pixels, clamp, bilinear resize."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise ValueError("raw image must be finite and non-negative")
    nz = raw[raw > 0]
    if nz.size == 0:
        raise ValueError("cannot normalize an all-zero image")
    # order statistic (not interpolated) keeps the operation idempotent
    p98 = np.percentile(nz, 98, method="lower")
    img = np.clip(raw / p98, 0.0, 1.0)
    target_size = tuple(int(v) for v in target_size)
    if img.shape != target_size:
        img = np.clip(resize(img, target_size, order=1, mode="edge", anti_aliasing=False), 0.0, 1.0)
    return img


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    size: tuple[int, int] = (64, 64)
    n_train: int = 256
    n_test_healthy: int = 20
    n_test_anomalous: dict = field(default_factory=lambda: {"small": 20, "medium": 20, "large": 20})
    polarity: Literal["hypo", "hyper", "mixed"] = "mixed"
    texture_amplitude: float = 0.03

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if "size" in d:
            d["size"] = tuple(d["size"])
        return cls(**d)


def _derive(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *path]).generate_state(1)[0])


def _phantom(cfg: DatasetConfig, split_code: int, idx: int) -> np.ndarray:
    spec = PhantomSpec(seed=_derive(cfg.seed, split_code, idx), size=cfg.size, texture_amplitude=cfg.texture_amplitude)
    return generate_phantom(spec)


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def build_dataset(cfg: DatasetConfig, out_dir: str | Path) -> dict:
    """Write images, masks and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    records = []
    for split, code, n in (("train", 0, cfg.n_train), ("test_healthy", 1, cfg.n_test_healthy)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            img = preprocess(_phantom(cfg, code, i), cfg.size)
            rel = f"{split}/{i:04d}.png"
            save_png16(out / rel, img)
            records.append({"image": rel, "split": split, "sha256": _digest(img)})

    (out / "test_anomalous").mkdir(parents=True, exist_ok=True)
    k = 0
    for cls in SIZE_CLASSES:
        for j in range(int(cfg.n_test_anomalous.get(cls, 0))):
            base = _phantom(cfg, 2, k)
            polarity = cfg.polarity
            if polarity == "mixed":
                polarity = "hypo" if j % 2 == 0 else "hyper"
            shape = "blob" if (j // 2) % 2 == 0 else "ellipse"
            spec = AnomalySpec(seed=_derive(cfg.seed, 3, k), size_class=cls, polarity=polarity, shape=shape)
            img, mask, boxes = inject_anomaly(base, spec)
            img = preprocess(img, cfg.size)
            stem = f"test_anomalous/{k:04d}"
            save_png16(out / f"{stem}.png", img)
            save_mask(out / f"{stem}_mask.png", mask)
            records.append({
                "image": f"{stem}.png", "mask": f"{stem}_mask.png", "boxes": boxes, "split": "test_anomalous",
                "size_class": size_class_of(int(mask.sum()), cfg.size), "polarity": polarity,
                "sha256": _digest(img),
            })
            k += 1

    manifest = {"version": MANIFEST_VERSION, "seed": cfg.seed, "size": list(cfg.size),
                "config": cfg.to_dict(), "records": records}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def manifest_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class Split:
    images: np.ndarray
    masks: np.ndarray | None
    records: list


def load_manifest(path: str | Path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')}")
    return manifest, path.parent


def load_split(path: str | Path, split: str) -> Split:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    manifest, root = load_manifest(path)
    recs = [r for r in manifest["records"] if r["split"] == split]
    images = np.stack([load_png16(root / r["image"]) for r in recs]) if recs else np.zeros((0, *manifest["size"]))
    masks = None
    if split == "test_anomalous" and recs:
        masks = np.stack([load_mask(root / r["mask"]) for r in recs])
    return Split(images, masks, recs)
