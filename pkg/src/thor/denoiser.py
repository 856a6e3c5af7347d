"""Noise-predicting U-Net, its training loop and checkpoint persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import pickle
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from thor.errors import CompatibilityError, ConfigError, ShapeError
from thor.noise import NoiseSpec, sample_noise_batch
from thor.schedules import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    depth: int = 3
    time_embed_dim: int = 128
    image_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.base_channels < 1 or self.depth < 1 or self.time_embed_dim < 2:
            raise ConfigError("base_channels, depth and time_embed_dim must be positive")
        step = 2**self.depth
        if any(s % step for s in self.image_size):
            raise ConfigError(f"image_size {self.image_size} not divisible by 2**depth = {step}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0
    noise_spec: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNet(nn.Module):
    """Small U-shaped epsilon predictor with a timestep embedding at every level."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        e = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(e, e), nn.SiLU(), nn.Linear(e, e))
        self.inp = nn.Conv2d(1, c, 3, padding=1)
        chans = [c * 2 ** min(i, 2) for i in range(cfg.depth)]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = c
        for ch in chans:
            self.down_blocks.append(ResBlock(prev, ch, e))
            self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        self.mid = ResBlock(prev, prev, e)
        self.up_blocks = nn.ModuleList()
        for ch in reversed(chans):
            self.up_blocks.append(ResBlock(prev + ch, ch, e))
            prev = ch
        self.out_norm = _norm(prev)
        self.out = nn.Conv2d(prev, 1, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.cfg.time_embed_dim))
        h = self.inp(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, emb)
        for block in self.up_blocks:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(F.silu(self.out_norm(h)))


def schedule_fingerprint(schedule: NoiseSchedule, noise_spec: NoiseSpec) -> str:
    blob = json.dumps({"schedule": schedule.to_dict(), "noise": noise_spec.identity()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class DenoiserModel:
    net: UNet
    config: DenoiserConfig
    schedule: dict
    noise: dict
    fingerprint: str
    train_seed: int = 0
    history: list = field(default_factory=list)
    train_seconds: float | None = None

    def check_compatible(self, schedule: NoiseSchedule, noise_spec: NoiseSpec, strict_noise: bool = True) -> None:
        if schedule.to_dict() != self.schedule:
            raise CompatibilityError(f"checkpoint trained with schedule {self.schedule}, got {schedule.to_dict()}")
        if strict_noise and schedule_fingerprint(schedule, noise_spec) != self.fingerprint:
            raise CompatibilityError(f"checkpoint trained with noise {self.noise}, got {noise_spec.identity()}")

    def metadata(self) -> dict:
        return {
            "config": asdict(self.config),
            "schedule": self.schedule,
            "T": self.schedule["T"],
            "beta_min": self.schedule["beta_min"],
            "beta_max": self.schedule["beta_max"],
            "noise": self.noise,
            "noise_kind": self.noise["kind"],
            "fingerprint": self.fingerprint,
            "seed": self.train_seed,
            "history": [list(row) for row in self.history],
            "train_seconds": self.train_seconds,
        }


def build_model(dcfg: DenoiserConfig, schedule: NoiseSchedule, noise_spec: NoiseSpec, seed: int = 0) -> DenoiserModel:
    torch.manual_seed(seed)
    net = UNet(dcfg)
    net.eval()
    return DenoiserModel(net, dcfg, schedule.to_dict(), noise_spec.identity(),
                         schedule_fingerprint(schedule, noise_spec), seed)


@torch.no_grad()
def predict_noise(model: DenoiserModel, x_t, t) -> np.ndarray:
    """Evaluate the noise estimate for one image ``(H, W)`` or a batch ``(N, H, W)``."""
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-2:] != model.config.image_size:
        raise ShapeError(f"input size {x.shape[-2:]} != model size {model.config.image_size}")
    T = model.schedule["T"]
    ts = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
    if ts.min() < 1 or ts.max() > T:
        raise ConfigError(f"timestep outside [1, {T}]")
    model.net.eval()
    out = model.net(torch.from_numpy(x[:, None].astype(np.float32)), torch.from_numpy(ts.copy()))
    out = out[:, 0].double().numpy()
    return out[0] if single else out


def train(dataset: Sequence[np.ndarray], schedule: NoiseSchedule, tcfg: TrainConfig, dcfg: DenoiserConfig,
          curve_path: str | Path | None = None, time_budget: float | None = None) -> DenoiserModel:
    """Fit the noise predictor with the usual mean-squared noise-prediction loss.

    ``time_budget`` (seconds) stops early after the epoch that exceeds it.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset])
    if data.shape[1:] != dcfg.image_size:
        raise ShapeError(f"images are {data.shape[1:]}, config expects {dcfg.image_size}")

    model = build_model(dcfg, schedule, tcfg.noise_spec, tcfg.seed)
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=tcfg.learning_rate)
    rng = np.random.default_rng(tcfg.seed)
    noise = tcfg.noise_spec.with_seed(tcfg.seed)
    sab = torch.from_numpy(np.sqrt(schedule.alpha_bars)).float()
    s1ab = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bars)).float()
    x_all = torch.from_numpy(data[:, None].astype(np.float32))

    draw = 0
    start = time.perf_counter()
    net.train()
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        for b in range(0, len(order), tcfg.batch_size):
            idx = order[b : b + tcfg.batch_size]
            n = len(idx)
            ts = rng.integers(1, schedule.T + 1, size=n)
            eps = sample_noise_batch(noise, dcfg.image_size, range(draw, draw + n))
            draw += n
            eps_t = torch.from_numpy(eps[:, None].astype(np.float32))
            ti = torch.from_numpy(ts - 1)
            x_t = sab[ti][:, None, None, None] * x_all[idx] + s1ab[ti][:, None, None, None] * eps_t
            loss = F.mse_loss(net(x_t, torch.from_numpy(ts)), eps_t)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item() * n)
        mean_loss = float(np.sum(losses) / len(data))
        model.history.append((epoch, mean_loss))
        log.info("epoch %d loss %.5f", epoch, mean_loss)
        if time_budget is not None and time.perf_counter() - start > time_budget:
            log.info("time budget reached after %d epochs", epoch)
            break
    net.eval()
    model.train_seconds = time.perf_counter() - start
    if curve_path is not None:
        write_curve(model.history, curve_path)
    return model


def write_curve(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in history:
            w.writerow([epoch, f"{loss:.8g}"])


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(model: DenoiserModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.net.state_dict(), path)
    sidecar_path(path).write_text(json.dumps(model.metadata(), indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> DenoiserModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"checkpoint metadata not found: {side}")
    try:
        meta = json.loads(side.read_text())
        cfg = DenoiserConfig(**meta["config"])
        state = torch.load(path, map_location="cpu", weights_only=True)
        net = UNet(cfg)
        net.load_state_dict(state)
    except (KeyError, TypeError, ValueError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    net.eval()
    model = DenoiserModel(net, cfg, meta["schedule"], meta["noise"], meta["fingerprint"], meta.get("seed", 0))
    model.history = [tuple(r) for r in meta.get("history", [])]
    model.train_seconds = meta.get("train_seconds")
    return model
