"""Image and grid file formats."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def save_png16(path, img: np.ndarray) -> None:
    """Grayscale image in [0, 1] as a 16-bit PNG."""
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)


def load_png16(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 127


def save_grid(path, arr: np.ndarray, **meta) -> Path:
    """Raw little-endian float32 grid plus a JSON sidecar with its shape."""
    path = Path(path)
    arr = np.asarray(arr, dtype="<f4")
    path.write_bytes(arr.tobytes())
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps({"shape": list(arr.shape), "dtype": "float32", **meta}, indent=2, sort_keys=True))
    return side


def load_grid(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"]).astype(np.float64)


def save_heatmap(path, m: np.ndarray, cmap: str = "inferno", vmax: float | None = None) -> None:
    """8-bit RGB heatmap of a non-negative map."""
    from matplotlib import colormaps

    m = np.asarray(m, dtype=np.float64)
    top = vmax if vmax is not None else m.max()
    norm = m / top if top > 0 else np.zeros_like(m)
    rgb = colormaps[cmap](np.clip(norm, 0, 1))[..., :3]
    Image.fromarray((rgb * 255).round().astype(np.uint8)).save(path)


def save_panel(path, image: np.ndarray, restored: np.ndarray, score: np.ndarray, mask: np.ndarray | None = None,
               title: str | None = None) -> None:
    """Side-by-side input / restoration / anomaly map / ground truth figure."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [("input", image, "gray"), ("restoration", restored, "gray"), ("anomaly map", score, "inferno")]
    if mask is not None:
        panels.append(("ground truth", mask.astype(float), "gray"))
    fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
    for ax, (name, arr, cmap) in zip(axes, panels):
        vmax = 1.0 if cmap == "gray" else max(float(np.max(arr)), 1e-12)
        ax.imshow(arr, cmap=cmap, vmin=0.0, vmax=vmax)
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_ablation_plot(reports, path) -> None:
    """Average max-Dice against t_start, one line per (method, noise)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    series = sorted({(r.method, r.noise) for r in reports})
    for method, noise in series:
        pts = sorted((r.t_start, r.dice_avg) for r in reports if (r.method, r.noise) == (method, noise))
        ax.plot(*zip(*pts), marker="o", label=f"{method} ({noise})")
    ax.set_xlabel("t_start")
    ax.set_ylabel("max Dice (average)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
