"""Qualitative panels: input, DDPM and THOR restorations, THOR score and ground truth.

    python3 scripts/make_figures.py --seed 0 --n 6 --out figures
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from thor.anomaly_maps import anomaly_map
from thor.benchmark import DeskBenchmark
from thor.data import load_split
from thor.evaluation import noise_spec_for
from thor.restoration import HarmonizationPlan, restore_plain, restore_thor


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--t-frac", type=float, default=0.35)
    p.add_argument("--cache", default=".cache/desk")
    p.add_argument("--out", default="figures")
    args = p.parse_args()

    bench = DeskBenchmark(args.cache)
    model = bench.model(args.seed)
    noise = noise_spec_for(model)
    t = int(round(args.t_frac * bench.settings.T))
    split = load_split(bench.dataset(args.seed), "test_anomalous")
    idx = np.linspace(0, len(split.images) - 1, args.n).round().astype(int)
    x = split.images[idx]
    plain = restore_plain(model, x, t, bench.schedule, noise, seed=args.seed)
    trace = restore_thor(model, x, HarmonizationPlan.default(t), bench.schedule, noise, seed=args.seed)
    cols = [("input", x, "gray"), ("DDPM", plain, "gray"), ("DDPM map", anomaly_map(x, plain), "inferno"),
            ("THOR", trace.final, "gray"), ("THOR score", trace.score(), "inferno"),
            ("ground truth", split.masks[idx].astype(float), "gray")]
    fig, axes = plt.subplots(len(idx), len(cols), figsize=(2 * len(cols), 2 * len(idx)), squeeze=False)
    for r in range(len(idx)):
        for c, (name, arr, cmap) in enumerate(cols):
            axes[r, c].imshow(arr[r], cmap=cmap, vmin=0, vmax=1 if cmap == "gray" else None)
            axes[r, c].axis("off")
            if r == 0:
                axes[r, c].set_title(name, fontsize=9)
    fig.tight_layout()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fig.savefig(out / f"qualitative_s{args.seed}_t{t}.png", dpi=90)
    print(f"wrote {out / f'qualitative_s{args.seed}_t{t}.png'}")


if __name__ == "__main__":
    main()
