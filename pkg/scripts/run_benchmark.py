"""Desk-scale comparison of plain partial diffusion and THOR over dataset seeds.

    python3 scripts/run_benchmark.py --seeds 0 1 2 --t-frac 0.35 --cache .cache/desk
"""
import argparse
import logging

from thor.benchmark import DeskBenchmark, DeskSettings
from thor.evaluation import write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--t-frac", type=float, default=0.35)
    p.add_argument("--noise", choices=("gaussian", "simplex"), default="gaussian")
    p.add_argument("--epochs", type=int, default=DeskSettings.epochs)
    p.add_argument("--cache", default=".cache/desk")
    p.add_argument("--csv", default=None, help="write one row per (seed, method)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    bench = DeskBenchmark(args.cache, DeskSettings(epochs=args.epochs))
    t = int(round(args.t_frac * bench.settings.T))
    rows = []
    for seed in args.seeds:
        for method in ("ddpm", "thor"):
            r = bench.report(seed, method, t, args.noise)
            rows.append({"seed": seed, "method": method, "noise": args.noise, "t_start": t,
                         "dice_avg": r.dice_avg, "dice_small": r.dice_small, "dice_medium": r.dice_medium,
                         "dice_large": r.dice_large, "recall": r.recall, "f1": r.f1,
                         "healthy_mae": r.healthy_mae, "auroc_aux": r.pixel_auroc_aux})
            print(f"seed {seed} {method:5s} dice {r.dice_avg:.4f} (S {r.dice_small:.4f} M {r.dice_medium:.4f} "
                  f"L {r.dice_large:.4f}) f1 {r.f1:.3f} healthy MAE {r.healthy_mae:.4f}")
    if args.csv:
        write_csv(args.csv, rows)


if __name__ == "__main__":
    main()
