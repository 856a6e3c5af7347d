"""Command-line entry point: ``thor {synth,train,restore,score,eval,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from thor.anomaly_maps import anomaly_map
from thor.config import RunConfig, write_run_record
from thor.data import SIZE_CLASSES, build_dataset, load_manifest, load_split, manifest_hash, preprocess
from thor.denoiser import load_checkpoint, save_checkpoint, train
from thor.errors import CompatibilityError, ConfigError, ShapeError
from thor.evaluation import ablate, noise_spec_for, run_experiment, score_dataset
from thor.io import load_png16, save_ablation_plot, save_grid, save_heatmap, save_panel, save_png16
from thor.noise import NoiseSpec
from thor.restoration import HarmonizationPlan, default_steps, restore_plain, restore_thor
from thor.schedules import NoiseSchedule

log = logging.getLogger("thor")

OUT_ENV = "THOR_OUT"


def out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def parse_counts(text: str) -> dict:
    counts = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if name not in SIZE_CLASSES or not value.isdigit():
            raise ConfigError(f"bad --counts entry {part!r}; expected e.g. small=20,medium=20,large=20")
        counts[name] = int(value)
    return counts


def parse_size(text: str) -> tuple[int, int]:
    parts = [int(v) for v in text.lower().split("x")]
    return (parts[0], parts[0]) if len(parts) == 1 else (parts[0], parts[1])


def base_config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def finish(args, summary: dict, line: str) -> int:
    print(json.dumps(summary, sort_keys=True, default=str) if args.json else line)
    return 0


def schedule_for(model) -> NoiseSchedule:
    return NoiseSchedule.from_dict(model.schedule)


def resolve_noise(args, model) -> tuple[NoiseSpec, NoiseSpec | None]:
    """Noise used at inference and, when it differs from training, the override to pass on."""
    trained = noise_spec_for(model)
    if args.noise is None or args.noise == trained.kind:
        return trained, None
    if not args.cross_noise:
        raise CompatibilityError(f"checkpoint was trained with {trained.kind} noise; pass --cross-noise to "
                                 f"restore with {args.noise}")
    return NoiseSpec(args.noise), NoiseSpec(args.noise)


def resolve_plan(args, cfg: RunConfig, kind: str, T: int) -> HarmonizationPlan:
    r = cfg.restore
    t_start = args.t_start if args.t_start is not None else r.t_start
    cfg = cfg.override("schedule", T=T)
    cfg = replace(cfg, restore=replace(r, t_start=t_start))
    plan = cfg.plan(kind)
    if args.steps is not None:
        if "," in args.steps:
            steps = tuple(int(s) for s in args.steps.split(",") if s)
        else:
            steps = default_steps(plan.t_start, int(args.steps))
        plan = HarmonizationPlan(plan.t_start, steps, plan.morph, plan.stochastic_reverse)
    return plan


def load_model(path):
    if path is None:
        raise ConfigError("--checkpoint is required")
    return load_checkpoint(path)


# subcommands


def cmd_synth(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    ds = cfg.dataset
    ds = replace(
        ds,
        seed=args.seed if args.seed is not None else ds.seed,
        size=parse_size(args.size) if args.size else ds.size,
        n_train=args.n_train if args.n_train is not None else ds.n_train,
        n_test_healthy=args.n_healthy if args.n_healthy is not None else ds.n_test_healthy,
        n_test_anomalous={**ds.n_test_anomalous, **parse_counts(args.counts)} if args.counts else ds.n_test_anomalous,
        polarity=args.polarity or ds.polarity,
    )
    cfg = replace(cfg, dataset=ds)
    out = out_dir(args)
    manifest = build_dataset(ds, out)
    digest = manifest_hash(out / "manifest.json")
    write_run_record(out / "records", "synth", cfg, {"dataset": ds.seed}, time.perf_counter() - start,
                     manifest_hash=digest)
    n = len(manifest["records"])
    return finish(args, {"out": str(out), "records": n, "manifest_hash": digest},
                  f"synth: {n} images -> {out} (manifest {digest[:12]})")


def cmd_train(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    if args.noise:
        cfg = replace(cfg, noise=replace(cfg.noise, kind=args.noise))
    cfg = cfg.override("schedule", T=args.T)
    cfg = cfg.override("training", epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                       seed=args.seed, time_budget=args.time_budget)
    data = load_split(args.manifest, "train")
    cfg = cfg.override("denoiser", base_channels=args.channels, depth=args.depth,
                       image_size=tuple(data.images.shape[1:]))
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    model = train(list(data.images), cfg.schedule.build(), cfg.train_config(), cfg.denoiser,
                  curve_path=out / "training_curve.csv", time_budget=cfg.training.time_budget)
    ckpt = save_checkpoint(model, out / "model.pt")
    cfg.save(out / "run_config.json")
    write_run_record(out, "train", cfg, {"training": cfg.training.seed}, time.perf_counter() - start,
                     checkpoint=str(ckpt), fingerprint=model.fingerprint)
    final = model.history[-1][1]
    return finish(args, {"checkpoint": str(ckpt), "epochs": len(model.history), "final_loss": final},
                  f"train: {len(model.history)} epochs, final loss {final:.5f} -> {ckpt}")


def _inputs(args, size):
    """Images to restore plus optional GT masks and names."""
    if args.image:
        return np.stack([preprocess(load_png16(p), size) for p in args.image]), None, [Path(p).stem for p in args.image]
    if not args.manifest:
        raise ConfigError("give --image or --manifest")
    split = load_split(args.manifest, args.split)
    idx = args.index if args.index else range(len(split.images))
    idx = list(idx)
    for i in idx:
        if not 0 <= i < len(split.images):
            raise ConfigError(f"--index {i} outside split of {len(split.images)} images")
    masks = split.masks[idx] if split.masks is not None else None
    names = [Path(split.records[i]["image"]).stem for i in idx]
    return split.images[idx], masks, names


def cmd_restore(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    model = load_model(args.checkpoint)
    schedule = schedule_for(model)
    noise, override = resolve_noise(args, model)
    plan = resolve_plan(args, cfg, noise.kind, schedule.T)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    images, masks, names = _inputs(args, model.config.image_size)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    strict = override is None
    if args.method == "ddpm":
        restored = restore_plain(model, images, plan.t_start, schedule, noise, plan.stochastic_reverse, seed=seed,
                                 strict_noise=strict)
        finals, step_maps = anomaly_map(images, restored), []
    else:
        trace = restore_thor(model, images, plan, schedule, noise, seed=seed, strict_noise=strict)
        restored, finals, step_maps = trace.final, trace.score(), trace.per_step_maps
    written = 0
    for i, name in enumerate(names):
        d = out / name
        d.mkdir(exist_ok=True)
        save_png16(d / "restored.png", restored[i])
        save_grid(d / "anomaly_map.f32", finals[i])
        save_heatmap(d / "anomaly_map.png", finals[i])
        save_panel(d / "panel.png", images[i], restored[i], finals[i], None if masks is None else masks[i],
                   title=f"{args.method} t_start={plan.t_start}")
        for t, m in step_maps:
            save_grid(d / f"step_{t:04d}.f32", m[i], t=t)
            written += 1
    write_run_record(out, "restore", cfg, {"restore": seed}, time.perf_counter() - start,
                     plan=plan.to_dict(), method=args.method, noise=noise.kind, t_start=plan.t_start,
                     checkpoint=str(args.checkpoint))
    return finish(args, {"out": str(out), "images": len(names), "step_maps": written, "t_start": plan.t_start},
                  f"restore: {len(names)} images, {written} per-step maps -> {out}")


def cmd_score(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    model = load_model(args.checkpoint)
    schedule = schedule_for(model)
    noise, override = resolve_noise(args, model)
    plan = resolve_plan(args, cfg, noise.kind, schedule.T)
    if args.method == "ddpm":
        plan = HarmonizationPlan(plan.t_start, (), plan.morph, plan.stochastic_reverse)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    sc = score_dataset(args.manifest, model, args.method, schedule, plan, seed, split=args.split, noise=override)
    out = out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    for rec, score in zip(sc.records, sc.scores):
        stem = Path(rec["image"]).stem
        save_grid(out / f"{stem}.f32", score)
        save_heatmap(out / f"{stem}.png", score)
    write_run_record(out, "score", cfg, {"score": seed}, time.perf_counter() - start, plan=plan.to_dict(),
                     method=args.method, split=args.split)
    return finish(args, {"out": str(out), "images": len(sc.records)},
                  f"score: {len(sc.records)} maps ({args.split}) -> {out}")


def cmd_eval(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    load_manifest(args.manifest)
    model = load_model(args.checkpoint)
    schedule = schedule_for(model)
    noise, override = resolve_noise(args, model)
    plan = resolve_plan(args, cfg, noise.kind, schedule.T)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    out = out_dir(args)
    report = run_experiment(args.manifest, model, args.method, schedule, plan, seed=seed,
                            n_thresholds=cfg.eval.n_thresholds, rule=cfg.detection_rule(), out_dir=out,
                            per_image=cfg.eval.per_image, noise=override)
    if args.figures:
        sc_plan = plan if args.method == "thor" else HarmonizationPlan(plan.t_start, (), plan.morph)
        split = load_split(args.manifest, "test_anomalous")
        picks = np.linspace(0, len(split.images) - 1, min(args.figures, len(split.images))).round().astype(int)
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        for i in picks:
            x = split.images[i]
            if args.method == "thor":
                tr = restore_thor(model, x, sc_plan, schedule, noise, seed=seed, strict_noise=override is None)
                rec, score = tr.final, tr.score()
            else:
                rec = restore_plain(model, x, plan.t_start, schedule, noise, seed=seed, strict_noise=override is None)
                score = anomaly_map(x, rec)
            save_panel(fig_dir / f"{args.method}_{i:03d}.png", x, rec, score, split.masks[i],
                       title=f"{args.method} {noise.kind} t={plan.t_start}")
    write_run_record(out, "eval", cfg, {"eval": seed}, time.perf_counter() - start, plan=plan.to_dict(),
                     method=args.method, checkpoint=str(args.checkpoint), manifest=str(args.manifest),
                     report_hash=report.content_hash())
    line = (f"eval: {args.method}/{report.noise} t={report.t_start} dice avg {report.dice_avg:.4f} "
            f"(S {report.dice_small} M {report.dice_medium} L {report.dice_large}) recall {report.recall:.3f} "
            f"f1 {report.f1:.3f} hash {report.content_hash()[:12]}")
    return finish(args, {**report.to_dict(), "report_hash": report.content_hash()}, line)


def parse_checkpoints(items) -> dict:
    models = {}
    for item in items or []:
        kind, sep, path = item.partition("=")
        model = load_checkpoint(path if sep else kind)
        models[model.noise["kind"]] = model
        if sep and kind != model.noise["kind"]:
            raise CompatibilityError(f"{path} was trained with {model.noise['kind']} noise, not {kind}")
    if not models:
        raise ConfigError("ablate needs at least one --checkpoint")
    return models


def parse_levels(text: str, T: int) -> list[int]:
    levels = []
    for v in text.split(","):
        f = float(v)
        levels.append(int(round(f * T)) if f < 1 else int(f))
    return levels


def cmd_ablate(args) -> int:
    start = time.perf_counter()
    cfg = base_config(args)
    load_manifest(args.manifest)
    models = parse_checkpoints(args.checkpoint)
    schedules = {NoiseSchedule.from_dict(m.schedule).fingerprint() for m in models.values()}
    if len(schedules) > 1:
        raise CompatibilityError("all ablation checkpoints must share one schedule")
    schedule = schedule_for(next(iter(models.values())))
    levels = parse_levels(args.t_levels, schedule.T)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    out = out_dir(args)
    reports = ablate(args.manifest, models, schedule, levels, args.noise_kinds.split(",") if args.noise_kinds else None,
                     methods=tuple(args.methods.split(",")), seed=seed, n_steps=cfg.restore.n_steps, out_dir=out,
                     n_thresholds=cfg.eval.n_thresholds, rule=cfg.detection_rule())
    save_ablation_plot(reports, out / "ablation.png")
    write_run_record(out, "ablate", cfg, {"eval": seed}, time.perf_counter() - start, t_levels=levels,
                     report_hashes=[r.content_hash() for r in reports])
    return finish(args, {"out": str(out), "rows": len(reports), "t_levels": levels},
                  f"ablate: {len(reports)} reports over t={levels} -> {out}")


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
    common.add_argument("--seed", type=int)
    common.add_argument("--json", action="store_true", help="print a machine-readable summary")
    common.add_argument("-v", "--verbose", action="store_true")

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--checkpoint")
    model_args.add_argument("--method", choices=("ddpm", "thor"), default="thor")
    model_args.add_argument("--noise", choices=("gaussian", "simplex"))
    model_args.add_argument("--cross-noise", action="store_true",
                            help="allow inference noise different from the training noise")
    model_args.add_argument("--t-start", type=int)
    model_args.add_argument("--steps", help="number of harmonization steps, or an explicit list like 260,175,90")

    p = argparse.ArgumentParser(prog="thor", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic phantom benchmark")
    s.add_argument("--size", help="e.g. 64 or 64x64")
    s.add_argument("--counts", help="anomalous images per class, e.g. small=20,medium=20,large=20")
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-healthy", type=int)
    s.add_argument("--polarity", choices=("hypo", "hyper", "mixed"))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train the noise predictor on healthy images")
    s.add_argument("--manifest", required=True)
    s.add_argument("--noise", choices=("gaussian", "simplex"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--channels", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--time-budget", type=float, help="seconds; stops after the epoch that exceeds it")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("restore", parents=[common, model_args], help="restore images and write per-step maps")
    s.add_argument("--image", nargs="+", help="PNG files to restore")
    s.add_argument("--manifest")
    s.add_argument("--split", default="test_anomalous")
    s.add_argument("--index", type=int, nargs="+")
    s.set_defaults(func=cmd_restore)

    s = sub.add_parser("score", parents=[common, model_args], help="write anomaly score maps for a split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test_anomalous")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", parents=[common, model_args], help="evaluate one method on the anomalous split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--figures", type=int, default=0, help="number of example panels to render")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="noise-level ablation over methods and noise kinds")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", action="append", help="checkpoint path or kind=path; repeat per noise kind")
    s.add_argument("--t-levels", default="0.25,0.35,0.5", help="fractions of T or absolute steps")
    s.add_argument("--methods", default="ddpm,thor")
    s.add_argument("--noise-kinds")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, CompatibilityError, ShapeError, ValueError) as exc:
        print(f"thor {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
