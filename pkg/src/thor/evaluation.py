"""Segmentation and detection metrics and the experiment harnesses."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.metrics import roc_auc_score

from thor.anomaly_maps import PerceptualMetric, anomaly_map
from thor.data import SIZE_CLASSES, load_split, size_class_of
from thor.denoiser import DenoiserModel
from thor.errors import ConfigError, ShapeError
from thor.geometry import box_area, box_intersection, component_boxes, label8
from thor.noise import NoiseSpec
from thor.restoration import HarmonizationPlan, image_seeds, restore_plain, restore_thor
from thor.schedules import NoiseSchedule

log = logging.getLogger(__name__)

METHODS = ("ddpm", "thor")


def dice(pred, gt) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    denom = int(pred.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / denom


def _mean_dice_at(maps: np.ndarray, gts: np.ndarray, thr: float) -> float:
    pred = maps > thr
    inter = np.logical_and(pred, gts).sum(axis=(1, 2))
    denom = pred.sum(axis=(1, 2)) + gts.sum(axis=(1, 2))
    d = np.where(denom > 0, 2.0 * inter / np.maximum(denom, 1), 1.0)
    return float(d.mean())


def sweep_thresholds(pooled: np.ndarray, n_thresholds: int) -> np.ndarray:
    """Quantiles of the pooled scores, or every distinct value when that is fewer."""
    distinct = np.unique(pooled)
    if n_thresholds >= len(distinct):
        return distinct
    return np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_thresholds)))


def max_dice(score_maps, gt_masks, n_thresholds: int = 256) -> tuple[float, float]:
    """Best dataset-level mean Dice over a threshold sweep (prediction = score > threshold)."""
    maps = np.asarray(score_maps, dtype=np.float64)
    gts = np.asarray(gt_masks, dtype=bool)
    if maps.size == 0 or len(maps) == 0:
        raise ValueError("max_dice needs at least one map")
    if maps.shape != gts.shape:
        raise ShapeError(f"shape mismatch: {maps.shape} vs {gts.shape}")
    if maps.ndim == 2:
        maps, gts = maps[None], gts[None]
    best, best_thr = -1.0, 0.0
    for thr in sweep_thresholds(maps.ravel(), n_thresholds):
        d = _mean_dice_at(maps, gts, thr)
        if d > best:
            best, best_thr = d, float(thr)
    return best, best_thr


def max_dice_per_image(score_maps, gt_masks, n_thresholds: int = 256) -> float:
    """Mean over images of each image's own best Dice."""
    return float(np.mean([max_dice(m, g, n_thresholds)[0] for m, g in zip(score_maps, gt_masks)]))


def stratify(gt_mask) -> str:
    gt_mask = np.asarray(gt_mask, dtype=bool)
    count = int(gt_mask.sum())
    if count == 0:
        raise ValueError("empty mask has no size class")
    return size_class_of(count, gt_mask.shape)


@dataclass(frozen=True)
class DetectionRule:
    min_component_area: int = 4
    overlap_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.overlap_fraction <= 1.0:
            raise ConfigError("overlap_fraction must lie in (0, 1]")
        if self.min_component_area < 0:
            raise ConfigError("min_component_area must be non-negative")


def detect_components(score_map, threshold: float, rule: DetectionRule | None = None) -> list[list[int]]:
    """Boxes of 8-connected supra-threshold components, heaviest first."""
    rule = rule or DetectionRule()
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    score_map = np.asarray(score_map, dtype=np.float64)
    labels, n = label8(score_map > threshold)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    mass = np.bincount(labels.ravel(), weights=score_map.ravel(), minlength=n + 1)[1:]
    boxes = component_boxes(labels, n)
    keep = [i for i in np.argsort(-mass, kind="stable") if areas[i] >= rule.min_component_area]
    return [boxes[i] for i in keep]


def match_boxes(pred_boxes, gt_boxes, rule: DetectionRule | None = None) -> int:
    """Greedy one-to-one matching by intersection over GT area; returns the hit count."""
    rule = rule or DetectionRule()
    pairs = []
    for gi, g in enumerate(gt_boxes):
        ga = box_area(g)
        for pi, p in enumerate(pred_boxes):
            frac = box_intersection(p, g) / ga
            if frac >= rule.overlap_fraction:
                pairs.append((frac, gi, pi))
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_g, used_p = set(), set()
    for _, gi, pi in pairs:
        if gi not in used_g and pi not in used_p:
            used_g.add(gi)
            used_p.add(pi)
    return len(used_g)


def _prf(hits: int, n_gt: int, n_pred: int) -> tuple[float, float, float]:
    recall = hits / n_gt if n_gt else 0.0
    precision = hits / n_pred if n_pred else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return recall, precision, f1


def recall_f1(pred_boxes, gt_boxes, rule: DetectionRule | None = None) -> tuple[float, float, float]:
    """``(recall, precision, f1)`` for one set of boxes."""
    return _prf(match_boxes(pred_boxes, gt_boxes, rule), len(gt_boxes), len(pred_boxes))


def pixel_auroc(score_maps, gt_masks) -> float | None:
    y = np.asarray(gt_masks, dtype=bool).ravel()
    if y.all() or not y.any():
        return None
    return float(roc_auc_score(y, np.asarray(score_maps, dtype=np.float64).ravel()))


@dataclass
class EvalReport:
    method: str
    noise: str
    t_start: int
    dice_avg: float
    dice_small: float | None
    dice_medium: float | None
    dice_large: float | None
    threshold: float
    recall: float
    precision: float
    f1: float
    healthy_mae: float
    n_images: int
    counts: dict = field(default_factory=dict)
    harmonization_steps: list = field(default_factory=list)
    seed: int = 0
    dice_per_image: float | None = None
    pixel_auroc_aux: float | None = None
    runtime_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def content_hash(self) -> str:
        """Hash of everything except wall time."""
        d = self.to_dict()
        d.pop("runtime_seconds")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def csv_rows(self) -> list[dict]:
        rows = []
        for cls in ("average",) + SIZE_CLASSES:
            key = "dice_avg" if cls == "average" else f"dice_{cls}"
            rows.append({"method": self.method, "noise": self.noise, "t_start": self.t_start,
                         "size_class": cls, "max_dice": getattr(self, key),
                         "n_images": self.n_images if cls == "average" else self.counts.get(cls, 0),
                         "recall": self.recall, "precision": self.precision, "f1": self.f1})
        return rows


def noise_spec_for(model: DenoiserModel) -> NoiseSpec:
    return NoiseSpec.from_dict({**model.noise, "seed": 0})


@dataclass
class Scored:
    inputs: np.ndarray
    restored: np.ndarray
    scores: np.ndarray
    masks: np.ndarray
    records: list
    step_maps: list = field(default_factory=list)


def score_dataset(manifest, model: DenoiserModel, method: str, schedule: NoiseSchedule,
                  plan: HarmonizationPlan, seed: int = 0, perceptual: PerceptualMetric | None = None,
                  batch_size: int = 64, split: str = "test_anomalous", noise: NoiseSpec | None = None) -> Scored:
    """Restore and score every image of a split, in lockstep batches.

    ``noise`` overrides the checkpoint's training noise (cross-noise inference).
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    data = load_split(manifest, split)
    if len(data.images) == 0:
        raise ValueError(f"split {split!r} is empty")
    strict = noise is None
    noise = noise_spec_for(model) if noise is None else noise
    seeds = image_seeds(seed, len(data.images))
    restored, scores, steps = [], [], []
    for b in range(0, len(data.images), batch_size):
        x = data.images[b : b + batch_size]
        s = seeds[b : b + batch_size]
        if method == "ddpm":
            rec = restore_plain(model, x, plan.t_start, schedule, noise, plan.stochastic_reverse, seed=s,
                                strict_noise=strict)
            restored.append(rec)
            scores.append(anomaly_map(x, rec, perceptual))
        else:
            trace = restore_thor(model, x, plan, schedule, noise, perceptual, seed=s, strict_noise=strict)
            restored.append(trace.final)
            scores.append(trace.score())
            steps.append(trace.per_step_maps)
    masks = data.masks if data.masks is not None else np.zeros(data.images.shape, dtype=bool)
    return Scored(data.images, np.concatenate(restored), np.concatenate(scores), masks, data.records, steps)


def run_experiment(manifest, model: DenoiserModel, method: str, schedule: NoiseSchedule,
                   plan: HarmonizationPlan | None = None, t_start: int | None = None, seed: int = 0,
                   n_thresholds: int = 256, rule: DetectionRule | None = None,
                   perceptual: PerceptualMetric | None = None, out_dir: str | Path | None = None,
                   per_image: bool = False, noise: NoiseSpec | None = None) -> EvalReport:
    """Restore the anomalous test split, score it and compute every metric."""
    start = time.perf_counter()
    rule = rule or DetectionRule()
    if plan is None:
        if t_start is None:
            raise ConfigError("need a plan or a t_start")
        plan = HarmonizationPlan.default(t_start)
    if method == "ddpm":
        plan = HarmonizationPlan(plan.t_start, (), plan.morph, plan.stochastic_reverse)
    sc = score_dataset(manifest, model, method, schedule, plan, seed, perceptual, noise=noise)

    best, thr = max_dice(sc.scores, sc.masks, n_thresholds)
    classes = [stratify(m) for m in sc.masks]
    per_class, counts = {}, {}
    for cls in SIZE_CLASSES:
        idx = [i for i, c in enumerate(classes) if c == cls]
        counts[cls] = len(idx)
        per_class[cls] = max_dice(sc.scores[idx], sc.masks[idx], n_thresholds)[0] if idx else None

    hits = n_gt = n_pred = 0
    for score, rec in zip(sc.scores, sc.records):
        pred = detect_components(score, thr, rule)
        gt = rec.get("boxes", [])
        hits += match_boxes(pred, gt, rule)
        n_gt += len(gt)
        n_pred += len(pred)
    recall, precision, f1 = _prf(hits, n_gt, n_pred)
    healthy = ~sc.masks
    mae = float(np.abs(sc.restored - sc.inputs)[healthy].mean())

    report = EvalReport(
        method=method, noise=noise.kind if noise is not None else model.noise["kind"], t_start=plan.t_start, dice_avg=best,
        dice_small=per_class["small"], dice_medium=per_class["medium"], dice_large=per_class["large"],
        threshold=thr, recall=recall, precision=precision, f1=f1, healthy_mae=mae,
        n_images=len(sc.scores), counts=counts, harmonization_steps=list(plan.harmonization_steps), seed=seed,
        dice_per_image=max_dice_per_image(sc.scores, sc.masks, n_thresholds) if per_image else None,
        pixel_auroc_aux=pixel_auroc(sc.scores, sc.masks),
    )
    report.runtime_seconds = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: EvalReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{report.method}_{report.noise}_t{report.t_start}"
    d = report.to_dict()
    d["report_hash"] = report.content_hash()
    (out / f"{stem}.json").write_text(json.dumps(d, indent=2, sort_keys=True))
    write_csv(out / f"{stem}.csv", report.csv_rows())
    return out / f"{stem}.json"


def write_csv(path: str | Path, rows: Sequence[Mapping]) -> None:
    rows = list(rows)
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


PLOT_COLUMNS = ("t_level", "method", "noise", "dice_avg", "dice_small", "dice_medium", "dice_large")


def ablate(manifest, models: Mapping[str, DenoiserModel], schedule: NoiseSchedule, t_levels: Sequence[int],
           noise_kinds: Sequence[str] | None = None, methods: Sequence[str] = METHODS, seed: int = 0,
           n_steps: int = 3, out_dir: str | Path | None = None, **kw) -> list[EvalReport]:
    """Evaluate every (method, noise kind, t_start) combination."""
    if len(t_levels) < 2:
        raise ConfigError("an ablation needs at least two noise levels")
    noise_kinds = list(noise_kinds or models)
    missing = [k for k in noise_kinds if k not in models]
    if missing:
        raise ConfigError(f"no model for noise kinds {missing}")
    reports = []
    for kind in noise_kinds:
        for t in t_levels:
            for method in methods:
                log.info("ablate %s %s t=%d", method, kind, t)
                plan = HarmonizationPlan.default(int(t), n_steps)
                reports.append(run_experiment(manifest, models[kind], method, schedule, plan, seed=seed, **kw))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "ablation.csv", [row for r in reports for row in r.csv_rows()])
        write_csv(out / "plot_data.csv", plot_rows(reports))
    return reports


def plot_rows(reports: Sequence[EvalReport]) -> list[dict]:
    return [{"t_level": r.t_start, "method": r.method, "noise": r.noise, "dice_avg": r.dice_avg,
             "dice_small": r.dice_small, "dice_medium": r.dice_medium, "dice_large": r.dice_large}
            for r in reports]
