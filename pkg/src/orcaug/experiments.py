"""Training-regime assembly, metrics, PR curves, and the multi-seed harness.

A regime always contains the full real dataset; augmented positives are drawn
from per-method sample pools built once per experiment, and every method's
positives are paired with an equal number of backgrounds produced by that
same method. Generated samples must pass the statistical quality gate before
they count toward the budget.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import extract_clip, load_and_resample
from .augment import composite_masks, time_shift_windows
from .classifier import ClassifierConfig, load_classifier, predict, train_classifier
from .dataset import (
    Annotation,
    ManifestEntry,
    clip_to_tensor,
    dataset_annotations,
    manifest_path,
    read_dataset_meta,
    read_manifest,
    read_spec_array,
    save_tensor,
    tensors_from_dir,
    write_manifest,
)
from .errors import DisjointnessError, ShortfallError, ValidationError
from .models import ddpm as ddpm_mod
from .models import gan as gan_mod
from .models import vae as vae_mod
from .qfilter import fit_filter, filter_samples
from .rng import derive_seed, np_rng
from .spectrogram import SpectrogramTensor

REGIMES = ("I", "II", "III", "IV", "V", "VI", "VII")
REGIME_METHODS = {
    "I": (),
    "II": ("timeshift",),
    "III": ("mask",),
    "IV": ("vae",),
    "V": ("gan",),
    "VI": ("ddpm",),
    "VII": ("timeshift", "mask", "ddpm"),
}
GENERATIVE_METHODS = ("vae", "gan", "ddpm")
RECALL_GRID = np.linspace(0.0, 1.0, 101)

_SAMPLERS = {"vae": vae_mod.sample_vae, "gan": gan_mod.sample_gan,
             "ddpm": ddpm_mod.sample_ddpm}


@dataclass
class ExperimentConfig:
    regime: str
    budget: int
    real_dataset_dir: str
    test_dataset_dir: str
    out_dir: str
    n_seeds: int = 10
    catalogue_dir: str | None = None
    mask_background_dir: str | None = None
    gen_checkpoints: dict = field(default_factory=dict)  # method -> {"pos": ..., "neg": ...}
    percentile_j: float = 95.0
    mask_percentile_i: float = 80.0
    mask_gain_range: tuple = (0.5, 1.0)
    oversample_factor: float = 1.5
    max_sample_rounds: int = 5
    ddpm_sample_steps: int | None = None
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    pools_dir: str | None = None  # default <out_dir>/pools; share across regimes
    master_seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}")
        for method in REGIME_METHODS[self.regime]:
            if method == "timeshift":
                continue
            if method == "mask":
                if not (self.catalogue_dir and self.mask_background_dir):
                    raise ValidationError(
                        f"regime {self.regime} needs catalogue_dir and mask_background_dir")
            elif method not in self.gen_checkpoints:
                raise ValidationError(
                    f"regime {self.regime} needs a {method!r} checkpoint pair")


@dataclass
class EvalReport:
    regime: str
    budget: int
    per_seed: list
    aggregate: dict
    mean_pr_recall: list
    mean_pr_precision: list


# ---------------------------------------------------------------------------
# Regime composition


def plan_regime(regime: str, budget: int, n_real_pos: int) -> dict:
    """Positive-sample counts per provenance for one (regime, budget) setting.

    Backgrounds mirror these counts method-for-method. The hybrid regime
    splits its budget as ceil(budget / 3) per method, matching the published
    1,667 / 6,667 splits (their sums intentionally exceed the nominal budget).
    """
    if regime not in REGIMES:
        raise ValidationError(f"unknown regime {regime!r}")
    plan = {"real": n_real_pos}
    methods = REGIME_METHODS[regime]
    if not methods:
        return plan
    per_method = budget if len(methods) == 1 else math.ceil(budget / 3)
    for method in methods:
        plan[method] = per_method
    return plan


# ---------------------------------------------------------------------------
# Metrics


def evaluate(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """Precision, recall, F1 at a fixed threshold (score >= threshold is positive).

    Degenerate conventions: precision is 0 when nothing is predicted positive,
    F1 is 0 when precision + recall is 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValidationError("scores and labels must be equal-length and non-empty")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def pr_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) at every distinct score threshold, recall ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValidationError("scores and labels must be equal-length and non-empty")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0 or n_pos == labels.size:
        raise ValidationError("PR curve needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    distinct = np.nonzero(np.diff(sorted_scores, append=np.nan))[0]
    recalls = tp[distinct] / n_pos
    precisions = tp[distinct] / (tp[distinct] + fp[distinct])
    points = sorted(zip(recalls.tolist(), precisions.tolist()))
    return [(float(r), float(p)) for r, p in points]


def interpolate_pr(points: list[tuple[float, float]],
                   grid: np.ndarray = RECALL_GRID) -> np.ndarray:
    """Precision linearly interpolated onto a recall grid.

    Where several thresholds share a recall, the best precision represents it;
    grid values outside the observed recall range clamp to the end points.
    """
    best: dict[float, float] = {}
    for recall, precision in points:
        best[recall] = max(best.get(recall, 0.0), precision)
    recalls = np.array(sorted(best))
    precisions = np.array([best[r] for r in recalls])
    return np.interp(grid, recalls, precisions)


def mean_pr_curve(curves: list[list[tuple[float, float]]],
                  grid: np.ndarray = RECALL_GRID) -> np.ndarray:
    if not curves:
        raise ValidationError("no curves to average")
    return np.mean([interpolate_pr(c, grid) for c in curves], axis=0)


# ---------------------------------------------------------------------------
# Sample pools


def _pool_manifest(pool_dir: Path) -> Path:
    return pool_dir / "manifest.jsonl"


def _write_pool(pool_dir: Path, tensors: list[SpectrogramTensor], label: int,
                provenance: str, sources: list[str | None] | None = None) -> None:
    pool_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, tensor in enumerate(tensors):
        rel = f"t_{i:06d}.spec"
        save_tensor(tensor, pool_dir / rel)
        entries.append(ManifestEntry(
            sample_path=rel, label=label, provenance=provenance,
            source_file=sources[i] if sources else None))
    write_manifest(entries, _pool_manifest(pool_dir))


def _pool_size(pool_dir: Path) -> int:
    if not _pool_manifest(pool_dir).exists():
        return 0
    return len(read_manifest(_pool_manifest(pool_dir)).entries)


def _build_timeshift_pos_pool(config: ExperimentConfig, pool_dir: Path) -> None:
    """All distinct shifted windows (the centered one is already in the real set)."""
    meta = read_dataset_meta(config.real_dataset_dir)
    annotations = dataset_annotations(config.real_dataset_dir)
    audio_root = Path(meta["audio_root"])
    duration = meta["clip_duration_s"]
    tensors, sources = [], []
    by_file: dict[str, list[tuple[int, Annotation]]] = {}
    for i, ann in enumerate(annotations):
        by_file.setdefault(ann.file_id, []).append((i, ann))
    for file_id in sorted(by_file):
        audio = load_and_resample(audio_root / file_id)
        for _, ann in by_file[file_id]:
            centered = ann.midpoint_s - duration / 2.0
            for start in time_shift_windows(ann, clip_duration_s=duration):
                if abs(start - centered) < 1e-9:
                    continue
                clip = extract_clip(audio, start, duration)
                tensors.append(clip_to_tensor(clip, provenance="timeshift"))
                sources.append(str((audio_root / file_id).resolve()))
    _write_pool(pool_dir, tensors, label=1, provenance="timeshift", sources=sources)


def _build_timeshift_neg_pool(config: ExperimentConfig, pool_dir: Path, size: int) -> None:
    """Fresh background windows from the training-site recordings."""
    from .dataset import feasible_background_measure, sample_backgrounds

    meta = read_dataset_meta(config.real_dataset_dir)
    annotations = dataset_annotations(config.real_dataset_dir)
    audio_root = Path(meta["audio_root"])
    duration = meta["clip_duration_s"]
    durations = meta["file_durations_s"]
    by_file: dict[str, list[Annotation]] = {fid: [] for fid in durations}
    for ann in annotations:
        by_file.setdefault(ann.file_id, []).append(ann)
    file_ids = sorted(durations)
    measures = np.array([
        feasible_background_measure(durations[fid], by_file.get(fid, []), duration)
        for fid in file_ids])
    if measures.sum() <= 0:
        raise ValidationError("no feasible background regions for time-shift pairing")
    shares = np.floor(measures / measures.sum() * size).astype(int)
    shares[np.argsort(-(measures / measures.sum() * size - shares),
                      kind="stable")[:size - shares.sum()]] += 1
    tensors, sources = [], []
    for fid, n_here in zip(file_ids, shares):
        if n_here == 0:
            continue
        audio = load_and_resample(audio_root / fid)
        starts = sample_backgrounds(fid, durations[fid], by_file.get(fid, []), int(n_here),
                                    duration,
                                    rng_seed=derive_seed(config.master_seed, "ts-neg", fid))
        for start in starts:
            tensors.append(clip_to_tensor(extract_clip(audio, start, duration),
                                          provenance="timeshift"))
            sources.append(str((audio_root / fid).resolve()))
    _write_pool(pool_dir, tensors, label=0, provenance="timeshift", sources=sources)


def _build_mask_pools(config: ExperimentConfig, pos_dir: Path, neg_dir: Path,
                      pos_size: int) -> None:
    catalogue = tensors_from_dir(config.catalogue_dir, provenance="real")
    backgrounds = tensors_from_dir(config.mask_background_dir, provenance="real")
    bg_files = sorted(str(p.resolve()) for p in Path(config.mask_background_dir).iterdir()
                      if p.suffix.lower() in (".spec", ".wav", ".flac"))
    composites = composite_masks(catalogue, backgrounds, pos_size,
                                 percentile_i=config.mask_percentile_i,
                                 rng_seed=derive_seed(config.master_seed, "mask-pool"),
                                 gain_range=config.mask_gain_range)
    _write_pool(pos_dir, composites, label=1, provenance="mask")
    neg_tensors = [SpectrogramTensor(values=t.values, range_tag="unit", provenance="mask")
                   for t in backgrounds]
    _write_pool(neg_dir, neg_tensors, label=0, provenance="mask", sources=bg_files)


def _build_generated_pool(config: ExperimentConfig, method: str, cls: str,
                          pool_dir: Path, size: int) -> None:
    """Sample, gate through the quality filter, and persist the survivors."""
    ckpt = config.gen_checkpoints[method][cls]
    label = 1 if cls == "pos" else 0
    real = _load_manifest_tensors(
        manifest_path(config.real_dataset_dir), label)
    gate = fit_filter([t for t, _ in real], percentile_j=config.percentile_j)
    kept: list[SpectrogramTensor] = []
    per_round = math.ceil(size * config.oversample_factor)
    for round_no in range(config.max_sample_rounds):
        seed = derive_seed(config.master_seed, "gen", method, cls, round_no)
        kwargs = {}
        if method == "ddpm" and config.ddpm_sample_steps:
            kwargs["steps"] = config.ddpm_sample_steps
        samples = _SAMPLERS[method](ckpt, per_round, seed, **kwargs)
        survivors, _ = filter_samples(gate, samples)
        kept.extend(SpectrogramTensor(values=s.values, range_tag="unit", provenance=method)
                    for s in survivors)
        if len(kept) >= size:
            break
    if len(kept) < size:
        raise ShortfallError(
            f"{method} {cls} generator supplied {len(kept)}/{size} post-filter samples "
            f"after {config.max_sample_rounds} rounds", deficit=size - len(kept))
    _write_pool(pool_dir, kept, label=label, provenance=method)


def _ensure_pools(config: ExperimentConfig) -> dict:
    """Build (or reuse) every pool the regime needs; returns method -> dirs."""
    pools_root = Path(config.pools_dir or Path(config.out_dir) / "pools")
    per_method = plan_regime(config.regime, config.budget, 0)
    per_method.pop("real")
    pool_paths = {}
    for method, need in per_method.items():
        pos_dir = pools_root / f"{method}_pos"
        neg_dir = pools_root / f"{method}_neg"
        pool_paths[method] = {"pos": pos_dir, "neg": neg_dir, "need": need}
        target = math.ceil(need * 1.2)
        if method == "timeshift":
            if _pool_size(pos_dir) == 0:
                _build_timeshift_pos_pool(config, pos_dir)
            if _pool_size(neg_dir) < target:
                _build_timeshift_neg_pool(config, neg_dir, target)
        elif method == "mask":
            if _pool_size(pos_dir) < target or _pool_size(neg_dir) == 0:
                _build_mask_pools(config, pos_dir, neg_dir, target)
        else:
            if _pool_size(pos_dir) < need:
                _build_generated_pool(config, method, "pos", pos_dir, need)
            if _pool_size(neg_dir) < need:
                _build_generated_pool(config, method, "neg", neg_dir, need)
    return pool_paths


# ---------------------------------------------------------------------------
# Assembly and evaluation


def _load_manifest_tensors(manifest_file, label: int | None = None):
    manifest_file = Path(manifest_file)
    root = manifest_file.parent
    out = []
    for entry in read_manifest(manifest_file).entries:
        if label is None or entry.label == label:
            out.append((SpectrogramTensor(values=read_spec_array(root / entry.sample_path),
                                          range_tag="unit", provenance=entry.provenance),
                        entry))
    return out


def _draw(count: int, pool_size: int, rng) -> list[int]:
    """Sample pool indices; cycles with replacement only when the pool is short."""
    if pool_size <= 0:
        raise ValidationError("cannot draw from an empty pool")
    if count <= pool_size:
        return sorted(rng.choice(pool_size, size=count, replace=False).tolist())
    full, extra = divmod(count, pool_size)
    picks = list(range(pool_size)) * full
    picks += rng.choice(pool_size, size=extra, replace=False).tolist()
    return sorted(picks)


def assemble_regime(config: ExperimentConfig, seed: int, pool_paths: dict | None = None,
                    ) -> Path:
    """Write one training manifest for (config, seed); returns its path.

    Real entries are always included in full; each augmentation method
    contributes its planned number of positives plus equally many backgrounds
    drawn from the matching method pool.
    """
    if pool_paths is None:
        pool_paths = _ensure_pools(config)
    real_manifest_file = manifest_path(config.real_dataset_dir)
    real_entries = read_manifest(real_manifest_file).entries
    seed_dir = Path(config.out_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    out_entries = []
    real_root = Path(config.real_dataset_dir).resolve()
    for entry in real_entries:
        out_entries.append(ManifestEntry(
            sample_path=os.path.relpath(real_root / entry.sample_path, seed_dir),
            label=entry.label, provenance=entry.provenance,
            source_annotation_id=entry.source_annotation_id,
            source_file=entry.source_file, seed=seed))
    for method, paths in pool_paths.items():
        need = paths["need"]
        for cls, label in (("pos", 1), ("neg", 0)):
            pool_dir = Path(paths[cls]).resolve()
            pool_entries = read_manifest(_pool_manifest(pool_dir)).entries
            rng = np_rng(config.master_seed, "draw", seed, method, cls)
            for i in _draw(need, len(pool_entries), rng):
                entry = pool_entries[i]
                out_entries.append(ManifestEntry(
                    sample_path=os.path.relpath(pool_dir / entry.sample_path, seed_dir),
                    label=label, provenance=entry.provenance,
                    source_file=entry.source_file, seed=seed))
    manifest_file = seed_dir / "train_manifest.jsonl"
    write_manifest(out_entries, manifest_file)
    return manifest_file


def assert_disjoint(train_entries: list[ManifestEntry],
                    test_entries: list[ManifestEntry]) -> None:
    """No source file may contribute to both training and test data."""
    test_sources = {e.source_file for e in test_entries if e.source_file}
    clashes = sorted({e.source_file for e in train_entries
                      if e.source_file and e.source_file in test_sources})
    if clashes:
        raise DisjointnessError(
            f"{len(clashes)} source file(s) shared between train and test, "
            f"e.g. {clashes[0]}")


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population convention


def run_experiment(config: ExperimentConfig) -> EvalReport:
    """Assemble, train, and evaluate across seeds; persist report and plots."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    test_manifest_file = manifest_path(config.test_dataset_dir)
    test_items = _load_manifest_tensors(test_manifest_file)
    test_tensors = [t for t, _ in test_items]
    test_labels = np.array([e.label for _, e in test_items])
    test_entries = [e for _, e in test_items]

    pool_paths = _ensure_pools(config)
    per_seed = []
    curves = []
    for seed in range(config.n_seeds):
        manifest_file = assemble_regime(config, seed, pool_paths)
        train_entries = read_manifest(manifest_file).entries
        assert_disjoint(train_entries, test_entries)
        ckpt = train_classifier(manifest_file, config.classifier,
                                seed=derive_seed(config.master_seed, "clf", seed))
        model, _ = load_classifier(ckpt)
        scores = predict(model, test_tensors)
        precision, recall, f1 = evaluate(scores, test_labels)
        curve = pr_curve(scores, test_labels)
        curves.append(curve)
        per_seed.append({"seed": seed, "precision": precision, "recall": recall,
                         "f1": f1, "pr_curve": [[r, p] for r, p in curve]})

    aggregate = {}
    for key in ("precision", "recall", "f1"):
        mean, std = _aggregate([row[key] for row in per_seed])
        aggregate[f"{key}_mean"] = mean
        aggregate[f"{key}_std"] = std
    mean_precision = mean_pr_curve(curves)
    report = EvalReport(regime=config.regime, budget=config.budget, per_seed=per_seed,
                        aggregate=aggregate, mean_pr_recall=RECALL_GRID.tolist(),
                        mean_pr_precision=mean_precision.tolist())
    _write_report(report, out_dir)
    return report


def _write_report(report: EvalReport, out_dir: Path) -> None:
    payload = {
        "regime": report.regime,
        "budget": report.budget,
        "per_seed": report.per_seed,
        "aggregate": report.aggregate,
        "mean_pr_curve": {"recall": report.mean_pr_recall,
                          "precision": report.mean_pr_precision},
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # plots are a convenience, never a hard failure
        return
    fig, ax = plt.subplots(figsize=(6, 5))
    for row in report.per_seed:
        curve = np.array(row["pr_curve"])
        ax.plot(curve[:, 0], curve[:, 1], color="steelblue", alpha=0.25, linewidth=0.8)
    ax.plot(report.mean_pr_recall, report.mean_pr_precision, color="crimson",
            linewidth=2.0, label="mean")
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"Regime {report.regime} (+{report.budget})")
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(out_dir / "pr_curves.png", dpi=120)
    plt.close(fig)
