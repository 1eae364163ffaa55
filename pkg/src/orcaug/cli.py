"""Command-line interface.

Subcommands mirror the pipeline stages: dataset building, synthetic
benchmark generation, classic augmentation, generative model training and
sampling, quality filtering, classifier training/scoring, and the
multi-seed experiment harness.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import augment, experiments, qfilter, synthbench
from . import dataset as ds
from .audio_io import extract_clip
from .classifier import ClassifierConfig, load_classifier, predict, save_classifier, train_classifier
from .checkpoints import load_checkpoint
from .errors import OrcaugError, ValidationError
from .models import ddpm as ddpm_mod
from .models import gan as gan_mod
from .models import vae as vae_mod
from .rng import np_rng
from .spectrogram import SpectrogramTensor


def _set_config_overrides(config, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if not hasattr(config, key):
            raise ValidationError(f"{type(config).__name__} has no field {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        current = getattr(config, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(config, key, value)
    return config


def _cmd_dataset_build(args):
    annotations = ds.parse_annotations(args.annotations)
    manifest = ds.build_dataset(annotations, args.audio_dir, args.out, args.seed)
    print(f"built {manifest.count(1)} positives and {manifest.count(0)} backgrounds "
          f"under {args.out}")


def _cmd_synth_make_benchmark(args):
    site_a = synthbench.SiteProfile(args.site_a_color, args.site_a_level,
                                    args.site_a_transients)
    site_b = synthbench.SiteProfile(args.site_b_color, args.site_b_level,
                                    args.site_b_transients)
    train, test = synthbench.make_benchmark(site_a, site_b, args.n_train, args.n_test,
                                            args.seed, args.out,
                                            n_catalogue=args.n_catalogue,
                                            n_background_pool=args.n_backgrounds)
    print(f"benchmark at {args.out}: train {len(train.entries)} samples, "
          f"test {len(test.entries)} samples")


def _cmd_augment_time_shift(args):
    meta = ds.read_dataset_meta(args.dataset)
    annotations = ds.dataset_annotations(args.dataset)
    audio_root = Path(meta["audio_root"])
    duration = meta["clip_duration_s"]
    windows = []
    for i, ann in enumerate(annotations):
        centered = ann.midpoint_s - duration / 2.0
        for start in augment.time_shift_windows(ann, clip_duration_s=duration):
            if abs(start - centered) >= 1e-9:
                windows.append((ann.file_id, i, start))
    if not windows:
        raise ValidationError("no shifted windows available")
    rng = np_rng(args.seed, "cli-timeshift")
    if args.budget < len(windows):
        picks = sorted(rng.choice(len(windows), size=args.budget, replace=False).tolist())
    else:
        picks = list(range(len(windows)))
    out = Path(args.out)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    cache = ds._AudioCache()
    for j, pick in enumerate(picks):
        file_id, ann_idx, start = windows[pick]
        clip = extract_clip(cache.get(audio_root / file_id), start, duration)
        tensor = ds.clip_to_tensor(clip, provenance="timeshift")
        rel = f"tensors/ts_{j:06d}.spec"
        ds.save_tensor(tensor, out / rel)
        entries.append(ds.ManifestEntry(
            sample_path=rel, label=1, provenance="timeshift",
            source_annotation_id=f"{file_id}:{ann_idx}",
            source_file=str((audio_root / file_id).resolve()), seed=args.seed))
    ds.write_manifest(entries, out / "manifest.jsonl")
    print(f"wrote {len(entries)} time-shifted tensors to {args.out}")


def _cmd_augment_mask(args):
    catalogue = ds.tensors_from_dir(args.catalogue, provenance="real")
    backgrounds = ds.tensors_from_dir(args.backgrounds, provenance="real")
    composites = augment.composite_masks(catalogue, backgrounds, args.budget,
                                         percentile_i=args.percentile,
                                         rng_seed=args.seed)
    out = Path(args.out)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for j, tensor in enumerate(composites):
        rel = f"tensors/mask_{j:06d}.spec"
        ds.save_tensor(tensor, out / rel)
        entries.append(ds.ManifestEntry(sample_path=rel, label=1, provenance="mask",
                                        seed=args.seed))
    ds.write_manifest(entries, out / "manifest.jsonl")
    print(f"wrote {len(entries)} mask composites to {args.out}")


def _cmd_gen_train(args):
    if args.model == "vae":
        config = vae_mod.VaeConfig(epochs=args.epochs or 150, batch_size=args.batch or 64,
                                   lr=args.lr or 1e-3, label=args.label, seed=args.seed)
        _set_config_overrides(config, args.set)
        ckpt = vae_mod.train_vae(args.dataset, config)
        vae_mod.save_vae(ckpt, args.out)
    elif args.model == "gan":
        config = gan_mod.GanConfig(epochs=args.epochs or 300, batch_size=args.batch or 64,
                                   lr=args.lr or 1e-4, label=args.label, seed=args.seed)
        _set_config_overrides(config, args.set)
        ckpt = gan_mod.train_gan(args.dataset, config)
        gan_mod.save_gan(ckpt, args.out)
    else:
        config = ddpm_mod.DdpmConfig(epochs=args.epochs or 150, batch_size=args.batch or 32,
                                     lr=args.lr or 1e-4, ema_decay=args.ema,
                                     label=args.label, seed=args.seed)
        _set_config_overrides(config, args.set)
        ckpt = ddpm_mod.train_ddpm(args.dataset, config)
        ddpm_mod.save_ddpm(ckpt, args.out)
    print(f"saved {args.model} checkpoint to {args.out}")


def _cmd_gen_sample(args):
    kind = load_checkpoint(args.ckpt)["kind"]
    if kind == "vae":
        tensors = vae_mod.sample_vae(args.ckpt, args.n, args.seed)
    elif kind == "gan":
        tensors = gan_mod.sample_gan(args.ckpt, args.n, args.seed)
    elif kind == "ddpm":
        tensors = ddpm_mod.sample_ddpm(args.ckpt, args.n, args.seed, steps=args.steps)
    else:
        raise ValidationError(f"{args.ckpt} is not a generator checkpoint ({kind})")
    out = Path(args.out)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for j, tensor in enumerate(tensors):
        rel = f"tensors/{kind}_{j:06d}.spec"
        ds.save_tensor(tensor, out / rel)
        entries.append(ds.ManifestEntry(sample_path=rel, label=args.label,
                                        provenance=kind, seed=args.seed))
    ds.write_manifest(entries, out / "manifest.jsonl")
    print(f"sampled {len(tensors)} tensors from {args.ckpt} into {args.out}")


def _cmd_filter(args):
    real = ds.tensors_from_dir(args.real, provenance="real")
    generated_dir = Path(args.generated)
    names, generated = [], []
    for child in sorted(generated_dir.rglob("*.spec")):
        generated.append(ds.load_tensor(child))
        names.append(child.name)
    if not generated:
        raise ValidationError(f"no .spec tensors under {args.generated}")
    model = qfilter.fit_filter(real, percentile_j=args.percentile)
    kept, rejected = qfilter.filter_samples(model, generated)
    out = Path(args.out)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    kept_set = {id(t) for t in kept}
    entries = []
    j = 0
    for name, tensor in zip(names, generated):
        if id(tensor) not in kept_set:
            continue
        rel = f"tensors/{name}"
        ds.save_tensor(tensor, out / rel)
        entries.append(ds.ManifestEntry(sample_path=rel, label=1,
                                        provenance=tensor.provenance))
        j += 1
    ds.write_manifest(entries, out / "manifest.jsonl")
    qfilter.save_filter(model, out / "filter.ckpt")
    summary = {"kept": len(kept), "rejected": rejected, "tau": model.tau,
               "percentile_j": args.percentile, "k": model.k}
    with open(out / "filter_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"kept {len(kept)}/{len(generated)} samples (tau={model.tau:.3f}, "
          f"k={model.k})")


def _cmd_clf_train(args):
    config = ClassifierConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                              width=args.width)
    ckpt = train_classifier(args.dataset, config, seed=args.seed)
    save_classifier(ckpt, args.out)
    acc = ckpt["extra"]["history"]["accuracy"][-1]
    print(f"saved classifier to {args.out} (final train accuracy {acc:.3f})")


def _cmd_clf_predict(args):
    model, _ = load_classifier(args.ckpt)
    manifest_file = ds.manifest_path(args.dataset) if Path(args.dataset).is_dir() \
        else Path(args.dataset)
    root = manifest_file.parent
    entries = ds.read_manifest(manifest_file).entries
    tensors = [SpectrogramTensor(values=ds.read_spec_array(root / e.sample_path),
                                 range_tag="unit", provenance=e.provenance)
               for e in entries]
    scores = predict(model, tensors)
    with open(args.out, "w") as fh:
        for entry, score in zip(entries, scores):
            fh.write(json.dumps({"sample_path": entry.sample_path, "label": entry.label,
                                 "score": float(score)}) + "\n")
    print(f"scored {len(entries)} samples into {args.out}")


def _cmd_experiment_run(args):
    gen_checkpoints = {}
    for method in experiments.GENERATIVE_METHODS:
        pos = getattr(args, f"{method}_ckpt")
        neg = getattr(args, f"{method}_bg_ckpt")
        if pos and neg:
            gen_checkpoints[method] = {"pos": pos, "neg": neg}
        elif pos or neg:
            raise ValidationError(f"--{method}-ckpt and --{method}-bg-ckpt must be "
                                  "given together")
    clf = ClassifierConfig(epochs=args.clf_epochs, batch_size=args.clf_batch,
                           lr=args.clf_lr, width=args.clf_width)
    config = experiments.ExperimentConfig(
        regime=args.regime, budget=args.budget, n_seeds=args.seeds,
        real_dataset_dir=args.train_data, test_dataset_dir=args.test_data,
        out_dir=args.out, catalogue_dir=args.catalogue,
        mask_background_dir=args.mask_backgrounds, gen_checkpoints=gen_checkpoints,
        percentile_j=args.percentile_j, mask_percentile_i=args.mask_percentile,
        ddpm_sample_steps=args.ddpm_steps, classifier=clf, pools_dir=args.pools_dir,
        master_seed=args.seed)
    report = experiments.run_experiment(config)
    agg = report.aggregate
    print(f"regime {report.regime} (+{report.budget}): "
          f"P {agg['precision_mean']:.3f}±{agg['precision_std']:.3f}  "
          f"R {agg['recall_mean']:.3f}±{agg['recall_std']:.3f}  "
          f"F1 {agg['f1_mean']:.3f}±{agg['f1_std']:.3f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orcaug",
                                     description="Spectrogram augmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="dataset construction")
    dataset_sub = p_dataset.add_subparsers(dest="subcommand", required=True)
    p = dataset_sub.add_parser("build", help="extract clips and build a dataset")
    p.add_argument("--annotations", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_dataset_build)

    p_synth = sub.add_parser("synth", help="synthetic benchmark")
    synth_sub = p_synth.add_subparsers(dest="subcommand", required=True)
    p = synth_sub.add_parser("make-benchmark", help="render a two-site benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-catalogue", type=int, default=64)
    p.add_argument("--n-backgrounds", type=int, default=192)
    p.add_argument("--site-a-color", default="pink", choices=synthbench.NOISE_COLORS)
    p.add_argument("--site-a-level", type=float, default=0.0)
    p.add_argument("--site-a-transients", type=float, default=0.5)
    p.add_argument("--site-b-color", default="brown", choices=synthbench.NOISE_COLORS)
    p.add_argument("--site-b-level", type=float, default=3.0)
    p.add_argument("--site-b-transients", type=float, default=6.0)
    p.set_defaults(func=_cmd_synth_make_benchmark)

    p_augment = sub.add_parser("augment", help="classic augmentation")
    augment_sub = p_augment.add_subparsers(dest="subcommand", required=True)
    p = augment_sub.add_parser("time-shift", help="re-extract shifted windows")
    p.add_argument("--dataset", required=True, help="dataset dir built by `dataset build`")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment_time_shift)
    p = augment_sub.add_parser("mask", help="composite vocalization masks")
    p.add_argument("--catalogue", required=True)
    p.add_argument("--backgrounds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--percentile", type=float, default=80.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment_mask)

    p_gen = sub.add_parser("gen", help="generative models")
    gen_sub = p_gen.add_subparsers(dest="subcommand", required=True)
    p = gen_sub.add_parser("train", help="train a generative model")
    p.add_argument("--model", required=True, choices=("vae", "gan", "ddpm"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ema", type=float, default=0.9999)
    p.add_argument("--label", type=int, default=1, choices=(0, 1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field, e.g. --set channels=[16,32]")
    p.set_defaults(func=_cmd_gen_train)
    p = gen_sub.add_parser("sample", help="sample tensors from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, help="DDPM sampling steps (default: trained T)")
    p.add_argument("--label", type=int, default=1, choices=(0, 1))
    p.set_defaults(func=_cmd_gen_sample)

    p = sub.add_parser("filter", help="statistical quality gate")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--percentile", type=float, default=95.0)
    p.set_defaults(func=_cmd_filter)

    p_clf = sub.add_parser("clf", help="detector training and scoring")
    clf_sub = p_clf.add_subparsers(dest="subcommand", required=True)
    p = clf_sub.add_parser("train")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=_cmd_clf_train)
    p = clf_sub.add_parser("predict")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_clf_predict)

    p_exp = sub.add_parser("experiment", help="multi-seed training regimes")
    exp_sub = p_exp.add_subparsers(dest="subcommand", required=True)
    p = exp_sub.add_parser("run")
    p.add_argument("--regime", required=True, choices=experiments.REGIMES)
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--mask-backgrounds")
    for method in experiments.GENERATIVE_METHODS:
        p.add_argument(f"--{method}-ckpt")
        p.add_argument(f"--{method}-bg-ckpt")
    p.add_argument("--percentile-j", type=float, default=95.0)
    p.add_argument("--mask-percentile", type=float, default=80.0)
    p.add_argument("--ddpm-steps", type=int)
    p.add_argument("--clf-epochs", type=int, default=20)
    p.add_argument("--clf-batch", type=int, default=128)
    p.add_argument("--clf-lr", type=float, default=1e-3)
    p.add_argument("--clf-width", type=int, default=64)
    p.add_argument("--pools-dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_experiment_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except OrcaugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
