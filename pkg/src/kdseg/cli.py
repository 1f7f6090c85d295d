"""Command-line pipeline: synth, pseudolabel, train, predict, evaluate, compare.

Every command is a pure function of (config, input files, seed): outputs land
under --output, inputs are never rewritten (the one documented exception is
pseudolabel, whose job is to add labels_pseudo/ beside the dataset images).
Exit codes: 0 success, 1 validation/config error, 2 runtime/data error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from .config import (
    load_config,
    make_loss_config,
    make_synth_config,
    make_train_config,
    make_unet_spec,
)
from .data import DatasetManifest, load_patch, save_patch, ImagePatch, save_prob_map
from .distill import CorruptingTeacher, FileTeacher, generate_pseudo_labels
from .errors import ConfigError
from .metrics import (
    METRIC_NAMES,
    evaluate_set,
    find_prediction,
    render_overlay,
    write_aggregates_json,
    write_records_csv,
)
from .model import build_student, load_checkpoint, predict_patch
from .stats import compare_all_pairs
from .synth import generate_dataset
from .train import fit
from .data import load_label_as_binary, load_prob_map


def _output_dir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_root(cfg: dict, args) -> Path:
    if cfg["data_root"] is not None:
        return Path(cfg["data_root"])
    return Path(args.output) / "data"


def _manifest_path(cfg: dict, root: Path) -> Path:
    if cfg["manifest"] is not None:
        return Path(cfg["manifest"])
    return root / "manifest.json"


def _load_manifest(cfg: dict, root: Path) -> tuple[DatasetManifest, Path]:
    path = _manifest_path(cfg, root)
    return DatasetManifest.load(path), path


def _make_teacher(cfg: dict, root: Path):
    t = cfg["teacher"]
    if t["kind"] == "corruptor":
        truth_dir = Path(t["directory"]) if t["directory"] else root / "labels"
        return CorruptingTeacher(
            truth_dir, drop_fraction=t["drop_fraction"], seed=cfg["seed"]
        )
    if t["kind"] == "files":
        if not t["directory"]:
            raise ConfigError("teacher.directory is required for a file-based teacher")
        return FileTeacher(t["directory"], mode=t["mode"], threshold=t["threshold"])
    raise ConfigError(f"unknown teacher kind {t['kind']!r}")


def cmd_synth(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    manifest = generate_dataset(root, make_synth_config(cfg))
    sizes = manifest.split_sizes()
    print(f"wrote {sum(sizes.values())} patches under {root}")
    for name in ("train", "val", "test"):
        print(f"  {name}: {sizes[name]}")
    return 0


def cmd_pseudolabel(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    manifest, path = _load_manifest(cfg, root)
    teacher = _make_teacher(cfg, root)
    updated = generate_pseudo_labels(teacher, manifest)
    updated.save(path)
    n = sum(1 for r in updated.records if r.label_kind == "pseudo_label")
    print(f"pseudo-labeled {n} records via {teacher.kind} teacher")
    for name in ("train", "val", "test"):
        split = updated.split(name)
        pseudo = sum(1 for r in split if r.label_kind == "pseudo_label")
        print(f"  {name}: {pseudo}/{len(split)} pseudo")
    return 0


def cmd_train(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    out = _output_dir(args)
    manifest, _ = _load_manifest(cfg, root)
    model = build_student(make_unet_spec(cfg), seed=cfg["seed"])
    train_cfg = make_train_config(cfg, checkpoint_dir=out / "checkpoints")
    report = fit(model, manifest, train_cfg)
    report.save(out / "train_report.json")
    print(f"trained {report.optimizer_steps} steps over {len(report.train_loss)} epochs")
    if report.best_epoch is not None:
        print(f"best validation Dice {report.best_val_dice:.4f} at epoch {report.best_epoch}")
    print(f"report: {out / 'train_report.json'}")
    return 0


def cmd_predict(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    out = _output_dir(args)
    manifest, _ = _load_manifest(cfg, root)
    ckpt = cfg["predict"]["checkpoint"] or out / "checkpoints" / "best.pt"
    model, _, _ = load_checkpoint(ckpt)
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    split = cfg["predict"]["split"]
    records = manifest.split(split)
    for record in records:
        patch = load_patch(manifest.image_path(record))
        probs = predict_patch(model, patch)
        save_prob_map(probs, pred_dir / f"{record.image_id}.png")
    print(f"wrote {len(records)} probability maps to {pred_dir}")
    return 0


def cmd_evaluate(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    out = _output_dir(args)
    manifest, _ = _load_manifest(cfg, root)
    e = cfg["evaluate"]
    pred_dir = Path(e["predictions"]) if e["predictions"] else out / "predictions"
    records, aggregates = evaluate_set(
        pred_dir, manifest, threshold=e["threshold"], split=e["split"]
    )
    write_records_csv(records, out / "metrics.csv")
    write_aggregates_json(aggregates, out / "metrics_summary.json")
    if e["overlays"]:
        overlay_dir = out / "overlays"
        overlay_dir.mkdir(parents=True, exist_ok=True)
        for record in manifest.split(e["split"]):
            patch = load_patch(manifest.image_path(record))
            truth = load_label_as_binary(manifest.label_path(record))
            probs = load_prob_map(find_prediction(pred_dir, record.image_id))
            hard = (probs >= e["threshold"]).astype("uint8")
            overlay = render_overlay(patch.pixels, hard, truth)
            save_patch(
                ImagePatch(pixels=overlay, id=record.image_id),
                overlay_dir / f"{record.image_id}.png",
            )
    print(f"evaluated {len(records)} images from split {e['split']!r}")
    for name in METRIC_NAMES:
        agg = aggregates[name]
        print(f"  {name}: {agg['mean']:.4f} (std {agg['std']:.4f})")
    return 0


def cmd_compare(args, cfg: dict) -> int:
    root = _data_root(cfg, args)
    out = _output_dir(args)
    manifest, _ = _load_manifest(cfg, root)
    e = cfg["evaluate"]
    methods: dict[str, Path] = {}
    for item in args.methods:
        if "=" not in item:
            raise ConfigError(f"method spec {item!r} is not NAME=DIR")
        name, directory = item.split("=", 1)
        methods[name] = Path(directory)
    if len(methods) < 2:
        raise ConfigError(f"need at least 2 methods to compare, got {len(methods)}")

    per_method_records = {}
    for name, directory in methods.items():
        records, _ = evaluate_set(
            directory, manifest, threshold=e["threshold"], split=e["split"]
        )
        per_method_records[name] = records

    comparison = {}
    for metric in METRIC_NAMES:
        values = {
            name: [getattr(r, metric) for r in records]
            for name, records in per_method_records.items()
        }
        results = compare_all_pairs(values)
        comparison[metric] = {pair: asdict(res) for pair, res in results.items()}
        names = sorted(values)
        ids = [r.image_id for r in per_method_records[names[0]]]
        with open(out / f"compare_{metric}.csv", "w", newline="") as fh:
            fh.write(",".join(["image_id", *names]) + "\n")
            for i, image_id in enumerate(ids):
                row = [image_id] + [f"{values[name][i]:.10g}" for name in names]
                fh.write(",".join(row) + "\n")

    import json

    (out / "comparison.json").write_text(
        json.dumps(comparison, indent=2, sort_keys=True) + "\n"
    )
    for metric in METRIC_NAMES:
        for pair, res in sorted(comparison[metric].items()):
            print(f"{metric} {pair}: U={res['u']:.1f} p={res['p']:.4g} {res['label']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value (repeatable), e.g. --set train.epochs=5",
    )
    common.add_argument("--output", default="runs", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override config seed")

    parser = argparse.ArgumentParser(
        prog="kdseg", description="teacher-student nuclei segmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("pseudolabel", parents=[common], help="write teacher pseudo-labels")
    sub.add_parser("train", parents=[common], help="train the student")
    sub.add_parser("predict", parents=[common], help="write probability maps")
    sub.add_parser("evaluate", parents=[common], help="score predictions against truth")
    compare = sub.add_parser(
        "compare", parents=[common], help="Mann-Whitney U tests across methods"
    )
    compare.add_argument(
        "methods", nargs="+", metavar="NAME=DIR", help="prediction directories to compare"
    )
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "pseudolabel": cmd_pseudolabel,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, tuple(args.overrides), seed=args.seed)
        return _COMMANDS[args.command](args, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
