"""Teacher adapters and pseudo-label generation.

A teacher is anything that can hand back an instance map per image id. Two
adapters are provided: a file-based one reading precomputed maps from a
directory (the production path: run any instance segmenter offline, point
this at its output), and a synthetic corruptor that drops a seeded fraction
of ground-truth instances, giving pseudo-labels with known false negatives
and zero false positives for controlled experiments.
"""

from __future__ import annotations

import zlib
from dataclasses import replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import (
    BinaryMask,
    DatasetManifest,
    InstanceMap,
    load_mask,
    load_prob_map,
    save_mask,
)
from .errors import ConfigError, DistillationError

PSEUDO_DIR = "labels_pseudo"

_LABEL_EXTENSIONS = (".png", ".tif", ".tiff")


class TeacherAdapter(Protocol):
    kind: str

    def instance_map(self, image_id: str) -> InstanceMap: ...


def _find_file(directory: Path, image_id: str) -> Path | None:
    for ext in _LABEL_EXTENSIONS:
        candidate = directory / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    return None


class FileTeacher:
    """Reads precomputed teacher outputs from a directory, by image id.

    mode "instance" expects instance maps; mode "probability" expects
    probability maps, thresholded at ingestion into a binary map (wrapped as
    a single-instance map so downstream binarization is uniform).
    """

    kind = "file_based"

    def __init__(self, directory: str | Path, mode: str = "instance", threshold: float = 0.5):
        if mode not in ("instance", "probability"):
            raise ConfigError(f"bad teacher mode {mode!r}")
        self.directory = Path(directory)
        self.mode = mode
        self.threshold = threshold

    def instance_map(self, image_id: str) -> InstanceMap:
        path = _find_file(self.directory, image_id)
        if path is None:
            raise DistillationError(
                f"teacher output missing for image id {image_id!r} in {self.directory}"
            )
        if self.mode == "probability":
            probs = load_prob_map(path)
            return InstanceMap(
                pixels=(probs >= self.threshold).astype(np.int32), id=image_id
            )
        mask = load_mask(path, kind="instance")
        return mask


def corrupt_instances(truth: InstanceMap, p: float, seed: int) -> InstanceMap:
    """Zero out a uniformly chosen round(p*K) of the K instances, seeded.

    Surviving instances keep their exact pixel sets and labels. Uses
    floor(p*K + 0.5) so halves round up regardless of parity.
    """
    if not 0 <= p <= 1:
        raise ConfigError(f"drop fraction must be in [0, 1], got {p}")
    labels = truth.labels()
    k = int(np.floor(p * len(labels) + 0.5))
    rng = np.random.default_rng(seed)
    dropped = rng.choice(labels, size=k, replace=False) if k else np.empty(0, dtype=int)
    pixels = truth.pixels.copy()
    pixels[np.isin(pixels, dropped)] = 0
    return InstanceMap(pixels=pixels, id=truth.id)


class CorruptingTeacher:
    """Synthetic teacher: ground truth with a seeded fraction of instances dropped.

    Every emitted pseudo-label is a subset of the truth (false negatives
    only), which is exactly the bias the asymmetric loss is meant to absorb.
    The per-image seed mixes the configured seed with a CRC of the id so
    outputs are stable regardless of processing order.
    """

    kind = "synthetic_corruptor"

    def __init__(self, truth_dir: str | Path, drop_fraction: float, seed: int):
        if not 0 <= drop_fraction <= 1:
            raise ConfigError(f"drop_fraction must be in [0, 1], got {drop_fraction}")
        self.truth_dir = Path(truth_dir)
        self.drop_fraction = drop_fraction
        self.seed = seed

    def _seed_for(self, image_id: str) -> int:
        return (self.seed * 1_000_003 + zlib.crc32(image_id.encode())) % 2**32

    def instance_map(self, image_id: str) -> InstanceMap:
        path = _find_file(self.truth_dir, image_id)
        if path is None:
            raise DistillationError(
                f"no ground-truth instance map for image id {image_id!r} in {self.truth_dir}"
            )
        truth = load_mask(path, kind="instance")
        return corrupt_instances(truth, self.drop_fraction, self._seed_for(image_id))


def generate_pseudo_labels(
    teacher: TeacherAdapter,
    manifest: DatasetManifest,
    splits: tuple[str, ...] = ("train", "val"),
) -> DatasetManifest:
    """Write binary pseudo-labels for unlabeled train/val records.

    Any nonzero teacher instance pixel becomes foreground. Masks land under
    <root>/labels_pseudo/ with the source image basename; records already
    carrying ground truth are left alone. Re-running with the same teacher
    overwrites byte-identically.
    """
    out_dir = Path(manifest.root) / PSEUDO_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    updated = []
    for record in manifest.records:
        if record.split not in splits or record.label_kind == "ground_truth":
            updated.append(record)
            continue
        instances = teacher.instance_map(record.image_id)
        pseudo = BinaryMask(
            pixels=(instances.pixels != 0).astype(np.uint8), id=record.image_id
        )
        basename = Path(record.image_path).name
        save_mask(pseudo, out_dir / basename)
        updated.append(
            replace(
                record,
                label_path=f"{PSEUDO_DIR}/{basename}",
                label_kind="pseudo_label",
            )
        )
    return DatasetManifest(root=manifest.root, records=updated)
