"""Dataset manifests, image/mask I/O, and split construction.

On-disk layout: ``root/images/*.png|tif`` and ``root/labels/*.png|tif``
matched by basename. Supported rasters are PNG and TIFF, 8- or 16-bit.
Pixel intensities are rescaled to [0, 1] on load by the format's max value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, ManifestError

RASTER_EXTENSIONS = (".png", ".tif", ".tiff")
LABEL_KINDS = ("ground_truth", "pseudo_label", "none")
SPLITS = ("train", "val", "test")

# Pillow modes accepted for images and their intensity scale.
_MODE_SCALE = {"L": 255.0, "RGB": 255.0, "I;16": 65535.0, "I": 65535.0}


@dataclass
class ImagePatch:
    """H x W x C image with intensities normalized to [0, 1]."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise FormatError(f"expected H x W x C with C in (1, 3), got {self.pixels.shape}")
        if self.pixels.shape[0] < 8 or self.pixels.shape[1] < 8:
            raise FormatError(f"patch too small for the model: {self.pixels.shape}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise FormatError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class BinaryMask:
    """H x W foreground mask with values in {0, 1}."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise FormatError(f"mask must be single-channel, got shape {self.pixels.shape}")
        values = np.unique(self.pixels)
        if not np.isin(values, (0, 1)).all():
            raise FormatError(f"mask values must be in {{0, 1}}, got {values[:10]}")
        self.pixels = self.pixels.astype(np.uint8)


@dataclass
class InstanceMap:
    """H x W map of non-negative integer instance labels; 0 is background."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise FormatError(f"instance map must be single-channel, got shape {self.pixels.shape}")
        if self.pixels.min() < 0:
            raise FormatError("instance labels must be non-negative")
        self.pixels = self.pixels.astype(np.int32)

    @property
    def instance_count(self) -> int:
        return len(self.labels())

    def labels(self) -> np.ndarray:
        """Distinct nonzero labels present, ascending."""
        values = np.unique(self.pixels)
        return values[values != 0]


def _open_raster(path: str | Path) -> Image.Image:
    path = Path(path)
    if path.suffix.lower() not in RASTER_EXTENSIONS:
        raise FormatError(f"unsupported raster extension: {path}")
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise IOError(f"cannot read raster {path}: {exc}") from exc


def load_patch(path: str | Path) -> ImagePatch:
    """Load an 8/16-bit grayscale or RGB raster, rescaled to [0, 1]."""
    image = _open_raster(path)
    if image.mode not in _MODE_SCALE:
        raise FormatError(f"unsupported image mode {image.mode!r} in {path}")
    scale = _MODE_SCALE[image.mode]
    pixels = np.asarray(image).astype(np.float32) / scale
    return ImagePatch(pixels=pixels, id=Path(path).stem)


def save_patch(patch: ImagePatch, path: str | Path) -> None:
    """Write an ImagePatch as an 8-bit PNG/TIFF."""
    arr = np.round(patch.pixels * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_mask(path: str | Path, kind: str = "binary") -> BinaryMask | InstanceMap:
    """Load a single-channel raster as a binary mask or instance map.

    ``binary``: any nonzero pixel becomes 1. ``instance``: raw integer
    labels are preserved.
    """
    image = _open_raster(path)
    if image.mode in ("RGB", "RGBA"):
        raise FormatError(f"mask must be single-channel, got mode {image.mode!r} in {path}")
    raw = np.asarray(image)
    if raw.ndim != 2:
        raise FormatError(f"mask must be single-channel, got shape {raw.shape} in {path}")
    if kind == "binary":
        return BinaryMask(pixels=(raw != 0).astype(np.uint8), id=Path(path).stem)
    if kind == "instance":
        return InstanceMap(pixels=raw.astype(np.int32), id=Path(path).stem)
    raise ConfigError(f"unknown mask kind {kind!r}")


def save_mask(mask: BinaryMask | InstanceMap, path: str | Path) -> None:
    """Write a mask; binary as 8-bit {0, 255}, instances as 16-bit labels."""
    if isinstance(mask, BinaryMask):
        Image.fromarray(mask.pixels * np.uint8(255)).save(path)
    elif isinstance(mask, InstanceMap):
        if mask.pixels.max() > 65535:
            raise FormatError("instance labels exceed 16-bit range")
        Image.fromarray(mask.pixels.astype(np.uint16)).save(path)
    else:
        raise FormatError(f"cannot save mask of type {type(mask).__name__}")


def infer_mask_kind(path: str | Path) -> str:
    """Bit-depth convention: 16-bit files are instance maps, 8-bit binary."""
    image = _open_raster(path)
    if image.mode in ("I;16", "I"):
        return "instance"
    return "binary"


def load_label_as_binary(path: str | Path, kind: str | None = None) -> BinaryMask:
    """Load a label of either kind and collapse it to a binary mask."""
    kind = kind or infer_mask_kind(path)
    mask = load_mask(path, kind=kind)
    if isinstance(mask, InstanceMap):
        return BinaryMask(pixels=(mask.pixels != 0).astype(np.uint8), id=mask.id)
    return mask


def load_prob_map(path: str | Path) -> np.ndarray:
    """Load a probability map stored as a 16-bit raster, rescaled to [0, 1]."""
    image = _open_raster(path)
    if image.mode not in ("I;16", "I", "L"):
        raise FormatError(f"probability map must be single-channel, got {image.mode!r}")
    scale = _MODE_SCALE[image.mode]
    return np.asarray(image).astype(np.float32) / scale


def save_prob_map(probs: np.ndarray, path: str | Path) -> None:
    """Write per-pixel probabilities as a 16-bit PNG."""
    if probs.ndim != 2:
        raise FormatError(f"probability map must be 2-D, got shape {probs.shape}")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise FormatError("probabilities outside [0, 1]")
    Image.fromarray(np.round(probs * 65535.0).astype(np.uint16)).save(path)


@dataclass
class ManifestRecord:
    """One (image, label, split) entry; paths are relative to the root."""

    image_path: str
    label_path: str | None
    label_kind: str
    split: str

    def __post_init__(self):
        if self.label_kind not in LABEL_KINDS:
            raise ManifestError(f"bad label_kind {self.label_kind!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"bad split {self.split!r}")
        if self.label_kind == "none" and self.label_path is not None:
            raise ManifestError("label_kind 'none' requires an empty label_path")

    @property
    def image_id(self) -> str:
        return Path(self.image_path).stem


@dataclass
class DatasetManifest:
    """Declarative listing of dataset records plus the root they live under."""

    root: str
    records: list[ManifestRecord] = field(default_factory=list)

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel

    def image_path(self, record: ManifestRecord) -> Path:
        return self.resolve(record.image_path)

    def label_path(self, record: ManifestRecord) -> Path | None:
        return None if record.label_path is None else self.resolve(record.label_path)

    def split(self, name: str) -> list[ManifestRecord]:
        if name not in SPLITS:
            raise ManifestError(f"bad split {name!r}")
        return [r for r in self.records if r.split == name]

    def split_sizes(self) -> dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}

    def save(self, path: str | Path) -> None:
        payload = {
            "root": str(self.root),
            "records": [
                {
                    "image_path": r.image_path,
                    "label_path": r.label_path,
                    "label_kind": r.label_kind,
                    "split": r.split,
                }
                for r in self.records
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path, check_paths: bool = True) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        manifest = cls(
            root=payload["root"],
            records=[ManifestRecord(**entry) for entry in payload["records"]],
        )
        if check_paths:
            missing = []
            for record in manifest.records:
                if not manifest.image_path(record).exists():
                    missing.append(record.image_path)
                label = manifest.label_path(record)
                if label is not None and not label.exists():
                    missing.append(record.label_path)
            if missing:
                raise ManifestError(f"manifest references missing files: {missing[:10]}")
        return manifest


def _split_sizes(n: int, fractions: tuple[float, ...]) -> tuple[int, int, int]:
    """Split sizes for n items: ceil for train and val, remainder to test.

    Reproduces the conventional 72/8/20 split of 621 items as
    (448, 50, 123). When the fractions sum to less than 1 the test split
    takes ceil(c * n) and the leftover items are dropped.
    """
    if any(f < 0 for f in fractions):
        raise ConfigError(f"negative split fraction in {fractions}")
    if sum(fractions) > 1.0 + 1e-9:
        raise ConfigError(f"split fractions sum to {sum(fractions)} > 1")
    a, b = fractions[0], fractions[1]
    n_train = min(n, math.ceil(a * n - 1e-9))
    n_val = min(n - n_train, math.ceil(b * n - 1e-9))
    remainder = n - n_train - n_val
    if len(fractions) == 2:
        return n_train, n_val, 0
    c = fractions[2]
    if math.isclose(a + b + c, 1.0, abs_tol=1e-9):
        n_test = remainder
    else:
        n_test = min(remainder, math.ceil(c * n - 1e-9))
    return n_train, n_val, n_test


def _find_label(labels_dir: Path, stem: str) -> Path | None:
    for ext in RASTER_EXTENSIONS:
        candidate = labels_dir / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    return None


def build_manifest(
    root: str | Path,
    fractions: tuple[float, float] | tuple[float, float, float],
    seed: int,
    test_ids: list[str] | None = None,
    unlabeled_splits: tuple[str, ...] = (),
    require_labels: bool = True,
) -> DatasetManifest:
    """Scan ``root/images`` + ``root/labels`` and assign a deterministic split.

    ``fractions`` is (train, val, test) over all items, or (train, val) over
    the items left after removing the explicit ``test_ids``. Records are
    shuffled by a seeded RNG before assignment, so a fixed (root, spec, seed)
    always yields the same manifest. Splits named in ``unlabeled_splits``
    have their labels stripped (label_kind ``none``), which is how a
    pseudo-labeling run is set up on data that does have ground truth.
    """
    root = Path(root)
    images_dir = root / "images"
    labels_dir = root / "labels"
    if not images_dir.is_dir():
        raise ManifestError(f"missing images directory: {images_dir}")

    image_files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in RASTER_EXTENSIONS
    )
    if not image_files:
        raise ManifestError(f"no raster images under {images_dir}")

    labels: dict[str, Path | None] = {
        p.stem: _find_label(labels_dir, p.stem) if labels_dir.is_dir() else None
        for p in image_files
    }
    if require_labels:
        offenders = sorted(stem for stem, label in labels.items() if label is None)
        if offenders:
            raise ManifestError(f"images without matching labels: {offenders[:20]}")

    if test_ids is not None:
        if len(fractions) != 2:
            raise ConfigError("explicit test_ids require (train, val) fractions")
        known = {p.stem for p in image_files}
        unknown = sorted(set(test_ids) - known)
        if unknown:
            raise ManifestError(f"test_ids not found in images: {unknown[:20]}")
        pool = [p for p in image_files if p.stem not in set(test_ids)]
        test_files = [p for p in image_files if p.stem in set(test_ids)]
    else:
        if len(fractions) != 3:
            raise ConfigError("expected (train, val, test) fractions")
        pool = list(image_files)
        test_files = []

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shuffled = [pool[i] for i in order]

    n_train, n_val, n_test = _split_sizes(len(pool), tuple(fractions))
    assigned = {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val : n_train + n_val + n_test] + test_files,
    }

    records = []
    for split in SPLITS:
        for image_file in sorted(assigned[split]):
            label = labels[image_file.stem]
            if split in unlabeled_splits or label is None:
                kind, label_rel = "none", None
            else:
                kind, label_rel = "ground_truth", str(label.relative_to(root))
            records.append(
                ManifestRecord(
                    image_path=str(image_file.relative_to(root)),
                    label_path=label_rel,
                    label_kind=kind,
                    split=split,
                )
            )
    return DatasetManifest(root=str(root), records=records)
