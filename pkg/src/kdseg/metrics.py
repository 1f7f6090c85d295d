"""Segmentation metrics: confusion-count ratios, boundary Hausdorff, reports.

All ratio metrics are pure functions of ConfusionCounts so the counting is
done exactly once per image pair. f1 is computed through precision/recall
rather than reusing dice; the two coincide for binary pixel classification
and the redundancy is a deliberate cross-check.

Degenerate conventions (fixed so every record is a number):
  dice/iou/f1 = 1 when pred and truth are both empty, 0 when exactly one is;
  tpr = 1 when truth is empty; fpr = 0 when there is no true background;
  precision = 1 when there are no predicted positives.
Hausdorff with exactly one empty mask is the image diagonal, flagged in the
record; two empty masks are identical, so the distance is 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .data import BinaryMask, DatasetManifest, load_label_as_binary, load_prob_map
from .errors import DimensionError, EvaluationError

METRIC_NAMES = ("dice", "iou", "tpr", "fpr", "f1", "hd")

_PRED_EXTENSIONS = (".png", ".tif", ".tiff")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary_array(mask) -> np.ndarray:
    pixels = mask.pixels if isinstance(mask, BinaryMask) else np.asarray(mask)
    if pixels.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {pixels.shape}")
    return pixels != 0


def confusion(pred, truth) -> ConfusionCounts:
    """Exact pixel counts comparing a predicted mask against truth."""
    p = _as_binary_array(pred)
    t = _as_binary_array(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dice(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def iou(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


def tpr(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


def fpr(counts: ConfusionCounts) -> float:
    denom = counts.fp + counts.tn
    if denom == 0:
        return 0.0
    return counts.fp / denom


def precision(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp
    if denom == 0:
        return 1.0
    return counts.tp / denom


def f1(counts: ConfusionCounts) -> float:
    p = precision(counts)
    r = tpr(counts)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def boundary_pixels(mask) -> np.ndarray:
    """Coordinates (row, col) of foreground pixels with a background 4-neighbor.

    The image border counts as background, so a full-frame mask still has a
    boundary ring.
    """
    m = _as_binary_array(mask)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(m & ~interior)


def hausdorff(pred, truth) -> tuple[float, bool]:
    """Symmetric boundary Hausdorff distance in pixels, plus a degeneracy flag.

    Returns (distance, degenerate). When exactly one mask is empty there is
    no boundary to measure against; the distance is the image diagonal and
    degenerate is True. Two empty masks are equal, giving (0.0, False).
    """
    p = _as_binary_array(pred)
    t = _as_binary_array(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    bp = boundary_pixels(p)
    bt = boundary_pixels(t)
    if len(bp) == 0 and len(bt) == 0:
        return 0.0, False
    if len(bp) == 0 or len(bt) == 0:
        return math.hypot(*p.shape), True
    forward = float(cKDTree(bt).query(bp)[0].max())
    backward = float(cKDTree(bp).query(bt)[0].max())
    return max(forward, backward), False


@dataclass
class MetricsRecord:
    image_id: str
    dice: float
    iou: float
    tpr: float
    fpr: float
    f1: float
    hd: float
    hd_degenerate: bool = False

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def score_pair(image_id: str, pred, truth) -> MetricsRecord:
    counts = confusion(pred, truth)
    hd, degenerate = hausdorff(pred, truth)
    return MetricsRecord(
        image_id=image_id,
        dice=dice(counts),
        iou=iou(counts),
        tpr=tpr(counts),
        fpr=fpr(counts),
        f1=f1(counts),
        hd=hd,
        hd_degenerate=degenerate,
    )


def find_prediction(pred_dir: str | Path, image_id: str) -> Path:
    pred_dir = Path(pred_dir)
    for ext in _PRED_EXTENSIONS:
        candidate = pred_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    raise EvaluationError(f"no prediction for image id {image_id!r} in {pred_dir}")


def evaluate_set(
    pred_dir: str | Path,
    manifest: DatasetManifest,
    threshold: float = 0.5,
    split: str = "test",
) -> tuple[list[MetricsRecord], dict[str, dict[str, float]]]:
    """Score every record of a split against predictions found by image id.

    Predictions may be probability maps (16-bit) or binary masks (8-bit);
    both are thresholded at `threshold`. Returns per-image records sorted by
    id plus {metric: {mean, std, n}} aggregates (sample std, 0.0 for n < 2).
    """
    records = []
    for rec in sorted(manifest.split(split), key=lambda r: r.image_id):
        truth = load_label_as_binary(manifest.label_path(rec))
        probs = load_prob_map(find_prediction(pred_dir, rec.image_id))
        if probs.shape != truth.pixels.shape:
            raise EvaluationError(
                f"prediction shape {probs.shape} does not match truth "
                f"{truth.pixels.shape} for image id {rec.image_id!r}"
            )
        hard = (probs >= threshold).astype(np.uint8)
        records.append(score_pair(rec.image_id, hard, truth))
    return records, aggregate(records)


def aggregate(records: list[MetricsRecord]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in records]
        n = len(values)
        mean = float(np.mean(values)) if n else 0.0
        std = float(np.std(values, ddof=1)) if n > 1 else 0.0
        out[name] = {"mean": mean, "std": std, "n": float(n)}
    return out


def write_records_csv(records: list[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", *METRIC_NAMES, "hd_degenerate"])
        for rec in records:
            writer.writerow(
                [rec.image_id]
                + [f"{getattr(rec, name):.10g}" for name in METRIC_NAMES]
                + [int(rec.hd_degenerate)]
            )


def write_aggregates_json(aggregates: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(aggregates, indent=2, sort_keys=True) + "\n")


def render_overlay(image_pixels: np.ndarray, pred, truth) -> np.ndarray:
    """RGB overlay: truth boundary green, prediction boundary red, both yellow."""
    if image_pixels.ndim == 2:
        image_pixels = image_pixels[:, :, None]
    if image_pixels.shape[2] == 1:
        image_pixels = np.repeat(image_pixels, 3, axis=2)
    overlay = image_pixels.astype(np.float32).copy()
    tb = boundary_pixels(truth)
    pb = boundary_pixels(pred)
    on_truth = np.zeros(overlay.shape[:2], dtype=bool)
    if len(tb):
        on_truth[tb[:, 0], tb[:, 1]] = True
        overlay[tb[:, 0], tb[:, 1]] = [0.0, 1.0, 0.0]
    if len(pb):
        both = on_truth[pb[:, 0], pb[:, 1]]
        overlay[pb[:, 0], pb[:, 1]] = [1.0, 0.0, 0.0]
        overlay[pb[both, 0], pb[both, 1]] = [1.0, 1.0, 0.0]
    return overlay
