"""Synthetic nuclei patches: random textured ellipses with instance labels.

Exists so the pipeline can be exercised end to end without any real imagery.
Each patch gets a seeded number of elliptical "nuclei" painted onto a noisy
background; instances never overwrite each other, so the instance count in
the label map always equals the number requested for that patch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    ImagePatch,
    InstanceMap,
    build_manifest,
    save_mask,
    save_patch,
)
from .errors import ConfigError


@dataclass
class SynthConfig:
    count: int = 24
    size: int = 64
    nuclei_min: int = 5
    nuclei_max: int = 10
    seed: int = 0
    channels: int = 3
    fractions: tuple[float, ...] = (0.72, 0.08, 0.20)
    unlabeled_splits: tuple[str, ...] = ("train", "val")
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.size < 16:
            raise ConfigError(f"size must be >= 16, got {self.size}")
        if not 1 <= self.nuclei_min <= self.nuclei_max:
            raise ConfigError(
                f"need 1 <= nuclei_min <= nuclei_max, got ({self.nuclei_min}, {self.nuclei_max})"
            )
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _paint_instance(labels: np.ndarray, label: int, rng: np.random.Generator) -> None:
    """Add one ellipse on background pixels only; retries until it sticks."""
    size = labels.shape[0]
    rows, cols = np.mgrid[0:size, 0:size]
    for _ in range(200):
        a = rng.uniform(2.5, size / 8)
        b = rng.uniform(2.5, size / 8)
        cy = rng.uniform(a, size - a)
        cx = rng.uniform(b, size - b)
        theta = rng.uniform(0, np.pi)
        dy, dx = rows - cy, cols - cx
        u = dy * np.cos(theta) + dx * np.sin(theta)
        v = -dy * np.sin(theta) + dx * np.cos(theta)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        paintable = inside & (labels == 0)
        if np.count_nonzero(paintable) >= 4:
            labels[paintable] = label
            return
    # crowded patch: fall back to the first free pixel so the count still holds
    free = np.argwhere(labels == 0)
    labels[free[0][0], free[0][1]] = label


def _render(labels: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.size
    foreground = labels != 0
    if cfg.channels == 3:
        image = np.empty((size, size, 3), dtype=np.float32)
        image[:] = [0.82, 0.69, 0.78]  # pale eosin-ish background
        image[foreground] = [0.38, 0.22, 0.52]  # dark hematoxylin-ish nuclei
    else:
        image = np.full((size, size, 1), 0.75, dtype=np.float32)
        image[foreground] = 0.25
    image += rng.normal(0.0, cfg.noise_sigma, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0)


def generate_patch(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One (image, instance label map) pair."""
    n = int(rng.integers(cfg.nuclei_min, cfg.nuclei_max + 1))
    labels = np.zeros((cfg.size, cfg.size), dtype=np.int32)
    for label in range(1, n + 1):
        _paint_instance(labels, label, rng)
    image = _render(labels, cfg, rng)
    return image, labels


def generate_dataset(root: str | Path, cfg: SynthConfig) -> DatasetManifest:
    """Write images/, labels/ and a manifest under root; returns the manifest.

    Labels are 16-bit instance maps. Splits come from cfg.fractions with the
    configured splits left unlabeled in the manifest (ground truth stays on
    disk for teachers and final evaluation).
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    width = max(4, len(str(cfg.count - 1)))
    for i in range(cfg.count):
        image, labels = generate_patch(cfg, rng)
        stem = f"img_{i:0{width}d}"
        save_patch(ImagePatch(pixels=image, id=stem), root / "images" / f"{stem}.png")
        save_mask(
            InstanceMap(pixels=labels, id=stem), root / "labels" / f"{stem}.png"
        )
    manifest = build_manifest(
        root,
        fractions=cfg.fractions,
        seed=cfg.seed,
        unlabeled_splits=cfg.unlabeled_splits,
    )
    manifest.save(root / "manifest.json")
    return manifest
