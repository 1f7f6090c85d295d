import numpy as np
import pytest

from kdseg.synth import SynthConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_dataset(tmp_path):
    """Factory building a small synthetic dataset under tmp_path."""

    def build(
        count=12,
        size=32,
        seed=0,
        unlabeled=("train", "val"),
        fractions=(0.7, 0.1, 0.2),
        subdir="data",
    ):
        cfg = SynthConfig(
            count=count,
            size=size,
            nuclei_min=3,
            nuclei_max=6,
            seed=seed,
            fractions=fractions,
            unlabeled_splits=tuple(unlabeled),
        )
        return generate_dataset(tmp_path / subdir, cfg)

    return build
