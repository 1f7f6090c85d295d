"""I/O round-trips, manifest validation, and split arithmetic."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdseg.data import (
    BinaryMask,
    DatasetManifest,
    ImagePatch,
    InstanceMap,
    ManifestRecord,
    _split_sizes,
    build_manifest,
    infer_mask_kind,
    load_label_as_binary,
    load_mask,
    load_patch,
    load_prob_map,
    save_mask,
    save_patch,
    save_prob_map,
)
from kdseg.errors import ConfigError, FormatError, ManifestError


class TestTypes:
    def test_patch_expands_2d_to_single_channel(self):
        p = ImagePatch(pixels=np.zeros((8, 8), dtype=np.float32))
        assert p.pixels.shape == (8, 8, 1)
        assert (p.height, p.width, p.channels) == (8, 8, 1)

    def test_patch_rejects_out_of_range(self):
        with pytest.raises(FormatError):
            ImagePatch(pixels=np.full((8, 8, 3), 1.5, dtype=np.float32))

    def test_patch_rejects_tiny(self):
        with pytest.raises(FormatError):
            ImagePatch(pixels=np.zeros((4, 8, 1), dtype=np.float32))

    def test_binary_mask_rejects_other_values(self):
        with pytest.raises(FormatError):
            BinaryMask(pixels=np.array([[0, 2]], dtype=np.uint8))

    def test_instance_map_labels(self):
        m = InstanceMap(pixels=np.array([[0, 3], [1, 3]]))
        assert list(m.labels()) == [1, 3]
        assert m.instance_count == 2

    def test_instance_map_rejects_negative(self):
        with pytest.raises(FormatError):
            InstanceMap(pixels=np.array([[-1, 0]]))


class TestRoundTrips:
    def test_patch_8bit(self, tmp_path, rng):
        # quantized to 8 bits on save, so round-trip is exact on the grid
        raw = np.round(rng.random((16, 16, 3)) * 255) / 255
        patch = ImagePatch(pixels=raw.astype(np.float32))
        save_patch(patch, tmp_path / "p.png")
        back = load_patch(tmp_path / "p.png")
        np.testing.assert_allclose(back.pixels, patch.pixels, atol=1e-6)

    def test_grayscale_patch(self, tmp_path, rng):
        raw = np.round(rng.random((12, 10, 1)) * 255) / 255
        save_patch(ImagePatch(pixels=raw.astype(np.float32)), tmp_path / "g.png")
        back = load_patch(tmp_path / "g.png")
        assert back.pixels.shape == (12, 10, 1)
        np.testing.assert_allclose(back.pixels, raw, atol=1e-6)

    def test_binary_mask(self, tmp_path, rng):
        mask = BinaryMask(pixels=(rng.random((16, 16)) < 0.5).astype(np.uint8))
        save_mask(mask, tmp_path / "m.png")
        assert infer_mask_kind(tmp_path / "m.png") == "binary"
        back = load_mask(tmp_path / "m.png", kind="binary")
        np.testing.assert_array_equal(back.pixels, mask.pixels)

    def test_instance_map_16bit(self, tmp_path):
        labels = np.array([[0, 1, 2], [300, 300, 0], [0, 70000 % 65535, 2]])
        inst = InstanceMap(pixels=labels)
        save_mask(inst, tmp_path / "i.png")
        assert infer_mask_kind(tmp_path / "i.png") == "instance"
        back = load_mask(tmp_path / "i.png", kind="instance")
        np.testing.assert_array_equal(back.pixels, labels)

    def test_instance_map_tiff(self, tmp_path):
        labels = np.arange(256, dtype=np.int32).reshape(16, 16)
        save_mask(InstanceMap(pixels=labels), tmp_path / "i.tif")
        back = load_mask(tmp_path / "i.tif", kind="instance")
        np.testing.assert_array_equal(back.pixels, labels)

    def test_instance_overflow(self, tmp_path):
        with pytest.raises(FormatError):
            save_mask(InstanceMap(pixels=np.array([[0, 70000]])), tmp_path / "x.png")

    def test_prob_map(self, tmp_path, rng):
        probs = rng.random((16, 16)).astype(np.float32)
        save_prob_map(probs, tmp_path / "p.png")
        back = load_prob_map(tmp_path / "p.png")
        # 16-bit quantization: half a step of 1/65535
        np.testing.assert_allclose(back, probs, atol=0.5 / 65535)

    def test_label_as_binary_collapses_instances(self, tmp_path):
        labels = np.array([[0, 1], [2, 0]])
        save_mask(InstanceMap(pixels=labels), tmp_path / "i.png")
        binary = load_label_as_binary(tmp_path / "i.png")
        np.testing.assert_array_equal(binary.pixels, [[0, 1], [1, 0]])

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(FormatError):
            load_patch(tmp_path / "x.bmp")


class TestSplitSizes:
    def test_documented_split(self):
        # 72/8/20 over 621 items
        assert _split_sizes(621, (0.72, 0.08, 0.20)) == (448, 50, 123)

    def test_two_fraction_mode(self):
        # 87.5/12.5 over 8000 items, test held out separately
        assert _split_sizes(8000, (0.875, 0.125)) == (7000, 1000, 0)

    def test_fractions_over_one(self):
        with pytest.raises(ConfigError):
            _split_sizes(100, (0.8, 0.3, 0.2))

    def test_negative_fraction(self):
        with pytest.raises(ConfigError):
            _split_sizes(100, (-0.1, 0.5, 0.6))

    @given(
        n=st.integers(min_value=1, max_value=5000),
        a=st.integers(min_value=0, max_value=100),
        b=st.integers(min_value=0, max_value=100),
    )
    @settings(max_examples=200, deadline=None)
    def test_full_fractions_partition(self, n, a, b):
        # any (a, b, 100-a-b)/100 split uses every item exactly once
        if a + b > 100:
            a, b = a % 50, b % 50
        c = 100 - a - b
        sizes = _split_sizes(n, (a / 100, b / 100, c / 100))
        assert sum(sizes) == n
        assert all(s >= 0 for s in sizes)


class TestManifest:
    def test_record_validation(self):
        with pytest.raises(ManifestError):
            ManifestRecord(image_path="a.png", label_path=None, label_kind="bad", split="train")
        with pytest.raises(ManifestError):
            ManifestRecord(image_path="a.png", label_path=None, label_kind="ground_truth", split="nope")
        with pytest.raises(ManifestError):
            ManifestRecord(image_path="a.png", label_path="l.png", label_kind="none", split="train")

    def test_build_and_reload(self, toy_dataset, tmp_path):
        manifest = toy_dataset(count=10, unlabeled=())
        sizes = manifest.split_sizes()
        assert sum(sizes.values()) == 10
        assert sizes["train"] == 7  # ceil(0.7 * 10)
        path = tmp_path / "data" / "manifest.json"
        reloaded = DatasetManifest.load(path)
        assert reloaded.records == manifest.records

    def test_unlabeled_splits_stripped(self, toy_dataset):
        manifest = toy_dataset(count=10, unlabeled=("train", "val"))
        for record in manifest.split("train") + manifest.split("val"):
            assert record.label_kind == "none"
            assert record.label_path is None
        for record in manifest.split("test"):
            assert record.label_kind == "ground_truth"

    def test_deterministic_assignment(self, tmp_path, toy_dataset):
        toy_dataset(count=10, subdir="d1")
        m1 = build_manifest(tmp_path / "d1", (0.7, 0.1, 0.2), seed=5)
        m2 = build_manifest(tmp_path / "d1", (0.7, 0.1, 0.2), seed=5)
        assert m1.records == m2.records
        m3 = build_manifest(tmp_path / "d1", (0.7, 0.1, 0.2), seed=6)
        assert m1.records != m3.records  # different shuffle

    def test_missing_labels_named(self, tmp_path, toy_dataset):
        toy_dataset(count=6, subdir="d2")
        victim = sorted((tmp_path / "d2" / "labels").iterdir())[2]
        victim.unlink()
        with pytest.raises(ManifestError) as err:
            build_manifest(tmp_path / "d2", (0.7, 0.1, 0.2), seed=0)
        assert victim.stem in str(err.value)

    def test_explicit_test_ids(self, tmp_path, toy_dataset):
        toy_dataset(count=10, subdir="d3")
        ids = sorted(p.stem for p in (tmp_path / "d3" / "images").iterdir())
        manifest = build_manifest(
            tmp_path / "d3", (0.875, 0.125), seed=0, test_ids=ids[:2]
        )
        assert {r.image_id for r in manifest.split("test")} == set(ids[:2])
        assert manifest.split_sizes() == {"train": 7, "val": 1, "test": 2}

    def test_unknown_test_id(self, tmp_path, toy_dataset):
        toy_dataset(count=6, subdir="d4")
        with pytest.raises(ManifestError):
            build_manifest(tmp_path / "d4", (0.8, 0.2), seed=0, test_ids=["ghost"])

    def test_load_checks_paths(self, tmp_path, toy_dataset):
        manifest = toy_dataset(count=6, subdir="d5")
        path = tmp_path / "d5" / "manifest.json"
        (tmp_path / "d5" / manifest.records[0].image_path).unlink()
        with pytest.raises(ManifestError):
            DatasetManifest.load(path)
        DatasetManifest.load(path, check_paths=False)  # opt-out works

    def test_manifest_json_is_sorted(self, tmp_path, toy_dataset):
        toy_dataset(count=6, subdir="d6")
        text = (tmp_path / "d6" / "manifest.json").read_text()
        payload = json.loads(text)
        assert list(payload) == ["records", "root"]
