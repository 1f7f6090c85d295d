"""Split-and-flip transform properties: permutation, involution, equivariance."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from kdseg.augment import (
    AXES,
    HORIZONTAL_SPLIT,
    VERTICAL_SPLIT,
    SplitFlipTransform,
    apply,
    sample_transform,
)
from kdseg.errors import TransformError


def test_defined_geometry_row():
    # [a, b, c, d] -> halves [a, b] and [c, d], each mirrored
    row = np.array([[1, 2, 3, 4]])
    t = SplitFlipTransform(HORIZONTAL_SPLIT)
    np.testing.assert_array_equal(apply(t, row), [[2, 1, 4, 3]])


def test_defined_geometry_column():
    col = np.array([[1], [2], [3], [4]])
    t = SplitFlipTransform(VERTICAL_SPLIT)
    np.testing.assert_array_equal(apply(t, col), [[2], [1], [4], [3]])


def test_odd_width():
    # halves of size 2 and 3, flipped independently
    row = np.array([[1, 2, 3, 4, 5]])
    out = apply(SplitFlipTransform(HORIZONTAL_SPLIT), row)
    np.testing.assert_array_equal(out, [[2, 1, 5, 4, 3]])


def test_identity_is_none():
    img = np.arange(12).reshape(3, 4)
    assert apply(None, img) is img


def test_constant_image_unchanged():
    img = np.full((6, 6), 3.5)
    for axis in AXES:
        np.testing.assert_array_equal(apply(SplitFlipTransform(axis), img), img)


def test_too_small_axis():
    img = np.ones((1, 4))
    with pytest.raises(TransformError):
        apply(SplitFlipTransform(VERTICAL_SPLIT), img)


def test_unknown_axis():
    with pytest.raises(TransformError):
        SplitFlipTransform("diagonal")


@given(
    h=st.integers(min_value=2, max_value=33),
    w=st.integers(min_value=2, max_value=33),
    c=st.sampled_from([None, 1, 3]),
    axis=st.sampled_from(AXES),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=250, deadline=None)
def test_involution_and_permutation(h, w, c, axis, seed):
    rng = np.random.default_rng(seed)
    shape = (h, w) if c is None else (h, w, c)
    img = rng.random(shape).astype(np.float32)
    t = SplitFlipTransform(axis)
    once = apply(t, img)
    assert once.shape == img.shape
    # pure pixel permutation: multiset of values is untouched
    np.testing.assert_array_equal(np.sort(once, axis=None), np.sort(img, axis=None))
    np.testing.assert_array_equal(apply(t, once), img)


@given(
    h=st.integers(min_value=2, max_value=17),
    w=st.integers(min_value=2, max_value=17),
    axis=st.sampled_from(AXES),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=100, deadline=None)
def test_label_equivariance(h, w, axis, seed):
    # thresholding commutes with the transform because it is a permutation
    rng = np.random.default_rng(seed)
    img = rng.random((h, w))
    mask = (img > 0.5).astype(np.uint8)
    t = SplitFlipTransform(axis)
    np.testing.assert_array_equal(
        (apply(t, img) > 0.5).astype(np.uint8), apply(t, mask)
    )


def test_integer_mass_conserved(rng):
    img = rng.integers(0, 255, size=(9, 13)).astype(np.int64)
    for axis in AXES:
        assert apply(SplitFlipTransform(axis), img).sum() == img.sum()


def test_torch_tensors_and_batch_axes(rng):
    x = torch.from_numpy(rng.random((2, 3, 8, 10)).astype(np.float32))
    t = SplitFlipTransform(HORIZONTAL_SPLIT)
    out = apply(t, x, spatial_axes=(2, 3))
    assert isinstance(out, torch.Tensor)
    assert out.shape == x.shape
    torch.testing.assert_close(apply(t, out, spatial_axes=(2, 3)), x)
    # batch and channel dims untouched
    np_ref = apply(t, x[0, 0].numpy())
    np.testing.assert_array_equal(out[0, 0].numpy(), np_ref)


def test_gradients_flow_through(rng):
    x = torch.from_numpy(rng.random((4, 4)).astype(np.float32))
    x.requires_grad_(True)
    out = apply(SplitFlipTransform(VERTICAL_SPLIT), x)
    out.sum().backward()
    np.testing.assert_array_equal(x.grad.numpy(), np.ones((4, 4), dtype=np.float32))


class TestSampling:
    def test_always_identity(self, rng):
        assert all(sample_transform(rng, p_identity=1.0) is None for _ in range(50))

    def test_support_coverage(self, rng):
        drawn = {t.axis for t in (sample_transform(rng, p_identity=0.0) for _ in range(100))}
        assert drawn == set(AXES)

    def test_reproducible_sequence(self):
        a = [sample_transform(np.random.default_rng(7)) for _ in range(20)]
        b = [sample_transform(np.random.default_rng(7)) for _ in range(20)]
        assert a == b

    def test_restricted_enabled_set(self, rng):
        for _ in range(20):
            t = sample_transform(rng, p_identity=0.0, enabled=(VERTICAL_SPLIT,))
            assert t.axis == VERTICAL_SPLIT

    def test_bad_probability(self, rng):
        with pytest.raises(TransformError):
            sample_transform(rng, p_identity=1.5)
