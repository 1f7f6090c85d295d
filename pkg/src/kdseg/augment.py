"""Split-and-flip transforms: halve a patch at the midline and mirror each
half in place.

Every transform is a pure pixel permutation and an involution, so images,
masks, and probability maps stay aligned when transformed with the same
instance, and consistency regularization can invert a prediction exactly.
Works on numpy arrays and torch tensors alike (gradients flow through).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import TransformError

HORIZONTAL_SPLIT = "horizontal_split"  # split along the vertical midline (width axis)
VERTICAL_SPLIT = "vertical_split"  # split along the horizontal midline (height axis)
AXES = (HORIZONTAL_SPLIT, VERTICAL_SPLIT)


@dataclass(frozen=True)
class SplitFlipTransform:
    axis: str

    def __post_init__(self):
        if self.axis not in AXES:
            raise TransformError(f"unknown split axis {self.axis!r}")


def _flip(arr, axis: int):
    if isinstance(arr, torch.Tensor):
        return torch.flip(arr, dims=(axis,))
    return np.flip(arr, axis=axis)


def _concat(parts, axis: int):
    if isinstance(parts[0], torch.Tensor):
        return torch.cat(parts, dim=axis)
    return np.concatenate(parts, axis=axis)


def apply(t: SplitFlipTransform | None, img, spatial_axes: tuple[int, int] = (0, 1)):
    """Apply a split-flip transform; ``t=None`` is the identity.

    ``spatial_axes`` gives the (height, width) axes: (0, 1) for H x W or
    H x W x C arrays, (-2, -1) for N x C x H x W tensors. For odd sizes the
    halves have sizes floor(n/2) and ceil(n/2), each flipped independently,
    which keeps the transform self-inverse.
    """
    if t is None:
        return img
    axis = spatial_axes[1] if t.axis == HORIZONTAL_SPLIT else spatial_axes[0]
    axis = axis % img.ndim
    n = img.shape[axis]
    if n < 2:
        raise TransformError(f"axis of size {n} cannot be split")
    mid = n // 2
    index = [slice(None)] * img.ndim
    index[axis] = slice(0, mid)
    first = img[tuple(index)]
    index[axis] = slice(mid, n)
    second = img[tuple(index)]
    out = _concat([_flip(first, axis), _flip(second, axis)], axis)
    if isinstance(out, np.ndarray):
        return np.ascontiguousarray(out)
    return out


def sample_transform(
    rng: np.random.Generator,
    p_identity: float = 0.5,
    enabled: tuple[str, ...] = AXES,
) -> SplitFlipTransform | None:
    """Draw identity with probability ``p_identity``, else one enabled axis."""
    if not 0.0 <= p_identity <= 1.0:
        raise TransformError(f"p_identity must be in [0, 1], got {p_identity}")
    if rng.random() < p_identity or not enabled:
        return None
    return SplitFlipTransform(axis=enabled[int(rng.integers(len(enabled)))])
