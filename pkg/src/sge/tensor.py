"""Dense NCHW feature maps and their grouped views.

A feature map is a C-contiguous ``numpy.ndarray`` of rank 4, laid out
row-major with the batch axis outermost and width innermost. Grouping the
channel axis into ``G`` slices is then a pure reshape::

    (N, C, H, W)  <->  (N, G, C // G, H * W)

so element ``(n, g, d, i)`` of the view aliases
``(n, g * (C // G) + d, i // W, i % W)`` of the source.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleChannels, InvalidShape, NonFiniteInput

PRODUCTION_DTYPE = np.float32
VERIFICATION_DTYPE = np.float64


def as_feature_map(data, dtype=None, *, check_finite=True) -> np.ndarray:
    """Validate ``data`` as a feature map and return it as a C-contiguous array.

    No copy is made when ``data`` already has the requested dtype and layout.
    """
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(PRODUCTION_DTYPE)
    if arr.ndim != 4:
        raise InvalidShape(f"feature map must have rank 4 (N, C, H, W), got shape {arr.shape}")
    if min(arr.shape) <= 0:
        raise InvalidShape(f"feature map dimensions must be positive, got {arr.shape}")
    if check_finite and not np.all(np.isfinite(arr)):
        raise NonFiniteInput("feature map contains NaN or Inf entries")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class GroupedView:
    """Channel-grouped window onto a feature map.

    ``data`` has shape ``(N, G, C // G, H * W)`` and shares memory with
    ``source``; writing through either is visible in the other.
    """

    source: np.ndarray
    groups: int
    data: np.ndarray

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def per_group_channels(self) -> int:
        return self.data.shape[2]

    @property
    def positions(self) -> int:
        return self.data.shape[3]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.source.shape[2], self.source.shape[3]

    def group(self, n: int, g: int) -> np.ndarray:
        """The ``(C // G, m)`` block of sample ``n``, group ``g``."""
        _check_index(n, self.batch, "batch")
        _check_index(g, self.groups, "group")
        return self.data[n, g]


def _check_index(i, size, what):
    if not (0 <= i < size):
        raise IndexError(f"{what} index {i} out of range [0, {size})")


def group_split(fm, groups: int) -> GroupedView:
    fm = as_feature_map(fm, check_finite=False)
    n, c, h, w = fm.shape
    if groups <= 0 or c % groups != 0:
        raise IndivisibleChannels(c, groups)
    view = fm.reshape(n, groups, c // groups, h * w)
    # reshape of a contiguous array must not copy; the aliasing contract relies on it
    assert np.shares_memory(view, fm)
    return GroupedView(source=fm, groups=groups, data=view)


def group_merge(view: GroupedView) -> np.ndarray:
    return view.data.reshape(view.source.shape)


def spatial_mean(view: GroupedView, n: int, g: int) -> np.ndarray:
    """Arithmetic mean of the group's sub-feature vectors over all positions.

    Accumulates in float64 and returns a vector of length ``C // G`` in the
    source dtype.
    """
    block = view.group(n, g)
    return block.mean(axis=1, dtype=np.float64).astype(view.data.dtype, copy=False)
