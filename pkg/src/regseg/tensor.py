"""Dense 4-D activation tensor and the channel split/concat primitives.

Layout is fixed: NCHW, row-major, float32. Tensors are treated as immutable
once constructed; channel slices copy rather than alias so results never
share storage with their sources.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

__all__ = ["Tensor", "create", "slice_channels", "concat_channels"]


class Tensor:
    """A dense (n, c, h, w) float32 array, index order (n, c, h, w)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n,c,h,w), got {arr.ndim}-D")
        if min(arr.shape) < 1:
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    def __repr__(self) -> str:
        return f"Tensor{self.shape}"


def create(shape: Sequence[int], fill: float | Sequence[float] = 0.0) -> Tensor:
    """Build a tensor from a scalar fill value or a flat value list.

    A value list must have exactly n*c*h*w entries and is laid out in
    (n, c, h, w) index order.
    """
    shape = tuple(int(e) for e in shape)
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 extents, got {len(shape)}")
    if min(shape) < 1:
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if np.isscalar(fill):
        return Tensor(np.full(shape, fill, dtype=np.float32))
    values = np.asarray(fill, dtype=np.float32).ravel()
    expected = int(np.prod(shape))
    if values.size != expected:
        raise ShapeError(
            f"value list has {values.size} elements, shape {shape} needs {expected}"
        )
    return Tensor(values.reshape(shape))


def slice_channels(t: Tensor, lo: int, hi: int) -> Tensor:
    """Copy of channels [lo, hi); batch and spatial dims unchanged."""
    if not (0 <= lo < hi <= t.c):
        raise IndexError(f"channel slice [{lo}, {hi}) out of range for c={t.c}")
    return Tensor(t.data[:, lo:hi].copy())


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along the channel dim, in argument order."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    first = parts[0]
    for p in parts[1:]:
        if (p.n, p.h, p.w) != (first.n, first.h, first.w):
            raise ShapeError(
                f"concat parts disagree outside channel dim: {p.shape} vs {first.shape}"
            )
    if len(parts) == 1:
        return Tensor(first.data.copy())
    return Tensor(np.concatenate([p.data for p in parts], axis=1))
