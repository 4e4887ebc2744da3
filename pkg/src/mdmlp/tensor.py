"""Dense row-major tensor operations on plain numpy arrays.

Every op returns a freshly materialised C-contiguous array; inputs are never
modified. Shape violations raise :class:`ShapeError`, bad arguments
:class:`ConfigError`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


@dataclass(frozen=True)
class PatchGeometry:
    """Image extents plus patch side ``p`` and stride ``overlap``.

    The patch grid is ``H' = (H - p) / overlap + 1`` (same for W). The division
    must be exact; there is no implicit padding.
    """

    height: int
    width: int
    channels: int
    patch: int
    overlap: int

    def __post_init__(self):
        for name in ("height", "width", "channels", "patch", "overlap"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"PatchGeometry.{name} must be a positive integer, got {v!r}")
        if not self.overlap <= self.patch <= min(self.height, self.width):
            raise ConfigError(
                f"need 1 <= overlap <= patch <= min(H, W); got overlap={self.overlap}, "
                f"patch={self.patch}, H={self.height}, W={self.width}"
            )
        for name, extent in (("height", self.height), ("width", self.width)):
            if (extent - self.patch) % self.overlap:
                raise ConfigError(
                    f"{name} {extent}: ({extent} - {self.patch}) is not divisible by overlap {self.overlap}"
                )

    @property
    def grid_h(self) -> int:
        return (self.height - self.patch) // self.overlap + 1

    @property
    def grid_w(self) -> int:
        return (self.width - self.patch) // self.overlap + 1

    @property
    def patch_pixels(self) -> int:
        return self.patch * self.patch

    def with_overlap(self, overlap: int) -> "PatchGeometry":
        return PatchGeometry(self.height, self.width, self.channels, self.patch, overlap)


def as_tensor(x, dtype=None) -> np.ndarray:
    """Coerce to a contiguous float array of rank >= 1."""
    a = np.ascontiguousarray(x, dtype=dtype)
    if a.dtype.type not in FLOAT_DTYPES:
        a = a.astype(np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    if 0 in a.shape:
        raise ShapeError(f"all extents must be >= 1, got {a.shape}")
    return a


def check_permutation(axes: Sequence[int], rank: int) -> tuple:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(rank)):
        raise ConfigError(f"{axes} is not a permutation of 0..{rank - 1}")
    return axes


def inverse_permutation(axes: Sequence[int]) -> tuple:
    inv = [0] * len(axes)
    for i, a in enumerate(axes):
        inv[a] = i
    return tuple(inv)


def permute(t: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """out.shape[i] == t.shape[axes[i]], materialised contiguous."""
    axes = check_permutation(axes, t.ndim)
    return np.ascontiguousarray(np.transpose(t, axes))


def linear_last_axis(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Apply ``weight @ row + bias`` to every last-axis row of ``x``.

    ``weight`` is (n_out, n_in), ``bias`` is (n_out,).
    """
    if weight.ndim != 2:
        raise ShapeError(f"weight must be a matrix, got shape {weight.shape}")
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"last extent {x.shape[-1]} does not match weight n_in={n_in}")
    if bias is not None and bias.shape != (n_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match n_out={n_out}")
    out = x.reshape(-1, n_in) @ weight.T
    if bias is not None:
        out += bias
    return out.reshape(x.shape[:-1] + (n_out,))


def extract_overlapping_patches(image: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    """C x H x W (or batched B x C x H x W) -> H' x W' x C x P (or batched).

    ``out[i, j, c]`` is channel ``c`` of the p x p window with top-left corner
    ``(i * overlap, j * overlap)``, flattened row-major (y, then x).
    """
    batched = image.ndim == 4
    if image.ndim not in (3, 4):
        raise ShapeError(f"expected C x H x W or B x C x H x W, got {image.shape}")
    img = image if batched else image[None]
    _, c, h, w = img.shape
    if (c, h, w) != (geom.channels, geom.height, geom.width):
        raise ShapeError(
            f"image extents {(c, h, w)} do not match geometry "
            f"{(geom.channels, geom.height, geom.width)}"
        )
    out = kernels.extract_patches(np.ascontiguousarray(img), geom.patch, geom.overlap)
    return out if batched else out[0]


def _reduction_axes(axes: Iterable[int], rank: int) -> tuple:
    axes = tuple(sorted({int(a) for a in axes}))
    if not axes:
        raise ShapeError("mean_over_axes needs at least one axis")
    for a in axes:
        if not -rank <= a < rank:
            raise ShapeError(f"axis {a} out of range for rank {rank}")
    return tuple(sorted({a % rank for a in axes}))


def mean_over_axes(t: np.ndarray, axes: Iterable[int], keepdims: bool = False) -> np.ndarray:
    """Arithmetic mean over ``axes``; reduced axes are dropped unless ``keepdims``."""
    axes = _reduction_axes(axes, t.ndim)
    out = t.mean(axis=axes, keepdims=keepdims)
    return as_tensor(out, dtype=t.dtype)


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Result shape for equal-rank operands where mismatched extents must be 1 on one side."""
    if len(a) != len(b):
        raise ShapeError(f"rank mismatch: {a} vs {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"incompatible shapes {a} and {b}")
    return tuple(out)


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    if op not in _ELEMENTWISE:
        raise ConfigError(f"unknown elementwise op {op!r}")
    broadcast_shape(a.shape, b.shape)
    return np.ascontiguousarray(_ELEMENTWISE[op](a, b))


def add(a, b):
    return elementwise(a, b, "add")


def mul(a, b):
    return elementwise(a, b, "mul")


def add_scalar(a: np.ndarray, s: float) -> np.ndarray:
    return a + a.dtype.type(s)


def mul_scalar(a: np.ndarray, s: float) -> np.ndarray:
    return a * a.dtype.type(s)
