"""MDAttnTool: a per-pixel attention field over the raw image, plus PGM export.

Width-mixing MLP (with residual), transpose, height-mixing MLP (with
residual), transpose back, then the channel-mean of the learned change is
offset by one to give the field ``V`` (shape B x 1 x H x W). The output is
``V * x``. Both branch ``fc2`` layers start at zero, so ``V == 1`` and the
output equals the input exactly until the first update.
"""
from __future__ import annotations

import os

import numpy as np

from . import autograd as ag
from .errors import ShapeError
from .layers import LayerNorm, Mlp, Module, layernorm, mlp_forward

HIDDEN_UNITS = 8


class AttnTool(Module):
    def __init__(self, channels: int, height: int, width: int, rng, dtype=np.float32, dropout: float = 0.0):
        super().__init__()
        self.channels, self.height, self.width = channels, height, width
        self.norm_w = self.add_child("norm_w", LayerNorm(width, dtype))
        self.mlp_w = self.add_child("mlp_w", Mlp(width, HIDDEN_UNITS, rng, dtype, dropout, zero_fc2=True))
        self.norm_h = self.add_child("norm_h", LayerNorm(height, dtype))
        self.mlp_h = self.add_child("mlp_h", Mlp(height, HIDDEN_UNITS, rng, dtype, dropout, zero_fc2=True))

    def __call__(self, x, train: bool = False, rng=None):
        return attn_forward(x, self, train=train, rng=rng)


def attn_forward(x, module: AttnTool, train: bool = False, rng=None):
    """Returns ``(y, V)`` for a C x H x W image or a B x C x H x W batch."""
    x = ag._wrap(x)
    single = x.value.ndim == 3
    if single:
        x = ag._wrap(x.value[None])
    if x.value.ndim != 4 or x.shape[1:] != (module.channels, module.height, module.width):
        raise ShapeError(
            f"attn tool expects (B, {module.channels}, {module.height}, {module.width}), got {x.shape}"
        )
    y1 = ag.add(x, mlp_forward(layernorm(x, module.norm_w), module.mlp_w, train, rng))
    y1t = ag.swap_axes(y1, 2, 3)
    y2t = ag.add(y1t, mlp_forward(layernorm(y1t, module.norm_h), module.mlp_h, train, rng))
    y2 = ag.swap_axes(y2t, 2, 3)
    v = ag.add_scalar(ag.mean(ag.sub(y2, x), axes=(1,), keepdims=True), 1.0)
    y = ag.mul(v, x)
    if single:
        y = ag.reshape(y, y.shape[1:])
        v = ag.reshape(v, v.shape[1:])
    return y, v


def attn_param_count(channels: int, height: int, width: int) -> int:
    m = HIDDEN_UNITS
    return sum(2 * m * n + m + n + 2 * n for n in (width, height))


def attn_mac_count(channels: int, height: int, width: int) -> int:
    m = HIDDEN_UNITS
    return channels * height * width * 2 * m * 2


def heatmap_bytes(v: np.ndarray) -> np.ndarray:
    """|V| min-max rescaled to uint8, rounding half away from zero; constant field -> zeros."""
    a = np.abs(np.asarray(v, dtype=np.float64))
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"attention field must be H x W or 1 x H x W, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention field contains non-finite values")
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.floor(255.0 * (a - lo) / (hi - lo) + 0.5).astype(np.uint8)


def export_heatmap(v: np.ndarray, path: str | os.PathLike) -> None:
    """Write ``|V|`` as a binary PGM (P5, maxval 255)."""
    px = heatmap_bytes(v)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Minimal P5 reader for files written by :func:`export_heatmap`."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"{path}: unsupported maxval {parts[2]!r}")
    body = parts[3]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
