"""MDMLP: overlapped patch embedding, axis-mixing blocks and a pooled linear head.

Activations inside the trunk are stored as (B, H', W', C, D). Each MdLayer
normalises over D, swaps its axis to the last position, runs the two-layer MLP
branch along it, swaps back and adds the result to its input.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .attn import AttnTool, attn_forward, attn_mac_count, attn_param_count
from .errors import ConfigError, ShapeError
from .layers import LayerNorm, Linear, Mlp, Module, layernorm, mlp_forward
from .tensor import PatchGeometry

# axis name -> position in the (B, H', W', C, D) activation
AXES = {"height": 1, "width": 2, "channel": 3, "token": 4}
FULL_ORDER = ("height", "width", "channel", "token")
MIXER_ORDER = ("channel", "token")


@dataclass(frozen=True)
class ModelConfig:
    geom: PatchGeometry
    dim: int = 64
    depth: int = 8
    expansion: int = 4
    num_classes: int = 10
    dropout: float = 0.0
    disable_overlap: bool = False
    disable_mdblock: bool = False
    attn_tool: bool = False

    def __post_init__(self):
        for name in ("dim", "expansion", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.depth < 0:
            raise ConfigError(f"ModelConfig.depth must be >= 0, got {self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout}")
        # validates the forced-stride geometry eagerly
        self.effective_geom

    @property
    def effective_geom(self) -> PatchGeometry:
        if self.disable_overlap:
            return self.geom.with_overlap(self.geom.patch)
        return self.geom

    @property
    def mixing_axes(self) -> tuple:
        return MIXER_ORDER if self.disable_mdblock else FULL_ORDER

    def axis_extents(self) -> dict:
        g = self.effective_geom
        return {"height": g.grid_h, "width": g.grid_w, "channel": g.channels, "token": self.dim}

    def activation_shape(self, batch: int = 1) -> tuple:
        g = self.effective_geom
        return (batch, g.grid_h, g.grid_w, g.channels, self.dim)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


class MdLayer(Module):
    def __init__(self, axis: str, n: int, dim: int, expansion: int, rng, dtype, dropout: float):
        super().__init__()
        if axis not in AXES:
            raise ConfigError(f"unknown mixing axis {axis!r}")
        self.axis = axis
        self.n = n
        self.norm = self.add_child("norm", LayerNorm(dim, dtype))
        self.mlp = self.add_child("mlp", Mlp(n, expansion * n, rng, dtype, dropout))

    def __call__(self, x, train=False, rng=None):
        return md_layer_forward(x, self, train, rng)


def md_layer_forward(x, layer: MdLayer, train: bool = False, rng=None):
    x = ag._wrap(x)
    pos = AXES[layer.axis]
    if x.value.ndim != 5 or x.shape[pos] != layer.n:
        raise ShapeError(f"{layer.axis} layer expects extent {layer.n} on axis {pos}, got {x.shape}")
    h = layernorm(x, layer.norm)
    if pos != 4:
        h = ag.swap_axes(h, pos, 4)
    h = mlp_forward(h, layer.mlp, train, rng)
    if pos != 4:
        h = ag.swap_axes(h, pos, 4)
    return ag.add(x, h)


class MdBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        extents = cfg.axis_extents()
        self.layers = []
        for axis in cfg.mixing_axes:
            layer = MdLayer(axis, extents[axis], cfg.dim, cfg.expansion, rng, dtype, cfg.dropout)
            self.layers.append(self.add_child(axis, layer))

    def __call__(self, x, train=False, rng=None):
        for layer in self.layers:
            x = md_layer_forward(x, layer, train, rng)
        return x


class MdMlpModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        g = cfg.effective_geom
        self.geom = g
        self.attn = None
        if cfg.attn_tool:
            self.attn = self.add_child("attn", AttnTool(g.channels, g.height, g.width, rng, dtype, cfg.dropout))
        self.embed = self.add_child("embed", Linear(g.patch_pixels, cfg.dim, rng, dtype))
        self.blocks = [self.add_child(f"blocks.{i}", MdBlock(cfg, rng, dtype)) for i in range(cfg.depth)]
        self.norm = self.add_child("norm", LayerNorm(cfg.dim, dtype))
        self.head = self.add_child("head", Linear(cfg.dim, cfg.num_classes, rng, dtype))

    def embed_images(self, images, train: bool = False, rng=None):
        """Optional attention prefix, then patch split and the shared P -> D embedding."""
        x = ag._wrap(images)
        g = self.geom
        if x.value.ndim != 4 or x.shape[1:] != (g.channels, g.height, g.width):
            raise ShapeError(f"images must be (B, {g.channels}, {g.height}, {g.width}), got {x.shape}")
        if x.dtype != self.dtype:
            x = ag.Variable(x.value.astype(self.dtype), requires_grad=x.requires_grad)
        if self.attn is not None:
            x, _ = attn_forward(x, self.attn, train, rng)
        return self.embed(ag.extract_patches(x, g))

    def trunk(self, h, train: bool = False, rng=None):
        for block in self.blocks:
            h = block(h, train, rng)
        return h

    def __call__(self, images, train: bool = False, rng=None):
        return forward(self, images, train, rng)


def forward(model: MdMlpModel, images, train: bool = False, rng=None):
    """Logits (B, num_classes) for images (B, C, H, W)."""
    h = model.trunk(model.embed_images(images, train, rng), train, rng)
    h = layernorm(h, model.norm)
    pooled = ag.mean(h, axes=(1, 2, 3))
    return model.head(pooled)


def build_model(cfg: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float32) -> MdMlpModel:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return MdMlpModel(cfg, rng, dtype)


def predict(model: MdMlpModel, images, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits without recording a tape."""
    images = np.asarray(images)
    out = []
    with ag.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(forward(model, images[i:i + batch_size]).value)
    return np.concatenate(out, axis=0)


def attention_field(model: MdMlpModel, images) -> np.ndarray:
    """Eval-mode field V (B, 1, H, W) for a batch of images."""
    if model.attn is None:
        raise ConfigError("model was built without attn_tool")
    with ag.no_grad():
        x = np.asarray(images, dtype=model.dtype)
        _, v = attn_forward(x, model.attn)
    return v.value


def _mlp_params(n: int, f: int) -> int:
    return 2 * f * n * n + f * n + n


def block_param_count(cfg: ModelConfig) -> int:
    ext = cfg.axis_extents()
    return sum(_mlp_params(ext[a], cfg.expansion) + 2 * cfg.dim for a in cfg.mixing_axes)


def count_params(cfg: ModelConfig) -> int:
    """Closed-form trainable scalar count."""
    g = cfg.effective_geom
    d, k = cfg.dim, cfg.num_classes
    total = g.patch_pixels * d + d
    total += cfg.depth * block_param_count(cfg)
    total += 2 * d
    total += d * k + k
    if cfg.attn_tool:
        total += attn_param_count(g.channels, g.height, g.width)
    return total


def count_macs(cfg: ModelConfig) -> int:
    """Multiply-accumulates for one image forward pass (linear maps only)."""
    g = cfg.effective_geom
    ext = cfg.axis_extents()
    elems = g.grid_h * g.grid_w * g.channels * cfg.dim
    total = g.grid_h * g.grid_w * g.channels * g.patch_pixels * cfg.dim
    total += cfg.depth * sum(2 * cfg.expansion * ext[a] * elems for a in cfg.mixing_axes)
    total += cfg.dim * cfg.num_classes
    if cfg.attn_tool:
        total += attn_mac_count(g.channels, g.height, g.width)
    return total
