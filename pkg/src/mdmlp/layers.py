"""Trainable layer primitives: linear, layer norm, GELU, dropout and the 2-layer MLP."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Variable
from .errors import ConfigError, ShapeError

LN_EPS = 1e-5


class Module:
    """Container with named trainable parameters and child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Variable]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, value: np.ndarray) -> Variable:
        v = Variable(value, requires_grad=True, name=name)
        self._params[name] = v
        return v

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Variable]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> "OrderedDict[str, Variable]":
        return OrderedDict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.value.size for _, p in self.named_parameters())


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``y = x @ weight.T + bias`` on the last axis; weight is (n_out, n_in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, zero: bool = False):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"Linear extents must be >= 1, got {n_in}->{n_out}")
        self.n_in, self.n_out = n_in, n_out
        if zero:
            w = np.zeros((n_out, n_in), dtype=dtype)
            b = np.zeros(n_out, dtype=dtype)
        else:
            w = uniform_init(rng, (n_out, n_in), n_in, dtype)
            b = uniform_init(rng, (n_out,), n_in, dtype)
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", b)

    def __call__(self, x) -> Variable:
        return ag.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, n: int, dtype=np.float32, eps: float = LN_EPS):
        super().__init__()
        self.n = n
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(n, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(n, dtype=dtype))

    def __call__(self, x) -> Variable:
        return layernorm(x, self)


class Mlp(Module):
    """fc1 (n -> hidden), GELU, dropout, fc2 (hidden -> n). Residual is the caller's job."""

    def __init__(
        self,
        n: int,
        hidden: int,
        rng: np.random.Generator,
        dtype=np.float32,
        dropout: float = 0.0,
        zero_fc2: bool = False,
    ):
        super().__init__()
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {dropout}")
        self.n, self.hidden, self.dropout = n, hidden, dropout
        self.fc1 = self.add_child("fc1", Linear(n, hidden, rng, dtype))
        self.fc2 = self.add_child("fc2", Linear(hidden, n, rng, dtype, zero=zero_fc2))

    def __call__(self, x, train: bool = False, rng=None) -> Variable:
        return mlp_forward(x, self, train=train, rng=rng)


def layernorm(x, unit: LayerNorm) -> Variable:
    return ag.layernorm(x, unit.gamma, unit.beta, unit.eps)


def gelu(x) -> Variable:
    return ag.gelu(x)


def dropout(x, rate: float, train: bool, rng=None) -> Variable:
    return ag.dropout(x, rate, train, rng)


def mlp_forward(x, unit: Mlp, train: bool = False, rng=None) -> Variable:
    x = ag._wrap(x)
    if x.shape[-1] != unit.n:
        raise ShapeError(f"MLP expects last extent {unit.n}, got {x.shape[-1]}")
    h = gelu(unit.fc1(x))
    h = dropout(h, unit.dropout, train, rng)
    return unit.fc2(h)
