"""Define-by-run reverse-mode differentiation.

Ops evaluate eagerly and, inside a :class:`Tape` context, append a record
holding the saved intermediates needed by their backward rule. A tape supports
exactly one backward sweep; a second call raises :class:`UsageError`.

    with Tape() as tape:
        loss = ag.sum(ag.mul(w, w))
    grads = backward(loss, {"w": w})
"""
from __future__ import annotations

import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, ShapeError, UsageError

_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


class Variable:
    """A tensor value plus its position in the active tape."""

    __slots__ = ("value", "requires_grad", "node", "grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.value = T.as_tensor(value, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Variable{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered operation log for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self.singular: list[str] = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def note_singular(self, reason: str):
        """Mark the pass as non-smooth (finite-difference checks are meaningless)."""
        self.singular.append(reason)


class _NoGrad:
    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def no_grad() -> _NoGrad:
    """Context in which ops compute values only and record nothing."""
    return _NoGrad()


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def _wrap(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _record(op: str, inputs: Sequence[Variable], value: np.ndarray, backward_fn: Callable) -> Variable:
    needs = any(v.requires_grad for v in inputs)
    out = Variable.__new__(Variable)
    out.value = value
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = False
    if not needs:
        return out
    s = _stack()
    if not s:
        raise UsageError(f"op {op!r} applied to trainable inputs outside a Tape or no_grad context")
    tape = s[-1]
    if tape is None:
        return out
    if tape.consumed:
        raise UsageError("tape already consumed by backward")
    out.requires_grad = True
    out.node = tape
    tape.records.append(_Record(op, tuple(inputs), out, backward_fn))
    return out


def current_tape_singular(reason: str):
    tape = active_tape()
    if tape is not None:
        tape.note_singular(reason)


def backward(loss: Variable, params: Mapping[str, Variable] | None = None) -> dict:
    """Reverse sweep from a scalar ``loss``.

    Sets ``.grad`` on every participating leaf. Returns ``{name: grad}`` for
    ``params`` (zeros for leaves the loss does not depend on); without
    ``params`` the map is keyed by leaf ``name`` or ``id``.
    """
    if any(e != 1 for e in loss.shape):
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.node
    if tape is None:
        raise UsageError("loss was not recorded on a tape")
    if tape.consumed:
        raise UsageError("backward already ran on this tape; re-run the forward pass")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Variable] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward_fn(g)
        for v, gi in zip(rec.inputs, in_grads):
            if gi is None or not v.requires_grad:
                continue
            if v.node is None:
                leaves[id(v)] = v
            key = id(v)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.records.clear()

    for key, v in leaves.items():
        v.grad = grads[key]
    if params is None:
        return {(v.name or key): grads[key] for key, v in leaves.items()}
    out = {}
    for name, p in params.items():
        g = grads.get(id(p)) if id(p) in leaves else None
        out[name] = g if g is not None else np.zeros_like(p.value)
        p.grad = out[name]
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    out = T.add(a.value, b.value)
    return _record("add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    out = T.elementwise(a.value, b.value, "sub")
    return _record("sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    out = T.mul(av, bv)

    def bw(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", (a, b), out, bw)


def add_scalar(a, s: float) -> Variable:
    a = _wrap(a)
    return _record("add_scalar", (a,), T.add_scalar(a.value, s), lambda g: (g,))


def mul_scalar(a, s: float) -> Variable:
    a = _wrap(a)
    return _record("mul_scalar", (a,), T.mul_scalar(a.value, s), lambda g: (g * g.dtype.type(s),))


# -- shape ops ---------------------------------------------------------------

def permute(x, axes: Sequence[int]) -> Variable:
    x = _wrap(x)
    axes = T.check_permutation(axes, x.value.ndim)
    inv = T.inverse_permutation(axes)
    return _record("permute", (x,), T.permute(x.value, axes), lambda g: (T.permute(g, inv),))


def swap_axes(x, i: int, j: int) -> Variable:
    """Permutation exchanging two axes (its own inverse)."""
    x = _wrap(x)
    axes = list(range(x.value.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return permute(x, axes)


def reshape(x, shape) -> Variable:
    x = _wrap(x)
    old = x.shape
    return _record("reshape", (x,), x.value.reshape(shape), lambda g: (g.reshape(old),))


# -- reductions --------------------------------------------------------------

def mean(x, axes, keepdims: bool = False) -> Variable:
    x = _wrap(x)
    axes = T._reduction_axes(axes, x.value.ndim)
    out = T.mean_over_axes(x.value, axes, keepdims=keepdims)
    count = int(np.prod([x.shape[a] for a in axes]))
    kept = tuple(1 if i in axes else e for i, e in enumerate(x.shape))

    def bw(g):
        g = g.reshape(kept) / g.dtype.type(count)
        return (np.ascontiguousarray(np.broadcast_to(g, x.shape)),)

    return _record("mean", (x,), out, bw)


def sum(x) -> Variable:  # noqa: A001 - mirrors numpy naming
    x = _wrap(x)
    out = np.asarray(x.value.sum(), dtype=x.dtype).reshape(1)
    return _record("sum", (x,), out, lambda g: (np.full(x.shape, g.reshape(()), dtype=x.dtype),))


# -- linear algebra ----------------------------------------------------------

def linear(x, weight, bias=None) -> Variable:
    """Last-axis affine map ``x @ weight.T + bias``."""
    x, weight = _wrap(x), _wrap(weight)
    inputs = (x, weight) if bias is None else (x, weight, _wrap(bias))
    bv = None if bias is None else inputs[2].value
    xv, wv = x.value, weight.value
    out = T.linear_last_axis(xv, wv, bv)
    n_out, n_in = wv.shape

    def bw(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ wv).reshape(xv.shape) if x.requires_grad else None
        gw = g2.T @ xv.reshape(-1, n_in) if weight.requires_grad else None
        res = [gx, gw]
        if bias is not None:
            res.append(g2.sum(axis=0) if inputs[2].requires_grad else None)
        return tuple(res)

    return _record("linear", inputs, out, bw)


# -- nonlinearities and normalisation ---------------------------------------

def gelu(x) -> Variable:
    """Tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = _wrap(x)
    xv = x.value
    return _record("gelu", (x,), kernels.gelu_forward(xv), lambda g: (kernels.gelu_backward(xv, g),))


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Variable:
    """Normalise over the last axis (population variance), then scale and shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match last extent {n}")
    xv = np.ascontiguousarray(x.value).reshape(-1, n)
    gv = gamma.value.astype(xv.dtype, copy=False)
    bv = beta.value.astype(xv.dtype, copy=False)
    y, xhat, rstd = kernels.layernorm_forward(xv, gv, bv, xv.dtype.type(eps))
    if np.any(xv.max(axis=1) == xv.min(axis=1)) and any(v.requires_grad for v in (x, gamma, beta)):
        current_tape_singular("layernorm: zero-variance slice")

    def bw(g):
        gx, ggamma, gbeta = kernels.layernorm_backward(np.ascontiguousarray(g).reshape(-1, n), xhat, rstd, gv)
        return gx.reshape(x.shape), ggamma, gbeta

    return _record("layernorm", (x, gamma, beta), y.reshape(x.shape), bw)


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None) -> Variable:
    """Inverted dropout. Identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = _wrap(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep.astype(x.dtype) * scale
    if x.requires_grad:
        current_tape_singular("dropout with nonzero rate")
    return _record("dropout", (x,), x.value * mask, lambda g: (g * mask,))


# -- patches -----------------------------------------------------------------

def extract_patches(images, geom: T.PatchGeometry) -> Variable:
    """B x C x H x W -> B x H' x W' x C x P."""
    images = _wrap(images)
    if images.value.ndim != 4:
        raise ShapeError(f"expected B x C x H x W, got {images.shape}")
    out = T.extract_overlapping_patches(images.value, geom)

    def bw(g):
        return (kernels.fold_patches(np.ascontiguousarray(g), geom.height, geom.width, geom.patch, geom.overlap),)

    return _record("extract_patches", (images,), out, bw)


# -- loss --------------------------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> Variable:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("label outside [0, num_classes)")
    b = logits.shape[0]
    lsm = log_softmax(logits.value)
    loss = -lsm[np.arange(b), labels].mean()
    out = np.asarray(loss, dtype=logits.dtype).reshape(1)

    def bw(g):
        p = np.exp(lsm)
        p[np.arange(b), labels] -= 1.0
        return ((p * (g.reshape(()) / b)).astype(logits.dtype, copy=False),)

    return _record("cross_entropy", (logits,), out, bw)
