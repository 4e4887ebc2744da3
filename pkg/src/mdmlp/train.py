"""SGD + momentum training with linear warmup and cosine decay (per epoch)."""
from __future__ import annotations

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import save_checkpoint
from .data import DatasetSplit, batches
from .errors import ConfigError, NumericError, UsageError
from .model import MdMlpModel, forward, predict

log = logging.getLogger(__name__)

cross_entropy = ag.cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 200
    warmup_epochs: int = 10
    seed: int = 0
    hflip: bool = True
    color_jitter: bool = True
    eval_interval: int = 1
    max_steps: int = 0  # 0 = no cap

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} / {self.epochs}")
        for name in ("base_lr", "momentum", "weight_decay"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.eval_interval < 1 or self.max_steps < 0:
            raise ConfigError("eval_interval must be >= 1 and max_steps >= 0")

    @property
    def augment_flags(self) -> tuple:
        return tuple(f for f, on in (("hflip", self.hflip), ("color_jitter", self.color_jitter)) if on)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    momentum: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    best_metric: float = -1.0
    log: list = field(default_factory=list)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise UsageError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    t = (epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def sgd_step(params, grads, state: TrainState, lr: float, cfg: TrainConfig) -> None:
    """In place: g' = g + wd * w;  m = mu * m + g';  w = w - lr * m.

    All gradients are checked before anything is touched, so a non-finite
    gradient leaves parameters and buffers unchanged.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = np.abs(g[np.isfinite(g)]).max(initial=0.0)
            raise NumericError(f"non-finite gradient for {name!r} (max finite |g| = {bad:.3e})")
    for name, p in params.items():
        w = p.value
        dt = w.dtype.type
        g = grads[name]
        if cfg.weight_decay:
            g = g + dt(cfg.weight_decay) * w
        m = state.momentum.get(name)
        m = g if m is None else dt(cfg.momentum) * m + g
        state.momentum[name] = m
        p.value = w - dt(lr) * m


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def evaluate(model: MdMlpModel, split: DatasetSplit, batch_size: int = 256) -> float:
    return accuracy(predict(model, split.images, batch_size), split.labels)


def format_log_line(epoch, lr, loss, acc, test_acc=None) -> str:
    line = f"epoch={epoch} lr={lr:.6g} train_loss={loss:.6f} train_acc={acc:.4f}"
    if test_acc is not None:
        line += f" test_acc={test_acc:.4f}"
    return line


def train(
    model: MdMlpModel,
    data: DatasetSplit,
    cfg: TrainConfig,
    test: DatasetSplit | None = None,
    out_dir: str | os.PathLike | None = None,
    state: TrainState | None = None,
) -> TrainState:
    """Run the full schedule. Writes ``metrics.log``, ``last.ckpt`` and ``best.ckpt``
    under ``out_dir`` when given. The best checkpoint tracks test accuracy, or
    train accuracy without a test split."""
    g = model.geom
    if data.images.shape[1:] != (g.channels, g.height, g.width):
        raise ConfigError(f"data extents {data.images.shape[1:]} do not match model geometry")
    if data.num_classes > model.cfg.num_classes:
        raise ConfigError(f"data has {data.num_classes} classes, model only {model.cfg.num_classes}")
    state = state or TrainState()
    params = model.parameters()
    rng = np.random.default_rng([cfg.seed, 7])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.log"
        log_path.write_text("")

    for epoch in range(state.epoch, cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        loss_sum, correct, seen = 0.0, 0, 0
        for x, y in batches(data, cfg.batch_size, cfg.seed, epoch, flags=cfg.augment_flags):
            if cfg.max_steps and state.step >= cfg.max_steps:
                break
            with ag.Tape():
                logits = forward(model, x, train=True, rng=rng)
                loss = cross_entropy(logits, y)
            grads = ag.backward(loss, params)
            sgd_step(params, grads, state, lr, cfg)
            state.step += 1
            loss_sum += float(loss.value[0]) * len(y)
            correct += int(np.sum(np.argmax(logits.value, axis=1) == y))
            seen += len(y)
        if seen == 0:
            break
        state.epoch = epoch + 1
        test_acc = None
        if test is not None and (state.epoch % cfg.eval_interval == 0 or state.epoch == cfg.epochs):
            test_acc = evaluate(model, test)
        line = format_log_line(epoch, lr, loss_sum / seen, correct / seen, test_acc)
        state.log.append(line)
        log.info(line)
        metric = test_acc if test_acc is not None else correct / seen
        improved = metric > state.best_metric
        if improved:
            state.best_metric = metric
        if out is not None:
            with open(log_path, "a") as fh:
                fh.write(line + "\n")
            save_checkpoint(out / "last.ckpt", model, state)
            if improved:
                save_checkpoint(out / "best.ckpt", model, state)
    return state
