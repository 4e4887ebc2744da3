"""Command line: ``mdmlp inspect|train|eval|visualize``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric failure during training, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .attn import export_heatmap
from .checkpoint import load_checkpoint
from .config import RunConfig, parse_config, shipped_configs
from .data import DatasetSplit, load_cifar10, load_cifar100, synthetic_dataset
from .errors import CheckpointError, ConfigError, DataError, MdmlpError, NumericError
from .model import attention_field, build_model, count_macs, count_params
from .train import evaluate, train

log = logging.getLogger("mdmlp")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def load_data(run: RunConfig) -> tuple[DatasetSplit, DatasetSplit]:
    if run.dataset == "synthetic":
        g = run.model.geom
        args = (run.model.num_classes, g.height, g.width, g.channels, run.synthetic_square)
        train_split = synthetic_dataset(run.train.seed, run.synthetic_train, *args, name="train")
        test_split = synthetic_dataset(run.train.seed + 1, run.synthetic_test, *args, name="test")
    elif run.dataset in ("cifar10", "cifar100"):
        if not run.data_root:
            raise DataError("no dataset root: pass --data DIR or set MDMLP_DATA")
        loader = load_cifar10 if run.dataset == "cifar10" else load_cifar100
        train_split, test_split = loader(run.data_root)
    else:
        raise DataError(f"ingestion for {run.dataset!r} is not implemented (only its geometry is supported)")
    if run.train_limit:
        train_split = train_split.subset(run.train_limit)
    if run.test_limit:
        test_split = test_split.subset(run.test_limit)
    return train_split, test_split


def _model(run: RunConfig, checkpoint: str | None = None):
    model = build_model(run.model, run.train.seed, np.dtype(run.dtype))
    if checkpoint:
        if not Path(checkpoint).is_file():
            raise CheckpointError(f"checkpoint not found: {checkpoint}")
        load_checkpoint(checkpoint, model)
    return model


def inspect_report(run: RunConfig) -> str:
    cfg = run.model
    g = cfg.effective_geom
    params = count_params(cfg)
    macs = count_macs(cfg)
    lines = [
        f"params={params} ({params / 1e6:.2f}M) macs={macs:.2e} ({macs / 1e9:.2f}G, 1 MAC = 1 FLOP)",
        f"geometry: H={g.height} W={g.width} C={g.channels} p={g.patch} O={g.overlap} "
        f"-> H'={g.grid_h} W'={g.grid_w} P={g.patch_pixels}",
        f"activation: (B, {g.grid_h}, {g.grid_w}, {g.channels}, {cfg.dim})",
        f"blocks: {cfg.depth} x [{', '.join(cfg.mixing_axes)}] expansion={cfg.expansion}"
        + (" + attn_tool" if cfg.attn_tool else ""),
    ]
    return "\n".join(lines)


def cmd_inspect(run: RunConfig, args) -> int:
    print(inspect_report(run))
    return EXIT_OK


def cmd_train(run: RunConfig, args) -> int:
    train_split, test_split = load_data(run)
    model = _model(run, args.checkpoint)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(run.describe() + "\n")
    state = train(model, train_split, run.train, test=test_split, out_dir=out)
    final_train = evaluate(model, train_split)
    print(f"final train_acc={final_train:.4f} best={state.best_metric:.4f} steps={state.step}")
    print(f"wrote {out / 'last.ckpt'}, {out / 'best.ckpt'}, {out / 'metrics.log'}")
    return EXIT_OK


def cmd_eval(run: RunConfig, args) -> int:
    _, test_split = load_data(run)
    if not args.checkpoint:
        log.warning("no --checkpoint given; evaluating freshly initialised weights")
    model = _model(run, args.checkpoint)
    acc = evaluate(model, test_split)
    print(f"test_acc={acc:.4f} n={len(test_split)}")
    return EXIT_OK


def _indices(spec: str, n: int) -> list[int]:
    if ":" in spec:
        a, b = spec.split(":", 1)
        idx = list(range(int(a or 0), int(b) if b else n))
    else:
        idx = [int(t) for t in spec.split(",")]
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise ConfigError(f"image index {bad[0]} outside [0, {n})")
    return idx


def cmd_visualize(run: RunConfig, args) -> int:
    if not run.model.attn_tool:
        raise ConfigError("visualize needs a model built with model.attn_tool = true")
    _, test_split = load_data(run)
    model = _model(run, args.checkpoint)
    out = Path(run.out_dir) / "heatmaps"
    out.mkdir(parents=True, exist_ok=True)
    idx = _indices(args.images, len(test_split))
    fields = attention_field(model, test_split.images[idx])
    for i, v in zip(idx, fields):
        path = out / f"attn_{i:05d}.pgm"
        export_heatmap(v, path)
        print(f"{path} max|V-1|={np.abs(v - 1.0).max():.6g}")
    return EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "train": cmd_train, "eval": cmd_eval, "visualize": cmd_visualize}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdmlp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help=f"config file or shipped name ({', '.join(shipped_configs())})")
    common.add_argument("--data", help="dataset root (default: $MDMLP_DATA)")
    common.add_argument("--out", help="output directory (default: runs/<run.name>)")
    common.add_argument("--seed", type=int)
    common.add_argument("--checkpoint")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--overlap", type=int, help="shorthand for --override model.overlap=N")
    common.add_argument("--threads", type=int, help="BLAS/numba threads; 1 is the deterministic reference mode")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "visualize":
            p.add_argument("--images", default="0:8", help="indices 'a:b' or 'i,j,k' into the test split")
    return parser


def _overrides(args) -> list[str]:
    items = list(args.override)
    for flag, key in (("data", "data.root"), ("out", "run.out"), ("seed", "train.seed"),
                      ("overlap", "model.overlap"), ("threads", "run.threads")):
        val = getattr(args, flag)
        if val is not None:
            items.append(f"{key}={val}")
    return items


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
        format="%(message)s",
    )
    try:
        run = parse_config(args.config, _overrides(args))
        kernels.set_num_threads(run.threads)
        with threadpool_limits(limits=run.threads):
            return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MdmlpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
