"""Compare numba and numpy kernel backends at CIFAR-config shapes.

    python benchmarks/bench_kernels.py [--batch 32] [--repeat 5] [--step]

``--step`` additionally times one full forward+backward training step under
each backend by re-running this script with MDMLP_KERNELS set.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from mdmlp.kernels import numba_kernels, numpy_kernels


def best_of(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(batch):
    rng = np.random.default_rng(0)
    img = rng.random((batch, 3, 32, 32), dtype=np.float32)
    patches = rng.random((batch, 15, 15, 3, 16), dtype=np.float32)
    act = rng.standard_normal((batch * 15 * 15 * 3, 64), dtype=np.float32)
    hidden = rng.standard_normal(batch * 15 * 15 * 3 * 64 * 4, dtype=np.float32)
    gamma = np.ones(64, np.float32)
    beta = np.zeros(64, np.float32)
    eps = np.float32(1e-5)

    def cases(k):
        _, xhat, rstd = k.layernorm_forward(act, gamma, beta, eps)
        return {
            "extract_patches": lambda: k.extract_patches(img, 4, 2),
            "fold_patches": lambda: k.fold_patches(patches, 32, 32, 4, 2),
            "layernorm_forward": lambda: k.layernorm_forward(act, gamma, beta, eps),
            "layernorm_backward": lambda: k.layernorm_backward(act, xhat, rstd, gamma),
            "gelu_forward": lambda: k.gelu_forward(hidden),
            "gelu_backward": lambda: k.gelu_backward(hidden, hidden),
        }

    return cases


def train_step_time(batch, repeat):
    from mdmlp import autograd as ag
    from mdmlp.model import ModelConfig, build_model, forward
    from mdmlp.tensor import PatchGeometry

    cfg = ModelConfig(PatchGeometry(32, 32, 3, 4, 2), attn_tool=True)
    model = build_model(cfg, 0)
    params = model.parameters()
    rng = np.random.default_rng(0)
    x = rng.random((batch, 3, 32, 32), dtype=np.float32)
    y = np.arange(batch) % 10

    def step():
        with ag.Tape():
            loss = ag.cross_entropy(forward(model, x, train=True), y)
        ag.backward(loss, params)

    return best_of(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--step", action="store_true")
    ap.add_argument("--step-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.step_only:
        print(json.dumps(train_step_time(args.batch, args.repeat)))
        return

    cases = kernel_cases(args.batch)
    np_cases, nb_cases = cases(numpy_kernels), cases(numba_kernels)
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name in np_cases:
        t_np = best_of(np_cases[name], args.repeat)
        t_nb = best_of(nb_cases[name], args.repeat)
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>10.2f}")

    if args.step:
        res = {}
        for backend in ("numpy", "numba"):
            env = dict(os.environ, MDMLP_KERNELS=backend)
            cmd = [sys.executable, __file__, "--step-only", "--batch", str(args.batch), "--repeat", "2"]
            out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
            res[backend] = float(out.stdout.strip().splitlines()[-1])
        print(f"train step (B={args.batch}): numpy {res['numpy']:.3f}s  numba {res['numba']:.3f}s  "
              f"speedup {res['numpy'] / res['numba']:.2f}")


if __name__ == "__main__":
    main()
