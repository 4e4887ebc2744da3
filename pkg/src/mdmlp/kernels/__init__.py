"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly; set ``MDMLP_KERNELS=numpy``
to force the pure-numpy path (e.g. for debugging or on platforms without an LLVM
toolchain). Both backends are importable directly as ``numpy_kernels`` and
``numba_kernels`` so tests and benchmarks can compare them.
"""
import logging
import os

from . import _numpy as numpy_kernels

log = logging.getLogger(__name__)

try:
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the default layer probes TBB first and warns on older TBB builds
        numba.config.THREADING_LAYER = "omp"
    from . import _numba as numba_kernels
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_kernels = None

_requested = os.environ.get("MDMLP_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"MDMLP_KERNELS must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and numba_kernels is None:
    log.warning("numba unavailable, falling back to numpy kernels")
    _requested = "numpy"

BACKEND = _requested


def set_num_threads(n: int) -> None:
    """Thread count for parallel numba kernels (results do not depend on it)."""
    if numba_kernels is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))

_impl = numba_kernels if BACKEND == "numba" else numpy_kernels

extract_patches = _impl.extract_patches
fold_patches = _impl.fold_patches
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward

__all__ = [
    "BACKEND",
    "set_num_threads",
    "numpy_kernels",
    "numba_kernels",
    "extract_patches",
    "fold_patches",
    "layernorm_forward",
    "layernorm_backward",
    "gelu_forward",
    "gelu_backward",
]
