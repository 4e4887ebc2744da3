import os

import numpy as np
import pytest

from mdmlp.model import ModelConfig
from mdmlp.tensor import PatchGeometry

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Gradient-check configuration: 8x8 input, p=4, O=2, D=8, depth 2, f=2, 3 classes."""
    return ModelConfig(PatchGeometry(8, 8, 3, 4, 2), dim=8, depth=2, expansion=2, num_classes=3)


@pytest.fixture(scope="session")
def cifar_root():
    root = os.environ.get("MDMLP_DATA", "")
    for cand in (root, os.path.join(root, "cifar-10-batches-bin")):
        if cand and os.path.isfile(os.path.join(cand, "test_batch.bin")):
            return cand
    return None


def record_acceptance(key, ok, detail=""):
    ACCEPTANCE_RESULTS[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        status = {True: "PASS", False: "FAIL", None: "BLOCKED"}[ok]
        terminalreporter.write_line(f"[{status}] {key}: {detail}")
