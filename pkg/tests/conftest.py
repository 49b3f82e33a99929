import os
from pathlib import Path

import numpy as np
import pytest

from qsaug.data import synthesize_digit_corpus

MNIST_DIR = Path(os.environ.get("QSAUG_MNIST_DIR", "/root/data/mnist"))

_ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'} {name}" + (f" -- {detail}" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def audio_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("audio")
    synthesize_digit_corpus(d, n_per_class=12, n_classes=10, rate=8000, seed=3)
    return d
