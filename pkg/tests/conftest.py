import os
from pathlib import Path

import numpy as np
import pytest

from lsom.dataset_io import MNIST_FILES, LabeledDataset

ROOT = Path(__file__).resolve().parent.parent


def _has_mnist(path) -> bool:
    if not path:
        return False
    d = Path(path)
    return all((d / name).exists() or (d / (name + ".gz")).exists()
               for pair in MNIST_FILES.values() for name in pair)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """Directory with MNIST IDX files.

    Uses LSOM_DATASET_DIR when it holds the full files, otherwise writes the
    real 5000-digit sample shipped with mlxtend (4000 train / 1000 test).
    """
    env = os.environ.get("LSOM_DATASET_DIR")
    if _has_mnist(env):
        return Path(env)
    pytest.importorskip("mlxtend")
    import sys
    sys.path.insert(0, str(ROOT / "tools"))
    from mnist_subset import build

    d = tmp_path_factory.mktemp("mnist")
    build(d)
    return d


def two_blob_dataset(n_per_class=20, seed=0, side=28):
    """Images near 0.1 labelled 0 and images near 0.9 labelled 1."""
    rng = np.random.default_rng(seed)
    lo = np.clip(0.1 + 0.02 * rng.standard_normal((n_per_class, side, side)), 0, 1)
    hi = np.clip(0.9 + 0.02 * rng.standard_normal((n_per_class, side, side)), 0, 1)
    images = np.concatenate([lo, hi])
    labels = np.array([0] * n_per_class + [1] * n_per_class)
    perm = rng.permutation(len(labels))
    return LabeledDataset(images[perm], labels[perm], "blobs")


@pytest.fixture
def blobs():
    return two_blob_dataset()


# -- acceptance summary -------------------------------------------------------------------

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
