"""Write IDX files for the 5000-image MNIST sample bundled with mlxtend.

The sample holds 500 training-set images per digit.  Per digit, 400 go to
the ``train`` split and 100 to the held-out ``test`` split, so both splits
are real MNIST digits and disjoint.

    python tools/mnist_subset.py data/mnist-subset
"""
import sys

import numpy as np


def build(directory, per_class_test=100, seed=0):
    from mlxtend.data import mnist_data

    from lsom.dataset_io import write_mnist

    X, y = mnist_data()
    X = X.reshape(-1, 28, 28).astype(np.uint8)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(y == digit))
        test_idx.append(idx[:per_class_test])
        train_idx.append(idx[per_class_test:])
    for split, parts in (("train", train_idx), ("test", test_idx)):
        idx = rng.permutation(np.concatenate(parts))
        write_mnist(directory, split, X[idx], y[idx])


if __name__ == "__main__":
    build(sys.argv[1] if len(sys.argv) > 1 else "data/mnist-subset")
