"""In-memory labelled dataset container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, RangeError, ShapeError
from .numeric import SeededRng


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ShapeError(f"class index out of range for {n_classes} classes")
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


@dataclass
class Dataset:
    """Samples as a list of 2-D float64 matrices plus an ``(N, C)`` soft-label array.

    Sequences may have different lengths (audio); images are all 28x28.
    """

    features: list
    labels: np.ndarray
    ids: list = field(default=None)

    def __post_init__(self):
        self.features = [np.asarray(f, dtype=np.float64) for f in self.features]
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.ndim != 2:
            raise ShapeError(f"labels must be (N, C), got {self.labels.shape}")
        if len(self.features) != self.labels.shape[0]:
            raise ShapeError(
                f"{len(self.features)} feature matrices but {self.labels.shape[0]} labels"
            )
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.features))]
        self.ids = [str(i) for i in self.ids]
        if len(self.ids) != len(self.features):
            raise ShapeError("ids and features differ in length")
        for f in self.features:
            if f.ndim != 2:
                raise ShapeError(f"each sample must be a 2-D matrix, got shape {f.shape}")

    @classmethod
    def from_arrays(cls, X, y, n_classes=None, ids=None) -> "Dataset":
        """Build from a sample sequence and hard (1-D) or soft (2-D) labels."""
        y = np.asarray(y)
        if y.ndim == 1:
            if n_classes is None:
                n_classes = int(y.max()) + 1 if y.size else 1
            y = one_hot(y, n_classes)
        return cls(list(X), y, ids)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def hard_labels(self) -> np.ndarray:
        # np.argmax breaks ties toward the lowest index
        return np.argmax(self.labels, axis=1)

    def subset(self, indices) -> "Dataset":
        indices = [int(i) for i in indices]
        return Dataset(
            [self.features[i] for i in indices],
            self.labels[indices].reshape(len(indices), self.n_classes),
            [self.ids[i] for i in indices],
        )

    def stacked(self) -> np.ndarray:
        shapes = {f.shape for f in self.features}
        if len(shapes) != 1:
            raise ShapeError(f"samples have differing shapes {sorted(shapes)[:3]}...")
        return np.stack(self.features)


def take_first(dataset: Dataset, n: int) -> Dataset:
    """The first ``n`` samples in file order."""
    n = int(n)
    if n <= 0:
        raise ConfigError("an empty training set is not allowed (n must be >= 1)")
    if n > len(dataset):
        raise RangeError(f"requested {n} samples but the dataset has {len(dataset)}")
    return dataset.subset(range(n))


def take_per_class(dataset: Dataset, n_per_class: int) -> Dataset:
    """The first ``n_per_class`` samples of each class, in file order."""
    y = dataset.hard_labels()
    keep = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(y == c)
        if len(idx) == 0:
            continue
        if len(idx) < n_per_class:
            raise RangeError(f"class {c} has {len(idx)} samples, fewer than {n_per_class}")
        keep.extend(idx[:n_per_class].tolist())
    if not keep:
        raise ConfigError("per-class cap selected no samples")
    return dataset.subset(sorted(keep))


def split(dataset: Dataset, test_fraction: float, seed: int):
    """Seeded shuffle, then the first ``round(n * test_fraction)`` go to test.

    ``round`` is Python's half-to-even rounding. Both parts keep file order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    perm = SeededRng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)
