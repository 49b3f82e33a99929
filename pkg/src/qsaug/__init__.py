"""Quantum-superposition data augmentation with LSTM and Gaussian-HMM classifiers."""

__version__ = "0.1.0"

from .augment import (  # noqa: E402
    DensityMatrixTransformer,
    SuperpositionAugmenter,
    build_augmented_dataset,
    density_from_embedding,
    density_matrices,
    mix_labels,
    mixup,
    quantum_mix,
    sample_pairs,
    superpose_density,
    superpose_sample,
)
from .dataset import Dataset  # noqa: E402
from .hmm import GaussianHMMClassifier  # noqa: E402
from .lstm import LSTMClassifier  # noqa: E402
from .numeric import SeededRng  # noqa: E402

__all__ = [
    "Dataset",
    "DensityMatrixTransformer",
    "GaussianHMMClassifier",
    "LSTMClassifier",
    "SeededRng",
    "SuperpositionAugmenter",
    "build_augmented_dataset",
    "density_from_embedding",
    "density_matrices",
    "mix_labels",
    "mixup",
    "quantum_mix",
    "sample_pairs",
    "superpose_density",
    "superpose_sample",
]
