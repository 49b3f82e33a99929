import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qsaug.augment import (
    LAMBDA_GRID,
    DensityMatrixTransformer,
    SuperpositionAugmenter,
    all_pairs,
    build_augmented_dataset,
    density_from_embedding,
    density_matrices,
    framewise_mix,
    mix_labels,
    mixup,
    quantum_mix,
    sample_pairs,
    superpose_density,
    superpose_sample,
)
from qsaug.dataset import Dataset
from qsaug.exceptions import (
    ConfigError,
    DegenerateEmbeddingError,
    DomainError,
    PolicyUnsatisfiableError,
    ShapeError,
)
from qsaug.numeric import SeededRng, mat_square

P0 = np.array([[1.0, 0.0], [0.0, 0.0]])
P1 = np.array([[0.0, 0.0], [0.0, 1.0]])
HALF = np.full((2, 2), 0.5)


# -- density matrices -------------------------------------------------------


@pytest.mark.parametrize(
    "v, expected",
    [
        ([1, 0], [[1, 0], [0, 0]]),
        ([3, 4], [[0.36, 0.48], [0.48, 0.64]]),
        ([1, 1], [[0.5, 0.5], [0.5, 0.5]]),
    ],
)
def test_density_from_embedding_examples(v, expected):
    np.testing.assert_allclose(density_from_embedding(v), expected, atol=1e-15)


def test_density_zero_vector():
    with pytest.raises(DegenerateEmbeddingError):
        density_from_embedding(np.zeros(4))


def test_density_matrices_zero_policy():
    E = np.array([[3.0, 4.0], [0.0, 0.0]])
    with pytest.raises(DegenerateEmbeddingError):
        density_matrices(E)
    D, n_zero = density_matrices(E, on_zero="zero")
    assert n_zero == 1
    np.testing.assert_allclose(D[0], [[0.36, 0.48], [0.48, 0.64]])
    np.testing.assert_array_equal(D[1], 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_density_invariants(v):
    d = density_from_embedding(v)
    assert np.abs(d - d.T).max() < 1e-12
    assert abs(np.trace(d) - 1.0) < 1e-9
    assert np.abs(d @ d - d).max() < 1e-10
    assert np.linalg.eigvalsh(d).min() > -1e-9


# -- superposition rules -----------------------------------------------------


def test_superpose_density_lambda_one_gives_square():
    d = density_from_embedding([1.0, 2.0, 2.0])
    np.testing.assert_allclose(superpose_density(d, density_from_embedding([1, 0, 0]), 1.0), d @ d, atol=1e-15)


def test_superpose_density_orthogonal_projectors():
    np.testing.assert_allclose(superpose_density(P0, P1, 0.5), 0.5 * np.eye(2), atol=1e-15)


def test_superpose_density_identical_states():
    # terms sum to (0.5 + 0.5 + 2 * 0.5) D = 2D
    np.testing.assert_allclose(superpose_density(HALF, HALF, 0.5), np.ones((2, 2)), atol=1e-15)


def test_superpose_density_dim_mismatch():
    with pytest.raises(ShapeError):
        superpose_density(np.eye(2), np.eye(3), 0.5)


def test_superpose_sample_examples():
    np.testing.assert_allclose(superpose_sample([[0, 1], [1, 0]], np.eye(2), 1.0), np.eye(2))
    np.testing.assert_allclose(superpose_sample(np.eye(2), np.eye(2), 0.5), 2 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(superpose_sample(P0, P1, 0.2), np.diag([0.2, 0.8]), atol=1e-15)


def test_superpose_sample_rejects_non_square():
    with pytest.raises(ShapeError):
        superpose_sample(np.ones((2, 3)), np.ones((2, 3)), 0.5)
    with pytest.raises(ShapeError):
        superpose_sample(np.eye(2), np.eye(3), 0.5)


def test_lambda_out_of_range():
    with pytest.raises(DomainError):
        superpose_sample(np.eye(2), np.eye(2), 1.5)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6),
    st.floats(0.0, 1.0),
    st.integers(0, 2**32 - 1),
)
def test_interference_identity(n, lambda_sq, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, n, n))
    lam, mu = np.sqrt(lambda_sq), np.sqrt(1.0 - lambda_sq)
    expected = mat_square(lam * a + mu * b)
    np.testing.assert_allclose(superpose_sample(a, b, lambda_sq), expected, atol=1e-10, rtol=0)
    np.testing.assert_allclose(superpose_density(a, b, lambda_sq), expected, atol=1e-10, rtol=0)


def test_superpose_density_output_symmetric(rng):
    for _ in range(20):
        di, dj = (density_from_embedding(v) for v in rng.normal(size=(2, 8)))
        out = superpose_density(di, dj, 0.8)
        assert np.abs(out - out.T).max() < 1e-12


def test_quantum_mix_examples(rng):
    s = rng.normal(size=(3, 3))
    t = rng.normal(size=(3, 3))
    np.testing.assert_allclose(quantum_mix(s, t, 1.0), s @ s)
    np.testing.assert_allclose(quantum_mix(s, t, 0.0), t @ t)
    np.testing.assert_allclose(quantum_mix(np.eye(2), np.eye(2), 0.25), (0.5 + np.sqrt(0.75)) * np.eye(2))
    assert quantum_mix(np.eye(2), np.eye(2), 0.25)[0, 0] == pytest.approx(1.3660254037844386)


def test_quantum_mix_normalized_variant():
    out = quantum_mix(np.eye(2), np.eye(2), 0.25, normalized=True)
    np.testing.assert_allclose(out, np.eye(2), atol=1e-15)


def test_mixup_examples(rng):
    m = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(mixup(m, rng.normal(size=(3, 4)), 1.0), m)
    np.testing.assert_allclose(mixup(np.eye(2), [[0, 2], [2, 0]], 0.5), [[0.5, 1], [1, 0.5]])
    np.testing.assert_allclose(mixup(m, m, 0.2), m, atol=1e-15)


def test_mixup_shape_mismatch():
    with pytest.raises(ShapeError):
        mixup(np.ones((2, 2)), np.ones((3, 2)), 0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_mixup_complementary_symmetry(lam, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, 4, 5))
    np.testing.assert_allclose(mixup(a, b, lam) + mixup(b, a, lam), a + b, atol=1e-12, rtol=0)


def test_framewise_mix_truncates_and_normalizes():
    a = np.ones((5, 2))
    b = np.zeros((3, 2))
    out = framewise_mix(a, b, "superpose_sample", 0.5)
    assert out.shape == (3, 2)
    np.testing.assert_allclose(out, 0.5)
    np.testing.assert_allclose(framewise_mix(a, b, "mixup", 0.2), 0.2)


def test_framewise_square_overlap_uses_squared_rule(rng):
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(3, 3))
    np.testing.assert_allclose(framewise_mix(a, b, "superpose_sample", 0.2), superpose_sample(a[:3], b, 0.2))


# -- labels -------------------------------------------------------------------


def test_mix_labels_two_class_example():
    expected = [0, 0.2, 0, 0, 0, 0, 0, 0, 0, 0.8]
    np.testing.assert_allclose(mix_labels(1, 9, 0.2, 10), expected)


@pytest.mark.parametrize("w", [0.0, 0.2, 0.37, 1.0])
def test_mix_labels_same_class_is_one_hot(w):
    out = mix_labels(0, 0, w, 10)
    np.testing.assert_allclose(out, np.eye(10)[0], atol=1e-15)


def test_mix_labels_full_weight():
    np.testing.assert_array_equal(mix_labels(3, 7, 1.0, 10), np.eye(10)[3])


@pytest.mark.parametrize("w", [0.0, 0.2, 0.5, 0.8, 1.0])
def test_mix_labels_sums_to_one_exactly(w):
    assert mix_labels(2, 5, w, 10).sum() == 1.0


def test_mix_labels_weight_out_of_range():
    with pytest.raises(DomainError):
        mix_labels(0, 1, 1.2, 10)


# -- pairs ----------------------------------------------------------------------


def test_all_pairs_examples():
    assert all_pairs([0, 0, 1], "intra") == [(0, 1)]
    assert all_pairs([0, 0, 1], "inter") == [(0, 2), (1, 2)]
    assert all_pairs([0, 0, 1], "both") == [(0, 1), (0, 2), (1, 2)]


def test_intra_pairs_unsatisfiable():
    with pytest.raises(PolicyUnsatisfiableError):
        all_pairs([0, 1], "intra")
    with pytest.raises(PolicyUnsatisfiableError):
        sample_pairs([0, 1], "intra", 3, SeededRng(0))


def test_self_pairs_for_singleton_classes():
    assert all_pairs([0, 1], "intra", allow_self_pairs=True) == [(0, 0), (1, 1)]
    pairs = sample_pairs([0, 0, 1], "intra", 50, SeededRng(0), allow_self_pairs=True)
    assert (2, 2) in pairs
    assert all(i != j or i == 2 for i, j in pairs)


def test_sample_pairs_policies_respected():
    labels = SeededRng(1).integers(300, 5)
    for policy in ("intra", "inter", "both"):
        pairs = sample_pairs(labels, policy, 500, SeededRng(2))
        assert len(pairs) == 500
        assert all(i != j for i, j in pairs)
        if policy == "intra":
            assert all(labels[i] == labels[j] for i, j in pairs)
        if policy == "inter":
            assert all(labels[i] != labels[j] for i, j in pairs)


def test_sample_pairs_deterministic():
    labels = [0, 1, 0, 1, 2, 2, 0]
    assert sample_pairs(labels, "both", 40, SeededRng(7)) == sample_pairs(labels, "both", 40, SeededRng(7))


def test_sample_pairs_uniform_over_unordered_pairs():
    # frequency oracle: 3 intra pairs in class 0, 1 in class 1, so P = 1/4 each
    labels = [0, 0, 0, 1, 1]
    pairs = sample_pairs(labels, "intra", 8000, SeededRng(11))
    counts = {}
    for i, j in pairs:
        key = (min(i, j), max(i, j))
        counts[key] = counts.get(key, 0) + 1
    assert set(counts) == {(0, 1), (0, 2), (1, 2), (3, 4)}
    for c in counts.values():
        assert abs(c / 8000 - 0.25) < 0.02


def test_inter_needs_two_classes():
    with pytest.raises(PolicyUnsatisfiableError):
        sample_pairs([3, 3, 3], "inter", 2, SeededRng(0))


# -- dataset assembly ---------------------------------------------------------------


def _toy_dataset(n=12, size=4, n_classes=3, seed=0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, size, size))
    y = np.arange(n) % n_classes
    return Dataset.from_arrays(X, y, n_classes=n_classes)


def test_mixup_lambda_one_copies_first_sample():
    ds = _toy_dataset()
    aug = build_augmented_dataset(ds, "mixup", [1.0], "both", len(ds), False, SeededRng(0))
    assert len(aug) == len(ds)
    for f, y, p in zip(aug.features, aug.labels, aug.provenance):
        np.testing.assert_array_equal(f, ds.features[p.i])
        np.testing.assert_array_equal(y, ds.labels[p.i])


def test_intra_superposition_labels_all_one_hot():
    ds = _toy_dataset(30)
    aug = build_augmented_dataset(ds, "superpose_sample", LAMBDA_GRID, "intra", "all", True, SeededRng(0))
    assert np.all(np.isin(aug.labels, (0.0, 1.0)))
    np.testing.assert_array_equal(aug.labels.sum(axis=1), 1.0)


def test_bookkeeping_two_samples():
    ds = _toy_dataset(2, n_classes=2)
    for method in ("mixup", "quantum_mix", "superpose_sample", "superpose_density"):
        aug = build_augmented_dataset(ds, method, LAMBDA_GRID, "both", "all", True, SeededRng(0))
        assert len(aug) == len(LAMBDA_GRID) * 1 + 2
        assert all(p.i in (0, 1) and p.j in (0, 1) for p in aug.provenance)
        assert [p.lambda_sq for p in aug.provenance[:4]] == list(LAMBDA_GRID)


def test_label_weight_follows_coefficient():
    ds = _toy_dataset(6, n_classes=2)
    aug = build_augmented_dataset(ds, "superpose_sample", [0.2], "inter", 10, False, SeededRng(3))
    for y, p in zip(aug.labels, aug.provenance):
        assert y[int(np.argmax(ds.labels[p.i]))] == pytest.approx(0.2)
        assert y[int(np.argmax(ds.labels[p.j]))] == pytest.approx(0.8)
        np.testing.assert_allclose(
            aug.features[aug.provenance.index(p)], superpose_sample(ds.features[p.i], ds.features[p.j], 0.2)
        )


def test_build_augmented_deterministic():
    ds = _toy_dataset(20)
    a = build_augmented_dataset(ds, "quantum_mix", LAMBDA_GRID, "both", None, True, SeededRng(5))
    b = build_augmented_dataset(ds, "quantum_mix", LAMBDA_GRID, "both", None, True, SeededRng(5))
    assert np.stack(a.features).tobytes() == np.stack(b.features).tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.provenance == b.provenance
    assert len(a) == 4 * 20 + 20


def test_build_rejects_nonsquare_unless_framewise():
    ds = Dataset.from_arrays([np.ones((5, 3)), np.ones((4, 3)) * 2], [0, 0], n_classes=2)
    with pytest.raises(ShapeError):
        build_augmented_dataset(ds, "superpose_sample", [0.5], "intra", 2, False, SeededRng(0))
    aug = build_augmented_dataset(ds, "superpose_sample", [0.5], "intra", 2, False, SeededRng(0), nonsquare="framewise")
    assert all(f.shape == (4, 3) for f in aug.features)
    assert {p.method for p in aug.provenance} == {"superpose_sample:framewise"}


def test_build_config_errors():
    ds = _toy_dataset()
    with pytest.raises(ConfigError):
        build_augmented_dataset(ds, "cutmix", [0.5])
    with pytest.raises(ConfigError):
        build_augmented_dataset(ds, "mixup", [])
    with pytest.raises(ConfigError):
        build_augmented_dataset(ds, "mixup", [0.5], pairs_per_lambda=0)


# -- estimator-style wrappers -----------------------------------------------------------


def test_superposition_augmenter_fit_resample():
    ds = _toy_dataset(9)
    aug = SuperpositionAugmenter(method="superpose_sample", policy="intra", random_state=4)
    X, Y = aug.fit_resample(ds.stacked(), ds.hard_labels())
    assert X.shape == (4 * 9 + 9, 4, 4)
    assert Y.shape == (45, 3)
    assert len(aug.provenance_) == 45
    assert aug.get_params()["method"] == "superpose_sample"


def test_density_matrix_transformer(rng):
    emb = np.abs(rng.normal(size=(5, 6)))
    D = DensityMatrixTransformer().fit_transform(emb)
    assert D.shape == (5, 6, 6)
    np.testing.assert_allclose(np.trace(D, axis1=1, axis2=2), 1.0)
