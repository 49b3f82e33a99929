import struct
from collections import Counter

import numpy as np
import pytest

from qsaug.augment import build_augmented_dataset
from qsaug.data import (
    MfccParams,
    find_mnist,
    load_audio_dir,
    load_features,
    load_mnist_idx,
    load_wav,
    mel_filterbank,
    mfcc,
    save_features,
    write_idx_images,
    write_idx_labels,
    write_wav,
)
from qsaug.dataset import Dataset, split, take_first, take_per_class
from qsaug.exceptions import ConfigError, FormatError, RangeError
from qsaug.numeric import SeededRng

# -- IDX ------------------------------------------------------------------------


@pytest.fixture
def idx_pair(tmp_path):
    images = np.arange(3 * 28 * 28, dtype=np.int64).reshape(3, 28, 28) % 256
    images[0, 0, 0] = 255
    write_idx_images(tmp_path / "img", images)
    write_idx_labels(tmp_path / "lbl", [7, 0, 9])
    return tmp_path / "img", tmp_path / "lbl", images


def test_idx_header_bytes(idx_pair):
    img, _, _ = idx_pair
    assert img.read_bytes()[:16] == bytes.fromhex("00000803") + struct.pack(">3I", 3, 28, 28)


def test_idx_round_trip(idx_pair):
    img, lbl, images = idx_pair
    ds = load_mnist_idx(img, lbl)
    assert len(ds) == 3 and ds.features[0].shape == (28, 28)
    assert ds.features[0][0, 0] == 1.0
    np.testing.assert_array_equal(np.stack(ds.features), images / 255.0)
    np.testing.assert_array_equal(ds.hard_labels(), [7, 0, 9])


def test_idx_wrong_magic(idx_pair):
    img, lbl, _ = idx_pair
    blob = bytearray(img.read_bytes())
    blob[3] = 0x02
    img.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_mnist_idx(img, lbl)


def test_idx_truncated_and_count_mismatch(idx_pair, tmp_path):
    img, lbl, _ = idx_pair
    write_idx_labels(tmp_path / "two", [1, 2])
    with pytest.raises(FormatError):
        load_mnist_idx(img, tmp_path / "two")
    img.write_bytes(img.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_mnist_idx(img, lbl)


def test_find_mnist_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        find_mnist(tmp_path)


# -- take / split -------------------------------------------------------------------


def _ds(n, n_classes=10):
    return Dataset.from_arrays(np.arange(n, dtype=float).reshape(n, 1, 1), np.arange(n) % n_classes, n_classes)


def test_take_first():
    ds = _ds(20)
    assert take_first(ds, 20).ids == ds.ids
    assert [f[0, 0] for f in take_first(ds, 5).features] == [0, 1, 2, 3, 4]
    with pytest.raises(ConfigError):
        take_first(ds, 0)
    with pytest.raises(RangeError):
        take_first(ds, 21)


def test_take_per_class():
    out = take_per_class(_ds(40, 4), 3)
    assert Counter(out.hard_labels().tolist()) == {0: 3, 1: 3, 2: 3, 3: 3}


def test_split_sizes_and_partition():
    ds = _ds(1775)
    train, test = split(ds, 0.2, seed=0)
    assert len(test) == 355 and len(train) == 1420
    assert sorted(train.ids + test.ids) == sorted(ds.ids)
    assert not set(train.ids) & set(test.ids)


def test_split_deterministic_and_seeded():
    ds = _ds(100)
    a = split(ds, 0.3, 5)
    b = split(ds, 0.3, 5)
    c = split(ds, 0.3, 6)
    assert a[1].ids == b[1].ids and a[1].ids != c[1].ids


@pytest.mark.parametrize("f", [0.0, 1.0, -0.1])
def test_split_fraction_range(f):
    with pytest.raises(ConfigError):
        split(_ds(10), f, 0)


# -- WAV ----------------------------------------------------------------------------


def test_wav_scaling_and_length(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, np.zeros(16000), 16000)
    samples, rate = load_wav(path)
    assert rate == 16000 and samples.shape == (16000,) and np.all(samples == 0)
    write_wav(path, np.array([-1.0, 0.5]), 8000)
    samples, _ = load_wav(path)
    assert samples[0] == -1.0 and samples[1] == 0.5


def test_wav_rejects_stereo_and_garbage(tmp_path):
    import wave

    path = tmp_path / "s.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(b"\0" * 16)
    with pytest.raises(FormatError):
        load_wav(path)
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(FormatError):
        load_wav(path)


# -- MFCC --------------------------------------------------------------------------------


def test_mfcc_zero_input_constant_floor():
    out = mfcc(np.zeros(1600), 16000)
    np.testing.assert_allclose(out[:, 0], np.sqrt(26) * np.log(1e-10), rtol=1e-12)
    np.testing.assert_allclose(out[:, 1:], 0.0, atol=1e-9)


def test_mfcc_frame_count_for_sine():
    n = 8000
    x = np.sin(2 * np.pi * 440 * np.arange(n) / 16000)
    out = mfcc(x, 16000)
    assert out.shape == ((n - 400) // 160 + 1, 13)


def test_mfcc_gain_only_moves_c0():
    gen = np.random.default_rng(0)
    x = np.sin(2 * np.pi * 440 * np.arange(4000) / 16000) + 0.05 * gen.normal(size=4000)
    a, b = mfcc(x, 16000), mfcc(2 * x, 16000)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-8)
    np.testing.assert_allclose(b[:, 0] - a[:, 0], np.sqrt(26) * np.log(4.0), atol=1e-8)


def test_mfcc_too_short():
    with pytest.raises(RangeError):
        mfcc(np.zeros(399), 16000)


def test_mel_filterbank_triangles():
    fb = mel_filterbank(26, 512, 16000)
    assert fb.shape == (26, 257)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) <= 1.0 + 1e-12)
    peaks = fb.argmax(axis=1)
    assert np.all(np.diff(peaks) > 0)


def test_mfcc_params_frames():
    assert MfccParams().frame_samples(16000) == (400, 160)


def test_load_audio_dir(audio_dir):
    ds = load_audio_dir(audio_dir)
    assert len(ds) == 120
    assert all(f.shape[1] == 13 for f in ds.features)
    assert ds.ids == sorted(ds.ids)


# -- SMFX ------------------------------------------------------------------------------------


def test_smfx_round_trip(tmp_path, rng):
    feats = [rng.normal(size=(r, 3)) for r in (2, 5, 1)]
    ds = Dataset(feats, np.eye(4)[[0, 3, 1]], ["a", "béta", "c"])
    path = tmp_path / "x.smfx"
    save_features(ds, path)
    back = load_features(path)
    assert back.ids == ds.ids
    assert all(a.tobytes() == b.tobytes() for a, b in zip(feats, back.features))
    assert back.labels.tobytes() == ds.labels.tobytes()


def test_smfx_with_provenance(tmp_path, rng):
    ds = Dataset.from_arrays(rng.normal(size=(6, 3, 3)), [0, 1, 0, 1, 0, 1], 2)
    aug = build_augmented_dataset(ds, "superpose_sample", [0.2, 0.8], "both", 5, True, SeededRng(0))
    path = tmp_path / "aug.smfx"
    save_features(aug, path)
    back = load_features(path)
    assert back.provenance == aug.provenance
    assert back.labels.tobytes() == aug.labels.tobytes()


def test_smfx_empty(tmp_path):
    path = tmp_path / "e.smfx"
    save_features(Dataset([], np.zeros((0, 10)), []), path)
    assert path.read_bytes() == b"SMFX" + struct.pack("<II", 1, 0)
    assert len(load_features(path)) == 0


def test_smfx_corruption(tmp_path, rng):
    ds = Dataset([rng.normal(size=(4, 4))], np.eye(2)[[1]], ["z"])
    path = tmp_path / "c.smfx"
    save_features(ds, path)
    blob = path.read_bytes()
    for bad in (blob[:-3], b"XMFX" + blob[4:], blob[:4] + struct.pack("<I", 2) + blob[8:]):
        path.write_bytes(bad)
        with pytest.raises(FormatError):
            load_features(path)
