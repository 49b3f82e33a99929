"""Dataset ingestion: MNIST IDX files, PCM16 WAV audio, MFCC features, SMFX containers.

SMFX layout (all little-endian)::

    magic   4 bytes  b"SMFX"
    version <I       1
    count   <I
    per sample:
        <I id length, id bytes (utf-8)
        <I rows, <I cols, <I label length
        rows*cols <f8 features (row-major), label length <f8 label

A provenance sidecar ``<path>.prov`` holds one ``method,i,j,lambda_sq`` line
per sample of an augmented dataset.
"""
from __future__ import annotations

import os
import re
import struct
import wave
from pathlib import Path

import numpy as np
import scipy.fft

from .augment import AugmentedDataset, Provenance
from .dataset import Dataset, one_hot, split, take_first, take_per_class  # noqa: F401
from .exceptions import FormatError, RangeError
from .numeric import SeededRng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
SMFX_MAGIC = b"SMFX"
SMFX_VERSION = 1


# -- MNIST IDX --------------------------------------------------------------


def _read_idx(path, expected_magic, ndim):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack_from(">I", blob, 0)[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    offset = 4 + 4 * ndim
    size = int(np.prod(dims))
    if len(blob) - offset != size:
        raise FormatError(f"{path}: payload has {len(blob) - offset} bytes, header implies {size}")
    return np.frombuffer(blob, dtype=np.uint8, offset=offset).reshape(dims)


def load_mnist_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Parse an IDX image/label file pair; pixels are scaled to [0, 1] by /255."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= n_classes:
        raise FormatError(f"label {labels.max()} out of range for {n_classes} classes")
    X = images.astype(np.float64) / 255.0
    ids = [f"{Path(images_path).name}:{i}" for i in range(len(X))]
    return Dataset(list(X), one_hot(labels, n_classes), ids)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGE_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def find_mnist(directory):
    """Locate the four standard MNIST files (optionally ``.gz``-free) in ``directory``."""
    d = Path(directory)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    out = {}
    for key, stem in names.items():
        for candidate in (stem, stem.replace("-idx", ".idx")):
            if (d / candidate).exists():
                out[key] = d / candidate
                break
        else:
            raise FileNotFoundError(f"{stem} not found in {d}")
    return out


# -- WAV ---------------------------------------------------------------------


def load_wav(path):
    """Read a PCM16 mono WAV file. Returns ``(samples in [-1, 1), sample_rate)``."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: {wf.getnchannels()} channels, only mono is supported")
            if wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: only uncompressed 16-bit PCM is supported")
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(frames) % 2:
        raise FormatError(f"{path}: odd payload length")
    pcm = np.frombuffer(frames, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def write_wav(path, samples, rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(rate))
        wf.writeframes(pcm.tobytes())


# -- MFCC --------------------------------------------------------------------


class MfccParams:
    """Front-end settings; frame and hop are given in milliseconds."""

    def __init__(self, frame_ms=25.0, hop_ms=10.0, n_mels=26, n_coeffs=13, log_floor=1e-10):
        if n_coeffs > n_mels:
            raise RangeError("n_coeffs must not exceed n_mels")
        if frame_ms <= hop_ms:
            raise RangeError("frame length must exceed the hop")
        self.frame_ms = frame_ms
        self.hop_ms = hop_ms
        self.n_mels = n_mels
        self.n_coeffs = n_coeffs
        self.log_floor = log_floor

    def frame_samples(self, rate):
        return int(round(rate * self.frame_ms / 1000.0)), int(round(rate * self.hop_ms / 1000.0))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size, rate):
    """Triangular filters on the HTK mel scale, shape ``(n_mels, fft_size // 2 + 1)``."""
    n_bins = fft_size // 2 + 1
    freqs = np.linspace(0.0, rate / 2.0, n_bins)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def mfcc(samples, rate, params: MfccParams | None = None) -> np.ndarray:
    """MFCC matrix of shape ``(T, n_coeffs)``, ``T = (N - frame) // hop + 1``.

    Hamming window, power spectrum, mel filterbank, floored natural log,
    orthonormal DCT-II.
    """
    params = params or MfccParams()
    x = np.asarray(samples, dtype=np.float64).ravel()
    frame, hop = params.frame_samples(rate)
    if x.size < frame:
        raise RangeError(f"{x.size} samples is shorter than one {frame}-sample frame")
    n_frames = (x.size - frame) // hop + 1
    fft_size = 1 << (frame - 1).bit_length()
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(frame)
    power = np.abs(np.fft.rfft(frames, n=fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(params.n_mels, fft_size, rate).T
    log_e = np.log(np.maximum(energies, params.log_floor))
    return scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, : params.n_coeffs]


_WAV_NAME = re.compile(r"^(\d+)_(.+)\.wav$", re.IGNORECASE)


def load_audio_dir(directory, params: MfccParams | None = None, n_classes: int = 10) -> Dataset:
    """MFCC dataset from ``<class>_<id>.wav`` files, sorted by file name."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if _WAV_NAME.match(p.name))
    if not files:
        raise FormatError(f"no <class>_<id>.wav files in {directory}")
    feats, labels, ids = [], [], []
    for p in files:
        cls = int(_WAV_NAME.match(p.name).group(1))
        if cls >= n_classes:
            raise FormatError(f"{p.name}: class {cls} out of range for {n_classes} classes")
        samples, rate = load_wav(p)
        feats.append(mfcc(samples, rate, params))
        labels.append(cls)
        ids.append(p.stem)
    return Dataset(feats, one_hot(labels, n_classes), ids)


def synthesize_digit_corpus(directory, n_per_class=50, n_classes=10, rate=8000, seed=0, noise=0.2):
    """Write a stand-in spoken-digit corpus of class-specific tone sequences.

    Each class is a three-segment melody with its own pitch contour; duration,
    pitch, amplitude and additive noise vary per file. Returns the file paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(seed)
    paths = []
    base = 300.0
    for n in range(n_per_class):
        for c in range(n_classes):
            # semitone-spaced contours; detune spans about two semitones so neighbours overlap
            steps = np.array([c, (3 * c + 4) % n_classes, (7 * c + 2) % n_classes])
            contour = base * 2.0 ** (steps / 12.0)
            u = rng.uniform(6)
            dur = 0.35 + 0.25 * u[0]
            detune = 2.0 ** ((u[1] - 0.5) * 2.0 / 12.0)
            amp = 0.3 + 0.4 * u[2]
            n_samp = int(dur * rate)
            t = np.arange(n_samp) / rate
            seg = np.minimum((3 * np.arange(n_samp)) // n_samp, 2)
            freq = contour[seg] * detune
            phase = 2.0 * np.pi * np.cumsum(freq) / rate
            env = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
            sig = amp * env * (np.sin(phase) + 0.3 * np.sin(2 * phase + u[3]))
            sig = sig + noise * rng.normal(n_samp)
            path = directory / f"{c}_{n:04d}.wav"
            write_wav(path, np.clip(sig, -1.0, 1.0), rate)
            paths.append(path)
    return paths


# -- SMFX --------------------------------------------------------------------


def save_features(dataset: Dataset, path) -> None:
    """Write ``dataset`` as SMFX; augmented datasets also get a ``.prov`` sidecar."""
    parts = [SMFX_MAGIC, struct.pack("<II", SMFX_VERSION, len(dataset))]
    for f, y, ident in zip(dataset.features, dataset.labels, dataset.ids):
        raw_id = ident.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_id)))
        parts.append(raw_id)
        parts.append(struct.pack("<III", f.shape[0], f.shape[1], y.size))
        parts.append(np.ascontiguousarray(f, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(y, dtype="<f8").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)
    if isinstance(dataset, AugmentedDataset):
        with open(f"{path}.prov", "w") as fh:
            for p in dataset.provenance:
                fh.write(f"{p.method},{p.i},{p.j},{p.lambda_sq!r}\n")


def load_features(path) -> Dataset:
    """Read an SMFX file; a ``.prov`` sidecar, if present, yields an :class:`AugmentedDataset`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SMFX_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != SMFX_VERSION:
            raise FormatError(f"{path}: unsupported SMFX version {version}")
        off = 12
        feats, labels, ids = [], [], []
        n_label = None
        for _ in range(count):
            (id_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            if off + id_len > len(blob):
                raise FormatError(f"{path}: truncated id")
            ids.append(blob[off:off + id_len].decode("utf-8"))
            off += id_len
            rows, cols, ylen = struct.unpack_from("<III", blob, off)
            off += 12
            if n_label is not None and ylen != n_label:
                raise FormatError(f"{path}: inconsistent label lengths")
            n_label = ylen
            need = 8 * (rows * cols + ylen)
            if off + need > len(blob):
                raise FormatError(f"{path}: truncated payload")
            feats.append(np.frombuffer(blob, "<f8", rows * cols, off).reshape(rows, cols).copy())
            off += 8 * rows * cols
            labels.append(np.frombuffer(blob, "<f8", ylen, off).copy())
            off += 8 * ylen
    except struct.error as exc:
        raise FormatError(f"{path}: truncated file") from exc
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    Y = np.array(labels).reshape(count, n_label or 0)
    prov_path = Path(f"{path}.prov")
    if prov_path.exists():
        prov = []
        for line in prov_path.read_text().splitlines():
            method, i, j, lam = line.split(",")
            prov.append(Provenance(method, int(i), int(j), float(lam)))
        return AugmentedDataset(feats, Y, ids, prov)
    return Dataset(feats, Y, ids)
