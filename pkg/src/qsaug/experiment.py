"""Config-driven experiment runner and report writer.

A run trains one model (LSTM or HMM bank) on a capped training subset,
optionally augmented, and scores it on the untouched test split. Reports mirror
the results-table layout: one summary row per run, per-epoch curves, and a
provenance block.
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .augment import LAMBDA_GRID, POLICIES, build_augmented_dataset, density_matrices
from .data import find_mnist, load_audio_dir, load_features, load_mnist_idx
from .dataset import Dataset, split, take_first, take_per_class
from .exceptions import ConfigError, QsaugError, RangeError
from .hmm import classify, load_bank, save_bank, train_classifier
from .lstm import (
    LstmConfig,
    evaluate,
    extract_embeddings,
    load_checkpoint,
    pad_sequences,
    save_checkpoint,
    train,
)
from .numeric import SeededRng

DATASETS = ("mnist", "audio-dir", "smfx")
RUN_METHODS = ("none", "mixup", "quantum_mix", "superposition", "density")
MODELS = ("lstm", "hmm")
SUMMARY_HEADER = (
    "no",
    "dataset",
    "number_of_samples",
    "augmentation",
    "train_accuracy",
    "test_accuracy",
    "model",
)
CURVES_HEADER = ("run", "stage", "epoch", "train_loss", "train_acc", "val_acc")
REQUIRED = ("dataset", "method", "model", "output_dir")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    t = text.strip().strip("{}[]()")
    return tuple(float(v) for v in t.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in _floats(text))


def _opt_int(text):
    t = text.strip().lower()
    return None if t in ("", "none", "all") else int(t)


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "none", "0") else float(t)


def _opt_str(text):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


@dataclass
class ExperimentConfig:
    dataset: str
    method: str
    model: str
    output_dir: str
    mnist_dir: str | None = None
    audio_dir: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    sample_cap: int | None = None
    per_class_cap: int | None = None
    test_cap: int | None = None
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    standardize: bool | None = None
    lambda_sq: tuple = LAMBDA_GRID
    policy: str | None = None
    include_originals: bool = True
    pairs_per_lambda: int | None = None
    quantum_mix_normalized: bool = False
    epochs: int = 30
    stage1_epochs: int | None = None
    batch_size: int = 16
    learning_rate: float = 2e-3
    hidden_dims: tuple = (64, 64, 64)
    embed_dim: int = 64
    seq_len: int | None = None
    clip_norm: float | None = None
    n_states: int = 5
    max_iters: int = 20
    tol: float = 1e-4
    seed: int = 0
    seed_offset: int = 0
    run_name: str | None = None

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset: unknown kind {self.dataset!r}; expected one of {DATASETS}")
        if self.method not in RUN_METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; expected one of {RUN_METHODS}")
        if self.model not in MODELS:
            raise ConfigError(f"model: unknown model {self.model!r}; expected one of {MODELS}")
        if self.method == "density" and self.model != "lstm":
            raise ConfigError("method: the density pipeline requires model=lstm")
        if self.policy is not None and self.policy not in POLICIES:
            raise ConfigError(f"policy: unknown policy {self.policy!r}; expected one of {POLICIES}")
        need = {"mnist": "mnist_dir", "audio-dir": "audio_dir", "smfx": "train_path"}[self.dataset]
        if getattr(self, need) is None:
            raise ConfigError(f"{need}: required for dataset={self.dataset}")
        if self.sample_cap is not None and self.sample_cap <= 0:
            raise RangeError("sample_cap: must be at least 1")
        if self.per_class_cap is not None and self.per_class_cap <= 0:
            raise ConfigError("per_class_cap: must be at least 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction: must lie in (0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction: must lie in [0, 1)")
        if not self.lambda_sq or any(not 0.0 <= c <= 1.0 for c in self.lambda_sq):
            raise ConfigError("lambda_sq: needs one or more values in [0, 1]")
        if self.standardize is None:
            self.standardize = self.dataset != "mnist"

    @property
    def pair_policy(self) -> str:
        """Explicit policy, else intra-class for HMM superposition and both otherwise."""
        if self.policy is not None:
            return self.policy
        return "intra" if (self.model == "hmm" and self.method == "superposition") else "both"

    @property
    def augment_method(self):
        """Mixing rule behind ``method`` for this model."""
        if self.method == "superposition":
            return "superpose_sample" if self.model == "lstm" else "quantum_mix"
        if self.method == "density":
            return "superpose_density"
        return None if self.method == "none" else self.method

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_PARSERS = {
    "dataset": str.strip,
    "method": str.strip,
    "model": str.strip,
    "output_dir": str.strip,
    "mnist_dir": _opt_str,
    "audio_dir": _opt_str,
    "train_path": _opt_str,
    "test_path": _opt_str,
    "sample_cap": _opt_int,
    "per_class_cap": _opt_int,
    "test_cap": _opt_int,
    "test_fraction": float,
    "val_fraction": float,
    "standardize": _bool,
    "lambda_sq": _floats,
    "policy": _opt_str,
    "include_originals": _bool,
    "pairs_per_lambda": _opt_int,
    "quantum_mix_normalized": _bool,
    "epochs": int,
    "stage1_epochs": _opt_int,
    "batch_size": int,
    "learning_rate": float,
    "hidden_dims": _ints,
    "embed_dim": int,
    "seq_len": _opt_int,
    "clip_norm": _opt_float,
    "n_states": int,
    "max_iters": int,
    "tol": float,
    "seed": int,
    "seed_offset": int,
    "run_name": _opt_str,
}


def parse_config_text(text: str, base_dir=None, **overrides) -> ExperimentConfig:
    """Parse ``key=value`` lines (``#`` starts a comment). Relative paths resolve against ``base_dir``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        if key in values:
            raise ConfigError(f"{key}: given more than once (line {lineno})")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: invalid value {value!r} ({exc})") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if base_dir is not None:
        for key in ("output_dir", "mnist_dir", "audio_dir", "train_path", "test_path"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = str(Path(base_dir) / values[key])
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base_dir=path.parent, **overrides)


# -- reports ----------------------------------------------------------------


@dataclass
class SummaryRow:
    no: int
    dataset: str
    n_samples: int
    augmentation: str
    train_acc: float
    test_acc: float
    model: str


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def extend(self, other: "MetricsReport"):
        self.rows += other.rows
        self.curves += other.curves
        self.provenance += other.provenance


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6f}"


def summary_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in report.rows:
        w.writerow([r.no, r.dataset, r.n_samples, r.augmentation, _fmt(r.train_acc), _fmt(r.test_acc), r.model])
    return buf.getvalue()


def curves_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    for run, stage, epoch, loss, tacc, vacc in report.curves:
        w.writerow([run, stage, epoch, _fmt(loss), _fmt(tacc), _fmt(vacc)])
    return buf.getvalue()


def emit_report(report: MetricsReport, directory) -> dict:
    """Write summary.csv, curves.csv and provenance.txt into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prov_lines = []
    for p in report.provenance:
        prov_lines.append(f"[{p['run']}]")
        prov_lines += [f"{k}={v}" for k, v in p.items() if k != "run"]
        prov_lines.append("")
    out = {
        "summary": directory / "summary.csv",
        "curves": directory / "curves.csv",
        "provenance": directory / "provenance.txt",
    }
    out["summary"].write_text(summary_csv(report))
    out["curves"].write_text(curves_csv(report))
    out["provenance"].write_text("\n".join(prov_lines))
    return out


# -- data preparation -------------------------------------------------------


@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    dataset_label: str


def _standardize(train: Dataset, test: Dataset):
    frames = np.concatenate(train.features)
    mu = frames.mean(axis=0)
    sd = frames.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)

    def apply(ds):
        return Dataset([(f - mu) / sd for f in ds.features], ds.labels, ds.ids)

    return apply(train), apply(test)


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load, split and cap the data. Raises before any training on bad caps."""
    if cfg.dataset == "mnist":
        files = find_mnist(cfg.mnist_dir)
        pool = load_mnist_idx(files["train_images"], files["train_labels"])
        test = load_mnist_idx(files["test_images"], files["test_labels"])
        label = "MNIST"
    elif cfg.dataset == "audio-dir":
        pool, test = split(load_audio_dir(cfg.audio_dir), cfg.test_fraction, cfg.seed)
        label = "Audio Digits"
    else:
        full = load_features(cfg.train_path)
        if cfg.test_path:
            pool, test = full, load_features(cfg.test_path)
        else:
            pool, test = split(full, cfg.test_fraction, cfg.seed)
        label = Path(cfg.train_path).stem
    if cfg.per_class_cap is not None:
        pool = take_per_class(pool, cfg.per_class_cap)
    if cfg.sample_cap is not None:
        pool = take_first(pool, cfg.sample_cap)
    if cfg.test_cap is not None:
        test = take_first(test, cfg.test_cap)
    if cfg.standardize:
        pool, test = _standardize(pool, test)
    return PreparedData(pool, test, label)


def _augment(cfg, ds: Dataset, rng, method=None):
    method = method or cfg.augment_method
    if method is None:
        return ds, []
    aug = build_augmented_dataset(
        ds,
        method,
        cfg.lambda_sq,
        cfg.pair_policy,
        cfg.pairs_per_lambda,
        cfg.include_originals,
        rng,
        normalized=cfg.quantum_mix_normalized,
        nonsquare="framewise",
    )
    tags = sorted({p.method for p in aug.provenance if p.method.endswith(":framewise")})
    return aug, tags


def _lstm_config(cfg, input_dim, n_classes, seq_len, seed, epochs=None):
    return LstmConfig(
        input_dim=input_dim,
        n_classes=n_classes,
        seq_len=seq_len,
        hidden_dims=cfg.hidden_dims,
        embed_dim=cfg.embed_dim,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs if epochs is None else epochs,
        batch_size=cfg.batch_size,
        seed=seed,
        clip_norm=cfg.clip_norm,
    )


def _seq_len(cfg, train: Dataset):
    if cfg.seq_len:
        return cfg.seq_len
    return max(f.shape[0] for f in train.features)


def _density_features(params, X):
    """Density matrices of stage-1 embeddings; dead (all-zero) embeddings become zero matrices."""
    return density_matrices(extract_embeddings(params, X), on_zero="zero")


@dataclass
class RunResult:
    row: SummaryRow
    curves: list
    provenance: dict


def _run(cfg: ExperimentConfig, no: int, run_dir: Path, log=None) -> RunResult:
    t0 = time.perf_counter()
    data = prepare_data(cfg)
    rng = SeededRng(cfg.seed + cfg.seed_offset)
    aug_rng = rng.spawn(101)
    train_seed = rng.spawn(202).seed
    name = cfg.run_name or f"{no:02d}_{cfg.model}_{cfg.method}"
    prov = {
        "run": name,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "seed_offset": cfg.seed_offset,
        "version": __version__,
    }
    curves = []
    n_samples = len(data.train)

    if cfg.model == "hmm":
        train_ds, subs = _augment(cfg, data.train, aug_rng)
        bank = _train_hmm(cfg, train_ds, data.train.n_classes)
        save_bank(run_dir / "model.hmm", bank)
        train_acc = _hmm_accuracy(bank, data.train)
        test_acc = _hmm_accuracy(bank, data.test)
        prov["augmented_size"] = len(train_ds)
        if subs:
            prov["substitution"] = ";".join(subs)
        if train_ds is not data.train:
            prov["one_hot_only"] = bool(np.all(np.isin(train_ds.labels, (0.0, 1.0))))
        prov["checkpoint"] = "model.hmm"
    else:
        if cfg.val_fraction > 0:
            fit_ds, val_ds = split(data.train, cfg.val_fraction, cfg.seed)
        else:
            fit_ds, val_ds = data.train, None
        seq_len = _seq_len(cfg, data.train)
        dim = data.train.features[0].shape[1]
        n_classes = data.train.n_classes
        X_test = pad_sequences(data.test.features, seq_len)
        X_val = pad_sequences(val_ds.features, seq_len) if val_ds is not None and len(val_ds) else None
        Y_val = val_ds.labels if X_val is not None else None

        if cfg.method == "density":
            stage1_cfg = _lstm_config(cfg, dim, n_classes, seq_len, train_seed, cfg.stage1_epochs)
            X_fit = pad_sequences(fit_ds.features, seq_len)
            p1, h1 = train(stage1_cfg, X_fit, fit_ds.labels, X_val, Y_val)
            save_checkpoint(run_dir / "stage1.ckpt", stage1_cfg, p1)
            curves += [(name, 1, *rec) for rec in h1.records()]
            D_fit, zeros = _density_features(p1, X_fit)
            dens = Dataset(list(D_fit), fit_ds.labels, fit_ds.ids)
            train_ds, subs = _augment(cfg, dens, aug_rng, "superpose_density")
            X_test, test_zeros = _density_features(p1, X_test)
            if X_val is not None:
                X_val = _density_features(p1, X_val)[0]
            prov["zero_embeddings"] = f"train={zeros},test={test_zeros}"
            stage_cfg = _lstm_config(cfg, cfg.embed_dim, n_classes, cfg.embed_dim, train_seed + 1)
            X_train = np.stack(train_ds.features)
            prov["stage2_shapes"] = ",".join(sorted({"x".join(map(str, f.shape)) for f in train_ds.features}))
            stage = 2
        else:
            train_ds, subs = _augment(cfg, fit_ds, aug_rng)
            stage_cfg = _lstm_config(cfg, dim, n_classes, seq_len, train_seed)
            X_train = pad_sequences(train_ds.features, seq_len)
            stage = 1
        params, hist = train(stage_cfg, X_train, train_ds.labels, X_val, Y_val, log=log)
        save_checkpoint(run_dir / "model.ckpt", stage_cfg, params)
        curves += [(name, stage, *rec) for rec in hist.records()]
        train_acc = hist.train_acc[-1] if len(hist) else evaluate(params, X_train, train_ds.labels)
        test_acc = evaluate(params, X_test, data.test.labels)
        prov["augmented_size"] = len(train_ds)
        prov["seq_len"] = seq_len
        if subs:
            prov["substitution"] = ";".join(subs)
        prov["checkpoint"] = "model.ckpt"
    prov["augment_method"] = cfg.augment_method or "none"
    prov["policy"] = cfg.pair_policy
    prov["test_size"] = len(data.test)
    prov["wall_time_s"] = f"{time.perf_counter() - t0:.3f}"
    row = SummaryRow(no, data.dataset_label, n_samples, cfg.method, train_acc, test_acc, cfg.model)
    return RunResult(row, curves, prov)


def _train_hmm(cfg, ds: Dataset, n_classes):
    y = ds.hard_labels()
    classes = np.array([c for c in range(n_classes) if np.any(y == c)])
    return train_classifier(ds.features, y, cfg.n_states, cfg.max_iters, cfg.tol, classes=classes)


def _hmm_accuracy(bank, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    y = ds.hard_labels()
    pred = np.array([classify(bank, f)[0] for f in ds.features])
    return float(np.mean(pred == y))


def run_dir_for(cfg: ExperimentConfig, no: int = 1) -> Path:
    name = cfg.run_name or f"{no:02d}_{cfg.model}_{cfg.method}"
    return Path(cfg.output_dir) / "runs" / name


def run_experiment(cfg: ExperimentConfig, no: int = 1, log=None) -> MetricsReport:
    """Execute one configured run; model files land in ``<output_dir>/runs/<name>/``.

    Outputs are staged in a temporary directory and moved into place only on
    success, so a failed run leaves nothing behind.
    """
    final = run_dir_for(cfg, no)
    final.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=final.parent))
    try:
        result = _run(cfg, no, staging, log=log)
    except QsaugError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        raise type(exc)(f"run {final.name}: {exc}") from exc
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(staging, final)
    return MetricsReport([result.row], result.curves, [result.provenance])


def compare(configs, methods=None, models=None, log=None) -> MetricsReport:
    """Run every config x method x model combination sequentially.

    Run ``k`` (0-based) keeps the base seed for data splits and adds ``k`` to
    ``seed_offset``, which shifts model initialization and augmentation.
    """
    report = MetricsReport()
    k = 0
    for base in configs:
        for model in models or (base.model,):
            for method in methods or (base.method,):
                if method == "density" and model != "lstm":
                    continue
                cfg = replace(base, model=model, method=method, run_name=None, seed_offset=base.seed_offset + k)
                report.extend(run_experiment(cfg, no=k + 1, log=log))
                k += 1
    return report


def evaluate_run(cfg: ExperimentConfig, run_dir=None, no: int = 1) -> float:
    """Reload a finished run's model and score it on the configured test split."""
    run_dir = Path(run_dir) if run_dir else run_dir_for(cfg, no)
    data = prepare_data(cfg)
    if cfg.model == "hmm":
        return _hmm_accuracy(load_bank(run_dir / "model.hmm"), data.test)
    mcfg, params = load_checkpoint(run_dir / "model.ckpt")
    if cfg.method == "density":
        s1cfg, p1 = load_checkpoint(run_dir / "stage1.ckpt")
        X = _density_features(p1, pad_sequences(data.test.features, s1cfg.seq_len))[0]
    else:
        X = pad_sequences(data.test.features, mcfg.seq_len)
    return evaluate(params, X, data.test.labels)
