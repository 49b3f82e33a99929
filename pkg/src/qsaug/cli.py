"""Command-line entry point: ``qsaug {augment,train,eval,compare,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .augment import build_augmented_dataset, density_matrices
from .data import save_features, synthesize_digit_corpus
from .dataset import Dataset
from .exceptions import ConfigError, QsaugError
from .experiment import compare, emit_report, evaluate_run, parse_config, prepare_data, run_dir_for, run_experiment
from .lstm import extract_embeddings, load_checkpoint, pad_sequences
from .numeric import SeededRng

log = logging.getLogger("qsaug")


def _build_parser():
    parser = argparse.ArgumentParser(prog="qsaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="per-epoch progress on stderr")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("augment", help="build an augmented training set and save it as SMFX")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output .smfx path (a .prov sidecar is written next to it)")
    p.add_argument("--stage1", help="LSTM checkpoint whose embeddings feed method=density")

    p = sub.add_parser("train", help="run one configured experiment and write its report")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir")

    p = sub.add_parser("eval", help="re-score a finished run's checkpoint on the test split")
    p.add_argument("config")
    p.add_argument("--run-dir", help="run directory (default: the one train writes)")

    p = sub.add_parser("compare", help="run a config x method x model matrix, one merged summary")
    p.add_argument("configs", nargs="+")
    p.add_argument("--methods", help="comma-separated methods, e.g. none,mixup,superposition")
    p.add_argument("--models", help="comma-separated models, e.g. lstm,hmm")
    p.add_argument("--output-dir", help="override output_dir of every config")

    p = sub.add_parser("synth", help="write a synthetic <class>_<id>.wav stand-in corpus")
    p.add_argument("directory")
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--rate", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _epoch_logger(verbose):
    if not verbose:
        return None

    def _log(epoch, hist):
        log.info(
            "epoch %d loss %.4f train %.2f%% val %.2f%%",
            epoch,
            hist.train_loss[-1],
            100 * hist.train_acc[-1],
            100 * hist.val_acc[-1],
        )

    return _log


def _print_rows(report):
    for r in report.rows:
        print(
            f"{r.no:>3} {r.dataset:<14} n={r.n_samples:<6} {r.model:<5} {r.augmentation:<14}"
            f" train {100 * r.train_acc:6.2f}%  test {100 * r.test_acc:6.2f}%"
        )


def _cmd_augment(args):
    cfg = parse_config(args.config)
    data = prepare_data(cfg)
    rng = SeededRng(cfg.seed + cfg.seed_offset).spawn(101)
    source = data.train
    if cfg.augment_method is None:
        raise ConfigError("method: augment needs a mixing method, not 'none'")
    if cfg.method == "density":
        if not args.stage1:
            raise ConfigError("method=density needs --stage1 CHECKPOINT to produce embeddings")
        s1cfg, params = load_checkpoint(args.stage1)
        emb = extract_embeddings(params, pad_sequences(source.features, s1cfg.seq_len))
        dens, n_zero = density_matrices(emb, on_zero="zero")
        if n_zero:
            log.warning("%d all-zero embeddings mapped to zero density matrices", n_zero)
        source = Dataset(list(dens), source.labels, source.ids)
    aug = build_augmented_dataset(
        source,
        cfg.augment_method,
        cfg.lambda_sq,
        cfg.pair_policy,
        cfg.pairs_per_lambda,
        cfg.include_originals,
        rng,
        normalized=cfg.quantum_mix_normalized,
        nonsquare="framewise",
    )
    save_features(aug, args.out)
    print(f"wrote {len(aug)} samples to {args.out}")


def _cmd_train(args):
    cfg = parse_config(args.config, output_dir=args.output_dir)
    report = run_experiment(cfg, log=_epoch_logger(args.verbose))
    emit_report(report, cfg.output_dir)
    _print_rows(report)
    print(f"report and model in {cfg.output_dir}")


def _cmd_eval(args):
    cfg = parse_config(args.config)
    acc = evaluate_run(cfg, args.run_dir)
    where = args.run_dir or run_dir_for(cfg)
    print(f"{where}: test accuracy {100 * acc:.2f}% ({acc:.6f})")


def _cmd_compare(args):
    configs = [parse_config(c, output_dir=args.output_dir) for c in args.configs]
    methods = args.methods.split(",") if args.methods else None
    models = args.models.split(",") if args.models else None
    report = compare(configs, methods, models, log=_epoch_logger(args.verbose))
    emit_report(report, configs[0].output_dir)
    _print_rows(report)


def _cmd_synth(args):
    paths = synthesize_digit_corpus(args.directory, args.per_class, args.classes, args.rate, args.seed)
    print(f"wrote {len(paths)} files to {args.directory}")


_COMMANDS = {
    "augment": _cmd_augment,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"qsaug: configuration error: {exc}", file=sys.stderr)
        return 2
    except (QsaugError, OSError) as exc:
        print(f"qsaug: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
