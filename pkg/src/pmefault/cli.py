"""Command-line front end: ``pmefault {synth,extract,crossval,classify,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Every failure prints one line starting with ``error:``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, PmeError
from .features import read_features_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config(p):
    p.add_argument("--config", help="YAML pipeline configuration")
    p.add_argument("--seed", type=int, help="override the configuration seed")


def build_parser():
    parser = _Parser(prog="pmefault",
                     description="Pseudomodal-energy features and neuro-fuzzy fault classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic FRF dataset")
    _add_config(p)
    p.add_argument("out_dir")
    p.add_argument("--n-cylinders", type=int)
    p.add_argument("--repeats", type=int, help="measurements per cylinder")
    p.add_argument("--snr", type=float, help="noise SNR in dB (inf disables noise)")

    p = sub.add_parser("extract", help="compute the feature matrix of a dataset")
    _add_config(p)
    p.add_argument("dataset_dir")
    p.add_argument("out_csv")
    p.add_argument("--bands", choices=("auto", "reference"), help="band preset")

    p = sub.add_parser("crossval", help="select, train and cross-validate the classifier")
    _add_config(p)
    p.add_argument("features_csv")
    p.add_argument("out_dir")
    p.add_argument("--folds", type=int, help="k-fold instead of leave-one-out")
    p.add_argument("--n-rules", type=int, help="fix the rule count (skips selection)")
    p.add_argument("--threshold-mode", choices=("optimized", "fixed"))
    p.add_argument("--pca-components", type=int)
    p.add_argument("--paper-mode", action="store_true", default=None,
                   help="optimize thresholds on pooled held-out scores")

    p = sub.add_parser("classify", help="label instances with a trained model")
    _add_config(p)
    p.add_argument("input", help="features CSV or dataset directory")
    p.add_argument("--model", required=True, help="ts_model.json")
    p.add_argument("--thresholds", help="thresholds.json (default 0.5 for every output)")
    p.add_argument("--pca", help="pca.json; omit when inputs are already reduced")

    p = sub.add_parser("report", help="print the summary stored in a report.json")
    p.add_argument("report", help="report.json or the crossval output directory")
    return parser


def _config(args, **overrides):
    config = load_config(args.config)
    return config.with_overrides(seed=getattr(args, "seed", None), **overrides)


def cmd_synth(args):
    config = _config(args)
    pop = config.population.to_dict()
    pop.pop("seed")
    for key, value in (("n_cylinders", args.n_cylinders), ("repeats_per_cylinder", args.repeats),
                       ("noise_snr_db", args.snr)):
        if value is not None:
            pop[key] = value
    config = config.with_overrides(population=pop)
    n = pipeline.synthesize(config, args.out_dir)
    print(f"wrote {n} instances to {args.out_dir}")


def cmd_extract(args):
    config = _config(args, bands=args.bands)
    table = pipeline.extract(args.dataset_dir, config)
    pipeline.write_features_atomic(args.out_csv, table)
    print(f"wrote {table.n_instances} x {table.X.shape[1]} features to {args.out_csv}")


def cmd_crossval(args):
    cv = {"kfold": args.folds} if args.folds is not None else None
    config = _config(args, cv=cv, n_rules=args.n_rules, threshold_mode=args.threshold_mode,
                     pca_components=args.pca_components, paper_mode=args.paper_mode)
    table = read_features_csv(args.features_csv)
    pipeline.crossval(table, config, args.out_dir, features_path=args.features_csv)
    sys.stdout.write((Path(args.out_dir) / "report.txt").read_text())


def cmd_classify(args):
    config = _config(args)
    clf = pipeline.load_classifier(args.model, args.thresholds, args.pca)
    table = pipeline.load_inputs(args.input, config)
    labels, scores = pipeline.classify_features(clf, table.X)
    for i, (bits, s) in enumerate(zip(labels, scores)):
        label = "".join(str(int(b)) for b in bits)
        print(f"{i} {label} " + " ".join(f"{v:.6f}" for v in s))


def cmd_report(args):
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    sys.stdout.write(pipeline.render_report(pipeline.read_json(path)))


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "crossval": cmd_crossval,
            "classify": cmd_classify, "report": cmd_report}


def _fail(message, code):
    print(f"error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(exc, 1)
    except PmeError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(f"{exc.filename or ''}: {exc.strerror or exc}", 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
