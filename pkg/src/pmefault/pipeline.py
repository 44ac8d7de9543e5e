"""End-to-end steps behind the command-line tool.

Each step reads files, writes files, and is deterministic given its inputs
and configuration. JSON is written with sorted keys and shortest round-trip
float formatting so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig, dump_config
from .errors import DataError, UndefinedRateError
from .evaluation import (FIXED_THRESHOLDS, N_OUTPUTS, Classifier, CVReport, FaultLabel,
                         ThresholdSet, fit_classifier, kfold_cv, loo_cv, threshold_candidates,
                         threshold_curve)
from .features import (FeatureTable, PCAModel, extract_features, feature_names, reference_bands,
                       pca_fit, read_features_csv, write_features_csv)
from .modal import ModalModel, band_indices
from .neurofuzzy import TSModel, fold_seed, select_rule_count
from .synthdata import (generate_baseline, generate_population, nominal_bands, read_dataset,
                        read_manifest, write_dataset)

OUTPUT_NAMES = "xyz"


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    try:
        return json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- synth / extract -------------------------------------------------------

def synthesize(config: PipelineConfig, out_dir):
    """Generate the configured population into ``out_dir``; returns the instance count."""
    pop_cfg = config.population
    baseline = generate_baseline(pop_cfg)
    instances = generate_population(pop_cfg, baseline)
    try:
        write_dataset(out_dir, pop_cfg, instances, baseline)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out_dir}: {exc.strerror or exc}") from exc
    return len(instances)


def resolve_bands(config: PipelineConfig, manifest, grid):
    """Concrete band list for a dataset; each band must lie on ``grid``."""
    if config.bands == "reference":
        bands = reference_bands()
    elif config.bands == "auto":
        if "baseline" not in manifest:
            raise DataError("bands: 'auto' needs a dataset manifest with a baseline model")
        baseline = ModalModel.from_dict(manifest["baseline"])
        bands = nominal_bands(baseline, config.band_width_pct, grid)
    else:
        bands = list(config.bands)
    if not bands:
        raise DataError("empty band list")
    for band in bands:
        if band_indices(grid, band).size < 2:
            raise DataError(f"band {band} holds fewer than 2 grid points")
    return bands


def extract(dataset_dir, config: PipelineConfig) -> FeatureTable:
    """Pseudomodal-energy feature table of every instance in a dataset directory."""
    if not isinstance(config.bands, str) and not config.bands:
        raise DataError("empty band list")
    manifest = read_manifest(dataset_dir)
    rows, labels, bands, pairs = [], [], None, None
    for entry, frfs in read_dataset(dataset_dir):
        if bands is None:
            bands = resolve_bands(config, manifest, frfs[0].grid)
            pairs = tuple(sorted(f.pair for f in frfs))
        rows.append(extract_features(frfs, bands, pairs).values)
        labels.append(FaultLabel.parse(entry["label"]))
    if not rows:
        raise DataError(f"{dataset_dir}: dataset has no instances")
    return FeatureTable(np.array(rows), feature_names(len(bands), len(pairs)), labels)


def synthetic_table(config: PipelineConfig) -> FeatureTable:
    """Feature table of the configured population, computed in memory."""
    pop_cfg = config.population
    baseline = generate_baseline(pop_cfg)
    instances = generate_population(pop_cfg, baseline)
    grid = pop_cfg.grid
    bands = resolve_bands(config, {"baseline": baseline.to_dict()}, grid)
    pairs = tuple(sorted(f.pair for f in instances[0].frfs))
    X = np.array([extract_features(inst.frfs, bands, pairs).values for inst in instances])
    return FeatureTable(X, feature_names(len(bands), len(pairs)), [inst.label for inst in instances])


def write_features_atomic(path, table: FeatureTable):
    """Write the feature CSV via a temporary file so a failure leaves nothing behind."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", suffix=".tmp")
    os.close(fd)
    try:
        write_features_csv(tmp, table)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# --- crossval --------------------------------------------------------------

def select_rules(X, Y, config: PipelineConfig):
    """Rule count for the whole study, chosen once on the PCA scores of all instances."""
    if config.n_rules is not None:
        return config.n_rules, None
    settings = config.cv_settings()
    m = settings.pca_components
    if m > min(X.shape):
        raise DataError(f"pca_components={m} exceeds min(n_instances, n_features) = {min(X.shape)}")
    Z = pca_fit(X, m).transform(X)
    lo, hi = config.rule_range
    folds = min(config.selection_folds, X.shape[0])
    sel = select_rule_count(Z, Y, range(lo, hi + 1), folds, fold_seed(config.seed, 1),
                            config.train, error=config.selection_error)
    return sel.chosen, sel


def render_report(report_dict) -> str:
    """Human-readable summary of a ``report.json`` document."""
    text = CVReport.from_dict(report_dict).summary()
    extra = []
    if report_dict.get("n_rules") is not None:
        extra.append(f"rules: {report_dict['n_rules']}")
    if report_dict.get("final_thresholds"):
        t = report_dict["final_thresholds"]
        extra.append("final thresholds: " + " ".join(f"{OUTPUT_NAMES[d]}={v:.4f}" for d, v in enumerate(t)))
    return text + "".join(line + "\n" for line in extra)


def _write_predictions(path, report: CVReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "true", "pred", "correct"])
        for p in report.predictions:
            w.writerow([p["instance"], p["true"], p["pred"], int(p["correct"])])


def _write_fold_thresholds(path, report: CVReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "n_rules", *(f"t_{c}" for c in OUTPUT_NAMES), "error"])
        for r in report.folds:
            t = r.thresholds if r.thresholds else [""] * N_OUTPUTS
            w.writerow([r.fold, r.n_rules, *(repr(float(v)) if v != "" else "" for v in t), r.error or ""])


def _write_curve(path, thresholds, acc):
    with open(path, "w", newline="") as fh:
        fh.write("threshold,acc\n")
        for t, a in zip(thresholds, acc):
            fh.write(f"{float(t)!r},{'' if a is None else repr(float(a))}\n")


def crossval(table: FeatureTable, config: PipelineConfig, out_dir, features_path=None):
    """Rule selection, cross-validation and a final model fitted on all instances.

    Returns the :class:`CVReport`. Files written to ``out_dir``: ``report.txt``,
    ``report.json``, ``predictions.csv``, ``fold_thresholds.csv``,
    ``threshold_curve_{x,y,z}.csv``, ``selection.json``, ``run.json``,
    ``config.yaml``, ``pca.json``, ``ts_model.json`` and ``thresholds.json``.
    """
    X, Y = table.X, table.Y
    n = X.shape[0]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc.strerror or exc}") from exc

    K, selection = select_rules(X, Y, config)
    settings = replace(config.cv_settings(), n_rules=K)
    if config.cv == "loo":
        report = loo_cv(X, Y, settings)
    else:
        report = kfold_cv(X, Y, config.cv[1], settings)

    final, info = fit_classifier(X, Y, settings, fold_seed(config.seed, 7))
    train_scores = final.scores(X)

    report_dict = report.to_dict()
    report_dict["n_rules"] = K
    report_dict["final_thresholds"] = list(final.thresholds.values)
    report_dict["final_train_acc_optimized"] = info.train_acc_optimized
    report_dict["final_train_acc_fixed"] = info.train_acc_fixed
    write_json(out / "report.json", report_dict)
    (out / "report.txt").write_text(render_report(report_dict))
    _write_predictions(out / "predictions.csv", report)
    _write_fold_thresholds(out / "fold_thresholds.csv", report)
    for d in range(N_OUTPUTS):
        try:
            t, acc = threshold_curve(train_scores[:, d], Y[:, d], settings.relative_importance)
        except UndefinedRateError:
            # single-class output: accuracy is undefined at every threshold
            t = threshold_candidates(train_scores[:, d])
            acc = [None] * len(t)
        _write_curve(out / f"threshold_curve_{OUTPUT_NAMES[d]}.csv", t, acc)
    write_json(out / "selection.json", selection.to_dict() if selection is not None
               else {"chosen": K, "fixed": True})
    write_json(out / "pca.json", final.pca.to_dict())
    write_json(out / "ts_model.json", final.model.to_dict())
    write_json(out / "thresholds.json", final.thresholds.to_dict())
    (out / "config.yaml").write_text(dump_config(config))
    run = {"config": config.to_dict(), "n_instances": n, "n_features": X.shape[1],
           "n_rules": K, "method": report.method}
    if features_path is not None:
        run["features_sha256"] = _sha256(features_path)
    write_json(out / "run.json", run)
    return report


# --- classify ----------------------------------------------------------------

def load_classifier(model_path, thresholds_path=None, pca_path=None) -> Classifier:
    model = TSModel.from_dict(read_json(model_path))
    thresholds = (ThresholdSet.from_dict(read_json(thresholds_path))
                  if thresholds_path is not None else FIXED_THRESHOLDS)
    pca = PCAModel.from_dict(read_json(pca_path)) if pca_path is not None else None
    expected = pca.n_components if pca is not None else None
    if expected is not None and expected != model.n_inputs:
        raise DataError(f"dimension mismatch: PCA gives {expected} components, model expects {model.n_inputs}")
    return Classifier(pca, model, thresholds)


def classify_features(clf: Classifier, X):
    """``(labels, scores)`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, float))
    want = clf.pca.n_features if clf.pca is not None else clf.model.n_inputs
    if X.shape[1] != want:
        raise DataError(f"dimension mismatch: expected {want} features, got {X.shape[1]}")
    scores = clf.scores(X)
    return clf.classify(X), scores


def load_inputs(path, config: PipelineConfig) -> FeatureTable:
    """A features CSV, or a dataset directory whose features are extracted on the fly."""
    path = Path(path)
    if path.is_dir():
        return extract(path, config)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    return read_features_csv(path)
