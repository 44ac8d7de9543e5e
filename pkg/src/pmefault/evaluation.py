"""Fault labels, confusion metrics, threshold selection and cross-validation.

A prediction bit is 1 when its score is greater than or equal to the
threshold. An instance counts as correctly classified only when all three
substructure bits match.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError, UndefinedRateError
from .features import PCAModel, pca_fit
from .neurofuzzy import (TrainConfig, TSModel, fold_seed, initial_model, predict,
                         select_rule_count, train)

log = logging.getLogger(__name__)

N_OUTPUTS = 3


@dataclass(frozen=True, order=True)
class FaultLabel:
    """Fault state of the three substructures, e.g. ``FaultLabel((1, 0, 1))``."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != N_OUTPUTS or any(b not in (0, 1) for b in bits):
            raise DataError(f"fault label must be {N_OUTPUTS} binary digits, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def parse(cls, text):
        text = str(text).strip().strip("[]").replace(" ", "").replace(",", "")
        if len(text) != N_OUTPUTS or set(text) - {"0", "1"}:
            raise DataError(f"cannot parse fault label {text!r}")
        return cls(tuple(int(c) for c in text))

    def __str__(self):
        return "".join(map(str, self.bits))

    def __iter__(self):
        return iter(self.bits)


#: The eight fault cases: none, single, double, triple.
FAULT_CLASSES = tuple(FaultLabel(b) for b in (
    (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def to_dict(self):
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn}


def confusion(scores, labels, threshold) -> ConfusionCounts:
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, int)
    if scores.shape != labels.shape:
        raise DataError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    if not np.isfinite(threshold):
        raise DataError("threshold must be finite")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(int(np.sum(pred & pos)), int(np.sum(~pred & pos)),
                           int(np.sum(pred & ~pos)), int(np.sum(~pred & ~pos)))


def tpr(c: ConfusionCounts) -> float:
    """Sensitivity ``tp / (tp + fn)``."""
    if c.tp + c.fn == 0:
        raise UndefinedRateError("true positive rate undefined: no positive instances")
    return c.tp / (c.tp + c.fn)


def fpr(c: ConfusionCounts) -> float:
    """``fp / (fp + tn)``."""
    if c.fp + c.tn == 0:
        raise UndefinedRateError("false positive rate undefined: no negative instances")
    return c.fp / (c.fp + c.tn)


def accuracy(c: ConfusionCounts, relative_importance=1.0) -> float:
    """``(tpr + c*(1 - fpr)) / (c + 1)``; balanced accuracy when ``c == 1``."""
    if not relative_importance > 0:
        raise DataError("relative importance must be positive")
    r = relative_importance
    return (tpr(c) + r * (1.0 - fpr(c))) / (r + 1.0)


@dataclass(frozen=True)
class ThresholdSet:
    values: tuple = (0.5, 0.5, 0.5)
    fallback: tuple = (False, False, False)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != N_OUTPUTS or any(not 0.0 <= v <= 1.0 for v in vals):
            raise DataError(f"thresholds must be {N_OUTPUTS} values in [0, 1], got {self.values!r}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "fallback", tuple(bool(f) for f in self.fallback))

    def to_dict(self):
        return {"thresholds": list(self.values), "fallback": list(self.fallback)}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["thresholds"]), tuple(d.get("fallback", (False,) * N_OUTPUTS)))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed threshold file: {exc}") from exc


FIXED_THRESHOLDS = ThresholdSet()


def threshold_candidates(scores):
    """Midpoints of adjacent distinct scores inside [0, 1], plus 0, 0.5 and 1."""
    u = np.unique(np.asarray(scores, float))
    mids = 0.5 * (u[:-1] + u[1:])
    mids = mids[(mids >= 0.0) & (mids <= 1.0)]
    return np.unique(np.concatenate([mids, [0.0, 0.5, 1.0]]))


def threshold_curve(scores, labels, relative_importance=1.0):
    """Accuracy at every candidate threshold: ``(candidates, accuracies)``."""
    cands = threshold_candidates(scores)
    accs = np.array([accuracy(confusion(scores, labels, t), relative_importance) for t in cands])
    return cands, accs


def _best_threshold(scores, labels, relative_importance):
    labels = np.asarray(labels, int)
    if labels.min() == labels.max():
        return 0.5, True
    cands, accs = threshold_curve(scores, labels, relative_importance)
    best = accs.max()
    tied = cands[accs >= best - 1e-12]
    dist = np.abs(tied - 0.5)
    # nearest 0.5 first, then the smaller value (tied is sorted ascending)
    return float(tied[np.argmin(dist)]), False


def optimize_thresholds(scores, labels, relative_importance=1.0) -> ThresholdSet:
    """Per-output thresholds maximizing the weighted accuracy on ``scores``.

    Outputs whose labels contain a single class keep 0.5 and are flagged.
    """
    scores = np.atleast_2d(np.asarray(scores, float))
    labels = np.atleast_2d(np.asarray(labels, int))
    if scores.shape != labels.shape or scores.shape[1] != N_OUTPUTS:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} must both be n x {N_OUTPUTS}")
    if scores.shape[0] < 1:
        raise DataError("threshold optimization needs at least one instance")
    picks = [_best_threshold(scores[:, d], labels[:, d], relative_importance) for d in range(N_OUTPUTS)]
    return ThresholdSet(tuple(p[0] for p in picks), tuple(p[1] for p in picks))


def classify(outputs, thresholds: ThresholdSet = FIXED_THRESHOLDS):
    """Threshold one output vector into a :class:`FaultLabel`, or a batch into an int array."""
    out = np.asarray(outputs, float)
    if not np.all(np.isfinite(out)):
        raise DataError("cannot classify non-finite outputs")
    bits = (out >= np.asarray(thresholds.values)).astype(int)
    if bits.ndim == 1:
        return FaultLabel(tuple(bits))
    return bits


def output_accuracies(scores, labels, thresholds: ThresholdSet, relative_importance=1.0):
    """Weighted accuracy per output; ``None`` where it is undefined."""
    out = []
    for d in range(N_OUTPUTS):
        try:
            out.append(accuracy(confusion(scores[:, d], labels[:, d], thresholds.values[d]),
                                relative_importance))
        except UndefinedRateError:
            out.append(None)
    return out


# --- fitted pipeline ------------------------------------------------------

@dataclass(frozen=True)
class CVSettings:
    """Everything a cross-validation fold needs to fit a classifier."""

    pca_components: int | None = 10  # None feeds features to the model unreduced
    n_rules: int | None = None
    rule_range: tuple = (1, 10)
    selection_folds: int = 10
    selection_error: str = "misclassification"
    threshold_mode: str = "optimized"
    paper_mode: bool = False
    relative_importance: float = 1.0
    train: TrainConfig = TrainConfig()
    seed: int = 0
    skip_failed_folds: bool = False

    def __post_init__(self):
        if self.threshold_mode not in ("optimized", "fixed"):
            raise ConfigError("threshold_mode", f"must be 'optimized' or 'fixed', got {self.threshold_mode!r}")
        if self.selection_error not in ("mse", "misclassification"):
            raise ConfigError("selection_error",
                              f"must be 'mse' or 'misclassification', got {self.selection_error!r}")


@dataclass(frozen=True)
class Classifier:
    pca: PCAModel | None
    model: TSModel
    thresholds: ThresholdSet

    def scores(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        Z = self.pca.transform(X) if self.pca is not None else X
        return predict(self.model, Z)

    def classify(self, X):
        return classify(self.scores(X), self.thresholds)


@dataclass
class FitInfo:
    n_rules: int
    train_mse: float
    epochs: int
    train_acc_optimized: list
    train_acc_fixed: list
    selection: dict | None = None


def fit_classifier(X, Y, settings: CVSettings, seed):
    """PCA, TS training and thresholds on one training set. Returns ``(Classifier, FitInfo)``."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, int)
    m = settings.pca_components
    if m is None:
        pca, Z = None, X
    else:
        if m > min(X.shape):
            raise ConfigError("pca_components", f"{m} exceeds min(n_train, n_features) = {min(X.shape)}")
        pca = pca_fit(X, m)
        Z = pca.transform(X)
    selection = None
    K = settings.n_rules
    if K is None:
        lo, hi = settings.rule_range
        folds = min(settings.selection_folds, Z.shape[0])
        sel = select_rule_count(Z, Y, range(lo, hi + 1), folds, fold_seed(seed, 1), settings.train,
                                error=settings.selection_error)
        K, selection = sel.chosen, sel.to_dict()
    ts = initial_model(Z, Y.shape[1], K, fold_seed(seed, 2))
    result = train(ts, Z, Y, settings.train)
    train_scores = predict(result.model, Z)
    opt = optimize_thresholds(train_scores, Y, settings.relative_importance)
    thresholds = opt if settings.threshold_mode == "optimized" else FIXED_THRESHOLDS
    info = FitInfo(K, result.losses[-1], result.epochs,
                   output_accuracies(train_scores, Y, opt, settings.relative_importance),
                   output_accuracies(train_scores, Y, FIXED_THRESHOLDS, settings.relative_importance),
                   selection)
    return Classifier(pca, result.model, thresholds), info


# --- cross-validation -----------------------------------------------------

@dataclass
class FoldRecord:
    fold: int
    test: list
    n_rules: int
    thresholds: list
    fallback: list
    train_mse: float
    train_acc_optimized: list
    train_acc_fixed: list
    error: str | None = None

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class CVReport:
    n_instances: int
    misclassified_count: int
    per_output: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    folds: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    method: str = ""

    @property
    def exact_match_accuracy(self):
        if self.n_instances == 0:
            return float("nan")
        return 1.0 - self.misclassified_count / self.n_instances

    def accuracy_text(self):
        return f"{100.0 * self.exact_match_accuracy:.2f}%"

    def summary(self):
        lines = [
            f"method: {self.method}" if self.method else None,
            f"instances: {self.n_instances}",
            f"misclassified: {self.misclassified_count}",
            f"accuracy: {self.accuracy_text()}",
        ]
        for d, c in enumerate(self.per_output):
            lines.append("output {}: tp={tp} fn={fn} fp={fp} tn={tn}".format("xyz"[d], **c))
        failed = [f.fold for f in self.folds if f.error]
        if failed:
            lines.append(f"failed folds: {failed}")
        return "\n".join(l for l in lines if l is not None) + "\n"

    def to_dict(self):
        return {
            "method": self.method,
            "n_instances": self.n_instances,
            "misclassified_count": self.misclassified_count,
            "exact_match_accuracy": self.exact_match_accuracy,
            "per_output": self.per_output,
            "thresholds": self.thresholds,
            "folds": [f.to_dict() for f in self.folds],
            "predictions": self.predictions,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(int(d["n_instances"]), int(d["misclassified_count"]),
                       list(d.get("per_output", [])), list(d.get("thresholds", [])),
                       [FoldRecord(**f) for f in d.get("folds", [])],
                       list(d.get("predictions", [])), d.get("method", ""))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed cross-validation report: {exc}") from exc


def make_folds(labels, folds, seed):
    """Stratified partition of ``range(n)`` into ``folds`` index lists.

    Fold sizes differ by at most one; with ``folds == n`` every fold is the
    singleton ``[i]`` in index order.
    """
    labels = np.atleast_2d(np.asarray(labels, int))
    n = labels.shape[0]
    if not 2 <= folds <= n:
        raise ConfigError("cv", f"fold count {folds} must lie in [2, {n}]")
    if folds == n:
        return [[i] for i in range(n)]
    rng = np.random.default_rng(fold_seed(seed, 3))
    codes = labels @ (1 << np.arange(labels.shape[1]))
    order = []
    for code in np.unique(codes):
        members = np.flatnonzero(codes == code)
        order.extend(rng.permutation(members).tolist())
    parts = [sorted(order[f::folds]) for f in range(folds)]
    return sorted(parts, key=lambda p: p[0])


def _run_folds(X, Y, parts, settings: CVSettings, method):
    X = np.asarray(X, float)
    Y = np.asarray(Y, int)
    if X.ndim != 2 or Y.shape != (X.shape[0], N_OUTPUTS):
        raise DataError(f"expected X (n x D) and labels (n x {N_OUTPUTS}), got {X.shape} and {Y.shape}")
    n = X.shape[0]
    if n < 2:
        raise DataError("cross-validation needs at least 2 instances")
    scores = np.full((n, N_OUTPUTS), np.nan)
    fold_of = np.full(n, -1)
    records = []
    for f, test in enumerate(parts):
        train_idx = np.setdiff1d(np.arange(n), test)
        try:
            clf, info = fit_classifier(X[train_idx], Y[train_idx], settings, fold_seed(settings.seed, f))
        except (NumericalError, np.linalg.LinAlgError) as exc:
            msg = f"fold {f}: {exc}"
            if not settings.skip_failed_folds:
                raise NumericalError(msg) from exc
            log.warning("skipping %s", msg)
            records.append(FoldRecord(f, list(test), 0, [], [], float("nan"), [], [], str(exc)))
            continue
        scores[test] = clf.scores(X[test])
        fold_of[test] = f
        records.append(FoldRecord(f, list(test), info.n_rules, list(clf.thresholds.values),
                                  list(clf.thresholds.fallback), info.train_mse,
                                  info.train_acc_optimized, info.train_acc_fixed))
    done = fold_of >= 0
    if settings.paper_mode and settings.threshold_mode == "optimized":
        # thresholds chosen on the pooled held-out scores of the whole set
        pooled = optimize_thresholds(scores[done], Y[done], settings.relative_importance)
        per_instance = np.tile(pooled.values, (n, 1))
        used = [list(pooled.values)]
    else:
        by_fold = {r.fold: r for r in records}
        per_instance = np.array([by_fold[f].thresholds if f >= 0 else [0.5] * N_OUTPUTS
                                 for f in fold_of])
        used = [r.thresholds for r in records if r.error is None]
    pred = (scores >= per_instance).astype(int)
    correct = np.all(pred == Y, axis=1) & done
    per_output = [_confusion_from_pred(pred[done, d], Y[done, d]).to_dict() for d in range(N_OUTPUTS)]
    predictions = [
        {"instance": int(i), "fold": int(fold_of[i]), "true": str(FaultLabel(tuple(Y[i]))),
         "pred": str(FaultLabel(tuple(pred[i]))) if done[i] else "",
         "correct": bool(correct[i]), "scores": scores[i].tolist() if done[i] else []}
        for i in range(n)
    ]
    n_done = int(done.sum())
    return CVReport(n_done, int(n_done - correct.sum()), per_output, used, records, predictions, method)


def _confusion_from_pred(pred, truth):
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    return ConfusionCounts(int(np.sum(pred & truth)), int(np.sum(~pred & truth)),
                           int(np.sum(pred & ~truth)), int(np.sum(~pred & ~truth)))


def loo_cv(X, Y, settings: CVSettings = CVSettings()) -> CVReport:
    """Leave-one-out cross-validation; every fold refits PCA, model and thresholds."""
    n = np.asarray(X).shape[0]
    if n < 2:
        raise DataError("leave-one-out needs at least 2 instances")
    return _run_folds(X, Y, [[i] for i in range(n)], settings, "loo")


def kfold_cv(X, Y, folds, settings: CVSettings = CVSettings()) -> CVReport:
    """Stratified ``folds``-fold cross-validation (``folds == n`` is leave-one-out)."""
    parts = make_folds(Y, folds, settings.seed)
    method = "loo" if folds == np.asarray(X).shape[0] else f"kfold({folds})"
    return _run_folds(X, Y, parts, settings, method)
