"""First-order Takagi-Sugeno fuzzy model with Gaussian antecedents.

Rule ``i`` fires with strength ``w_i * prod_j exp(-(x_j - c_ij)**2 / (2 s_ij**2))``
and proposes the affine output ``A_i @ x + b_i``; the model output is the
firing-strength weighted mean of the rule outputs. All rules share
antecedents across the ``m`` outputs.

Training alternates a global least-squares solve for the consequents with a
gradient step on centers and widths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, NumericalError

FORMAT_VERSION = 1
MIN_WIDTH = 1e-6
DEGENERATE_FIRING = 1e-12
_LOG_DEGENERATE = np.log(DEGENERATE_FIRING)


@dataclass(frozen=True)
class Rule:
    centers: np.ndarray
    widths: np.ndarray
    weight: float
    consequent: np.ndarray  # m x (n+1), rows [a^T | b]


@dataclass(frozen=True)
class TSModel:
    """Rule parameters stored as stacked arrays.

    centers, widths: ``(K, n)``; weights: ``(K,)``; consequents: ``(K, m, n+1)``.
    """

    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray
    consequents: np.ndarray

    def __post_init__(self):
        c = np.array(self.centers, float, ndmin=2)
        s = np.array(self.widths, float, ndmin=2)
        w = np.array(self.weights, float, ndmin=1)
        a = np.array(self.consequents, float, ndmin=3)
        K, n = c.shape
        if K < 1:
            raise DataError("a TS model needs at least one rule")
        if s.shape != (K, n) or w.shape != (K,) or a.ndim != 3 or a.shape[0] != K or a.shape[2] != n + 1:
            raise DataError(
                f"inconsistent TS model shapes: centers {c.shape}, widths {s.shape}, "
                f"weights {w.shape}, consequents {a.shape}")
        for name, arr in (("centers", c), ("widths", s), ("weights", w), ("consequents", a)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"TS model {name} contain non-finite values")
        if np.any(s <= 0):
            raise DataError("TS model widths must be positive")
        if np.any(w < 0) or np.any(w > 1):
            raise DataError("TS rule weights must lie in [0, 1]")
        for name, arr in (("centers", c), ("widths", s), ("weights", w), ("consequents", a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_rules(self):
        return self.centers.shape[0]

    @property
    def n_inputs(self):
        return self.centers.shape[1]

    @property
    def n_outputs(self):
        return self.consequents.shape[1]

    @property
    def rules(self):
        return [Rule(self.centers[i], self.widths[i], float(self.weights[i]), self.consequents[i])
                for i in range(self.n_rules)]

    @classmethod
    def from_rules(cls, rules):
        return cls(np.stack([r.centers for r in rules]), np.stack([r.widths for r in rules]),
                   np.array([r.weight for r in rules]), np.stack([r.consequent for r in rules]))

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "rules": [
                {"centers": r.centers.tolist(), "widths": r.widths.tolist(),
                 "weight": r.weight, "consequent": r.consequent.tolist()}
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            version = d.get("version", FORMAT_VERSION)
            if version > FORMAT_VERSION:
                raise DataError(f"unsupported TS model version {version}")
            rules = [Rule(np.asarray(r["centers"], float), np.asarray(r["widths"], float),
                          float(r["weight"]), np.asarray(r["consequent"], float))
                     for r in d["rules"]]
            model = cls.from_rules(rules)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed TS model: {exc}") from exc
        if model.n_inputs != d["n_inputs"] or model.n_outputs != d["n_outputs"]:
            raise DataError("TS model header does not match rule dimensions")
        return model


def _check_x(x, n):
    x = np.asarray(x, float)
    if x.shape[-1] != n:
        raise DataError(f"input dimension mismatch: expected {n}, got {x.shape[-1]}")
    return x


def membership(rule: Rule, x):
    """Gaussian membership degree of each input coordinate."""
    x = _check_x(x, rule.centers.size)
    return np.exp(-((x - rule.centers) ** 2) / (2.0 * rule.widths ** 2))


def firing_strength(rule: Rule, x):
    return rule.weight * float(np.prod(membership(rule, x)))


def log_firing(model: TSModel, X):
    """``log beta_i(x)`` for each row of ``X``; shape ``(N, K)``."""
    X = _check_x(np.atleast_2d(X), model.n_inputs)
    d = (X[:, None, :] - model.centers[None]) / model.widths[None]
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return logw[None] - 0.5 * np.sum(d * d, axis=2)


def normalized_firing(model: TSModel, X):
    """Normalized firing strengths ``gamma`` and a mask of degenerate rows.

    Rows whose total firing strength is below 1e-12 fall back to a one-hot
    vector on the strongest rule.
    """
    lb = log_firing(model, X)
    top = lb.max(axis=1, keepdims=True)
    finite_top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(lb - finite_top)
    tot = e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        log_total = finite_top + np.log(tot)
    degenerate = (log_total[:, 0] < _LOG_DEGENERATE) | ~np.isfinite(top[:, 0])
    gamma = np.divide(e, tot, out=np.zeros_like(e), where=tot > 0)
    if degenerate.any():
        onehot = np.zeros((degenerate.sum(), model.n_rules))
        onehot[np.arange(onehot.shape[0]), np.argmax(lb[degenerate], axis=1)] = 1.0
        gamma[degenerate] = onehot
    return gamma, degenerate


def rule_outputs(model: TSModel, X):
    """Affine consequent of every rule at every row; shape ``(N, K, m)``."""
    X = np.atleast_2d(X)
    return np.einsum("kmj,nj->nkm", model.consequents[:, :, :-1], X) + model.consequents[None, :, :, -1]


def predict(model: TSModel, x):
    """Model output for one input vector (``(m,)``) or a batch (``(N, m)``)."""
    x = _check_x(x, model.n_inputs)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    gamma, _ = normalized_firing(model, X)
    y = np.einsum("nk,nkm->nm", gamma, rule_outputs(model, X))
    return y[0] if single else y


def mse(model: TSModel, X, Y):
    """Mean over samples of the squared output-error norm."""
    E = predict(model, np.atleast_2d(X)) - np.atleast_2d(Y)
    return float(np.mean(np.sum(E * E, axis=1)))


# --- initialization -------------------------------------------------------

def _kmeans(X, K, rng, n_iter=100):
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, K):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = X[j]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    labels = None
    for _ in range(n_iter):
        dist = np.sum((X[:, None, :] - centers[None]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for i in range(K):
            members = X[labels == i]
            if len(members):
                centers[i] = members.mean(axis=0)
            else:
                # reseed an empty cluster on the worst-fit point
                far = np.argmax(dist[np.arange(n), labels])
                centers[i] = X[far]
    dist = np.sum((X[:, None, :] - centers[None]) ** 2, axis=2)
    return centers, np.argmin(dist, axis=1)


def init_antecedents(X, K, seed):
    """k-means++ clustering of ``X`` into ``K`` Gaussian antecedents.

    Returns ``(centers, widths, weights)``. Widths are the per-cluster standard
    deviations, floored at 10% of the global per-dimension deviation.
    """
    X = np.asarray(X, float)
    if X.ndim != 2:
        raise DataError("X must be 2-D")
    if X.shape[0] < K:
        raise DataError(f"need at least K={K} samples, got {X.shape[0]}")
    if K < 1:
        raise DataError("K must be at least 1")
    if K == 1:
        centers, labels = X.mean(axis=0, keepdims=True), np.zeros(X.shape[0], int)
    else:
        centers, labels = _kmeans(X, K, np.random.default_rng(seed))
    floor = np.maximum(0.1 * X.std(axis=0), MIN_WIDTH)
    widths = np.empty_like(centers)
    for i in range(K):
        members = X[labels == i]
        spread = members.std(axis=0) if len(members) else np.zeros(X.shape[1])
        widths[i] = np.maximum(spread, floor)
    return centers, widths, np.ones(K)


def initial_model(X, n_outputs, K, seed):
    centers, widths, weights = init_antecedents(X, K, seed)
    return TSModel(centers, widths, weights, np.zeros((K, n_outputs, X.shape[1] + 1)))


# --- least squares --------------------------------------------------------

@dataclass(frozen=True)
class LSInfo:
    rank: int
    n_params: int

    @property
    def rank_deficient(self):
        return self.rank < self.n_params


def fit_consequents(model: TSModel, X, Y):
    """Globally optimal consequents for fixed antecedents.

    Solves ``min ||Phi @ theta - Y||`` with regressor rows
    ``[g_1 x, g_1, ..., g_K x, g_K]`` by SVD least squares (minimum-norm when
    rank deficient). Returns ``(model, LSInfo)``.
    """
    X = _check_x(np.atleast_2d(X), model.n_inputs)
    Y = np.atleast_2d(np.asarray(Y, float))
    if Y.shape[0] != X.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if Y.shape[1] != model.n_outputs:
        raise DataError(f"Y has {Y.shape[1]} outputs, model expects {model.n_outputs}")
    gamma, _ = normalized_firing(model, X)
    Xt = np.hstack([X, np.ones((X.shape[0], 1))])
    Phi = (gamma[:, :, None] * Xt[:, None, :]).reshape(X.shape[0], -1)
    theta, _, rank, _ = np.linalg.lstsq(Phi, Y, rcond=None)
    K, n1 = model.n_rules, model.n_inputs + 1
    cons = theta.T.reshape(model.n_outputs, K, n1).transpose(1, 0, 2)
    return replace(model, consequents=cons), LSInfo(int(rank), Phi.shape[1])


# --- gradient step --------------------------------------------------------

def antecedent_gradients(model: TSModel, X, Y):
    """Analytic gradient of :func:`mse` w.r.t. centers and widths.

    Degenerate rows (total firing below the fallback threshold) are locally
    constant in the antecedents and contribute nothing.
    """
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    N = X.shape[0]
    gamma, degenerate = normalized_firing(model, X)
    F = rule_outputs(model, X)
    yhat = np.einsum("nk,nkm->nm", gamma, F)
    err = yhat - Y
    # dL/dlog(beta_i) per sample
    g = gamma * np.einsum("nkm,nm->nk", F - yhat[:, None, :], err) * (2.0 / N)
    g[degenerate] = 0.0
    diff = X[:, None, :] - model.centers[None]
    s2 = model.widths ** 2
    grad_c = np.einsum("nk,nkj->kj", g, diff) / s2
    grad_s = np.einsum("nk,nkj->kj", g, diff * diff) / (s2 * model.widths)
    return grad_c, grad_s


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    learning_rate: float = 0.1
    tolerance: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.max_epochs, (int, np.integer)) or self.max_epochs < 1:
            raise ConfigError("train.max_epochs", f"must be a positive integer, got {self.max_epochs!r}")
        for name in ("learning_rate", "tolerance"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not np.isfinite(v) or v <= 0:
                raise ConfigError(f"train.{name}", f"must be a positive number, got {v!r}")
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("train.seed", f"must be an integer, got {self.seed!r}")

    def to_dict(self):
        return {"max_epochs": self.max_epochs, "learning_rate": self.learning_rate,
                "tolerance": self.tolerance, "seed": self.seed}


@dataclass
class TrainResult:
    model: TSModel
    losses: list = field(default_factory=list)
    epochs: int = 0
    rank_deficient: bool = False


def train(model: TSModel, X, Y, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Hybrid least-squares / gradient-descent training.

    Each epoch takes one gradient step on the antecedents (halving the step up
    to 10 times until the loss does not increase, skipping the step
    otherwise) followed by an exact consequent solve. ``losses[e]`` is the
    training MSE after the least-squares solve of epoch ``e`` and never
    increases.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    model, info = fit_consequents(model, X, Y)
    loss = mse(model, X, Y)
    if not np.isfinite(loss):
        raise NumericalError("non-finite training loss at epoch 0")
    result = TrainResult(model, [loss], 0, info.rank_deficient)
    for epoch in range(1, config.max_epochs + 1):
        grad_c, grad_s = antecedent_gradients(model, X, Y)
        step = config.learning_rate
        candidate = model
        for _ in range(11):
            trial = replace(model, centers=model.centers - step * grad_c,
                            widths=np.maximum(model.widths - step * grad_s, MIN_WIDTH))
            trial_loss = mse(trial, X, Y)
            if trial_loss <= loss:
                candidate = trial
                break
            step *= 0.5
        candidate, info = fit_consequents(candidate, X, Y)
        new_loss = mse(candidate, X, Y)
        if not np.isfinite(new_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        if new_loss > loss:
            # rounding in the LS solve; keep the better model
            new_loss, candidate = loss, model
        improvement = loss - new_loss
        model, loss = candidate, new_loss
        result.model, result.epochs, result.rank_deficient = model, epoch, info.rank_deficient
        result.losses.append(loss)
        if improvement < config.tolerance:
            break
    return result


# --- rule-count selection -------------------------------------------------

@dataclass
class RuleSelection:
    chosen: int
    k_values: list
    mean_error: list
    std_error: list
    fold_errors: list

    def to_dict(self):
        return {"chosen": self.chosen, "k_values": self.k_values,
                "mean_error": self.mean_error, "std_error": self.std_error,
                "fold_errors": self.fold_errors}


def fold_seed(seed, *keys):
    """Independent integer seed for a (seed, key...) stream."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def validation_error(model, X, Y, error="mse"):
    """``"mse"``, or ``"misclassification"``: fraction of rows whose outputs,
    thresholded at 0.5, miss any target bit."""
    if error == "mse":
        return mse(model, X, Y)
    if error == "misclassification":
        bits = predict(model, np.atleast_2d(X)) >= 0.5
        return float(np.mean(np.any(bits != (np.atleast_2d(Y) >= 0.5), axis=1)))
    raise ConfigError("selection_error", f"unknown validation error {error!r}")


def select_rule_count(X, Y, k_range=range(1, 11), folds=10, seed=0,
                      config: TrainConfig = TrainConfig(), error="mse") -> RuleSelection:
    """Choose the rule count by ``folds``-fold cross-validation.

    The choice is the smallest ``K`` whose mean validation error lies within
    one standard deviation of the best mean. Rule counts larger than a
    training fold are skipped (reported as ``inf``).
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    n = X.shape[0]
    if not 2 <= folds <= n:
        raise DataError(f"fold count {folds} must lie in [2, {n}]")
    k_values = [int(k) for k in k_range]
    if not k_values:
        raise ConfigError("rule_range", "empty rule range")
    perm = np.random.default_rng(fold_seed(seed, 0)).permutation(n)
    parts = np.array_split(perm, folds)
    means, stds, all_errs = [], [], []
    for K in k_values:
        errs = []
        for f, test in enumerate(parts):
            train_idx = np.setdiff1d(perm, test)
            if len(train_idx) < K:
                errs = []
                break
            m0 = initial_model(X[train_idx], Y.shape[1], K, fold_seed(seed, K, f))
            fitted = train(m0, X[train_idx], Y[train_idx], config).model
            errs.append(validation_error(fitted, X[test], Y[test], error))
        if errs:
            means.append(float(np.mean(errs)))
            stds.append(float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0)
        else:
            means.append(float("inf"))
            stds.append(float("inf"))
        all_errs.append(errs)
    best = int(np.argmin(means))
    if not np.isfinite(means[best]):
        raise DataError("no rule count in range fits the training folds")
    limit = means[best] + stds[best]
    chosen = next(k for k, m in zip(k_values, means) if m <= limit)
    return RuleSelection(chosen, k_values, means, stds, all_errs)
