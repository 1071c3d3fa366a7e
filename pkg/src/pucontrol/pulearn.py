"""Two-step PU learning: SPY reliable-negative extraction, then iterative SVM.

Step one hides a fraction of the labeled positives ("spies") inside the
unlabeled pool, trains a Gaussian Naive Bayes classifier with the unlabeled
pool as the negative class, and keeps as reliable controls the unlabeled
units whose posterior falls below the spies' threshold. Step two retrains a
linear SVM on positives vs. the current reliable controls and grows the
reliable set with every unlabeled unit the SVM classifies as control, until
the labeling stabilizes. Units never promoted stay unlabeled; they are not
treated as positives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import pandas as pd

from .data import zscore_matrix
from .errors import ConfigError, InsufficientDataError, TrainingError

FEATURE_SETS = ("Z", "X")
METHODS = ("SPY", "SPY+iSVM")

VAR_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# Gaussian Naive Bayes


@dataclass
class GaussianNBModel:
    priors: np.ndarray        # (2,)
    means: np.ndarray         # (2, d)
    variances: np.ndarray     # (2, d), floored

    def log_joint(self, F):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        out = np.empty((F.shape[0], 2))
        for k in range(2):
            var = self.variances[k]
            ll = -0.5 * (np.log(2 * np.pi * var) + (F - self.means[k]) ** 2 / var)
            out[:, k] = np.log(self.priors[k]) + ll.sum(axis=1)
        return out

    def posterior(self, F):
        """P(class 1 | x), computed in log space."""
        lj = self.log_joint(F)
        m = lj.max(axis=1, keepdims=True)
        p = np.exp(lj - m)
        return p[:, 1] / p.sum(axis=1)


def fit_gaussian_nb(features, labels):
    """Maximum-likelihood Gaussian NB for binary labels.

    Per-class per-feature mean and variance, variances floored at
    ``VAR_FLOOR`` so degenerate columns keep posteriors finite.
    """
    F = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if set(np.unique(y)) != {0, 1}:
        raise TrainingError("Gaussian NB requires both classes present")
    priors = np.array([(y == 0).mean(), (y == 1).mean()])
    means = np.vstack([F[y == k].mean(axis=0) for k in (0, 1)])
    variances = np.vstack([F[y == k].var(axis=0) for k in (0, 1)])
    variances = np.maximum(variances, VAR_FLOOR)
    return GaussianNBModel(priors=priors, means=means, variances=variances)


# ---------------------------------------------------------------------------
# Linear SVM (dual coordinate descent on the L1-loss soft margin objective)


@dataclass
class LinearSVMModel:
    weights: np.ndarray
    bias: float
    C: float
    iterations: int = 0
    converged: bool = False

    def decision(self, F):
        return np.asarray(F, dtype=float) @ self.weights + self.bias

    def predict(self, F):
        return (self.decision(F) >= 0).astype(int)


def svm_objective(w, b, F, y_pm, C):
    """Soft-margin objective: 0.5*(||w||^2 + b^2) + C * sum hinge.

    The bias is regularized (it is carried as an augmented constant
    feature), which keeps the dual box-constrained and solver-friendly.
    """
    margins = y_pm * (F @ w + b)
    return 0.5 * (w @ w + b * b) + C * np.maximum(0.0, 1.0 - margins).sum()


@numba.njit(cache=True)
def _cd_epoch(A, y_pm, sq, alpha, w, C, order):
    """One coordinate-descent sweep; returns the max projected-gradient violation."""
    d = A.shape[1]
    max_violation = 0.0
    for i in order:
        dot = 0.0
        for j in range(d):
            dot += A[i, j] * w[j]
        g = y_pm[i] * dot - 1.0
        if alpha[i] <= 0.0:
            pg = min(g, 0.0)
        elif alpha[i] >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        if abs(pg) > max_violation:
            max_violation = abs(pg)
        if pg != 0.0:
            old = alpha[i]
            new = min(max(old - g / sq[i], 0.0), C)
            alpha[i] = new
            if new != old:
                scale = (new - old) * y_pm[i]
                for j in range(d):
                    w[j] += scale * A[i, j]
    return max_violation


def fit_linear_svm(features, labels, C=1.0, tol=1e-4, max_epochs=1000, seed=0):
    """Train a linear soft-margin SVM by dual coordinate descent.

    Labels are {0,1}; internally mapped to {-1,+1}. Deterministic given
    ``seed`` (which orders the coordinate sweeps). The converged flag is set
    once an epoch's maximal projected-gradient violation drops below ``tol``.
    """
    F = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if set(np.unique(y)) != {0, 1}:
        raise TrainingError("SVM training requires both classes present")
    y_pm = np.where(y == 1, 1.0, -1.0)

    n, d = F.shape
    A = np.hstack([F, np.ones((n, 1))])  # bias as augmented feature
    sq = np.einsum("ij,ij->i", A, A)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)

    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        max_violation = _cd_epoch(A, y_pm, sq, alpha, w, float(C), order)
        if max_violation < tol:
            converged = True
            break

    return LinearSVMModel(weights=w[:-1], bias=float(w[-1]), C=C,
                          iterations=epoch, converged=converged)


# ---------------------------------------------------------------------------
# SPY step


@dataclass
class SpyConfig:
    spy_fraction: float = 0.3
    threshold_quantile: float = 0.0  # 0 = strict minimum of spy posteriors
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.spy_fraction < 1:
            raise ConfigError("spy_fraction must be in (0,1)")
        if not 0 <= self.threshold_quantile < 1:
            raise ConfigError("threshold_quantile must be in [0,1)")


@dataclass
class SVMConfig:
    C: float = 1.0
    tol: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0


@dataclass
class PUSplit:
    """Partition of all units into positives, reliable controls and the rest."""

    positive_ids: np.ndarray
    reliable_control_ids: np.ndarray
    remaining_unlabeled_ids: np.ndarray
    scores: pd.DataFrame  # unit_id, nb_posterior, svm_score (NaN where not scored)
    model: LinearSVMModel | None = None
    iterations: int = 0
    warnings_: list = field(default_factory=list)

    def __post_init__(self):
        sets = [set(self.positive_ids), set(self.reliable_control_ids),
                set(self.remaining_unlabeled_ids)]
        total = sum(len(s) for s in sets)
        if len(set().union(*sets)) != total:
            raise ConfigError("PUSplit id sets must be disjoint")

    @property
    def n_units(self):
        return (len(self.positive_ids) + len(self.reliable_control_ids)
                + len(self.remaining_unlabeled_ids))

    def to_frame(self):
        rows = []
        score = self.scores.set_index("unit_id")
        col = "svm_score" if self.model is not None else "nb_posterior"
        for uid in self.positive_ids:
            rows.append((uid, "positive", score.at[uid, col]))
        for uid in self.reliable_control_ids:
            rows.append((uid, "reliable_control", score.at[uid, col]))
        for uid in self.remaining_unlabeled_ids:
            rows.append((uid, "unlabeled", score.at[uid, col]))
        out = pd.DataFrame(rows, columns=["unit_id", "assignment", "score"])
        return out.sort_values("unit_id").reset_index(drop=True)


def _feature_matrix(pu, feature_set):
    if feature_set == "Z":
        cols = pu.base.adjustment_cols
    elif feature_set == "X":
        cols = pu.base.feature_cols
    else:
        raise ConfigError(f"feature_set must be one of {FEATURE_SETS}")
    return zscore_matrix(pu.base.features(cols)), list(cols)


def spy_step(pu, feature_set="X", cfg=None):
    """SPY reliable-negative extraction.

    A fraction of the labeled positives become spies and join the unlabeled
    pool; NB is trained with (positives - spies) as class 1 and
    (unlabeled + spies) as class 0. The threshold is the configured quantile
    of the spies' posteriors; unlabeled units strictly below it become
    reliable controls. Spies return to the positive set in the output.
    """
    cfg = cfg or SpyConfig()
    F, _ = _feature_matrix(pu, feature_set)
    ids = pu.base.unit_ids
    pos_idx = np.where(pu.s == 1)[0]
    unl_idx = np.where(pu.s == 0)[0]
    if pos_idx.size < 2:
        raise InsufficientDataError("SPY needs at least 2 labeled positives")

    rng = np.random.default_rng(cfg.seed)
    n_spies = max(1, int(cfg.spy_fraction * pos_idx.size))
    spies = rng.choice(pos_idx, size=n_spies, replace=False)
    is_spy = np.zeros(len(ids), dtype=bool)
    is_spy[spies] = True

    cls = np.zeros(len(ids), dtype=int)
    cls[pos_idx] = 1
    cls[spies] = 0
    nb = fit_gaussian_nb(F, cls)
    post = nb.posterior(F)

    tau = float(np.quantile(post[spies], cfg.threshold_quantile))
    reliable_mask = np.zeros(len(ids), dtype=bool)
    reliable_mask[unl_idx] = post[unl_idx] < tau
    reliable_mask[spies] = False

    warn = []
    if not reliable_mask.any():
        warn.append("spy threshold selected no reliable controls; "
                    "consider a larger threshold_quantile")
        warnings.warn(warn[-1])

    scores = pd.DataFrame({
        "unit_id": ids,
        "nb_posterior": post,
        "svm_score": np.nan,
    })
    remaining = np.array(sorted(set(unl_idx) - set(np.where(reliable_mask)[0])), dtype=int)
    return PUSplit(
        positive_ids=ids[np.sort(pos_idx)],
        reliable_control_ids=ids[np.sort(np.where(reliable_mask)[0])],
        remaining_unlabeled_ids=ids[remaining],
        scores=scores,
        warnings_=warn,
    )


def isvm_refine(pu, initial, feature_set="X", svm_cfg=None, max_iters=50):
    """Grow the reliable-control set with an iteratively retrained linear SVM.

    Each round trains on positives vs. current reliable controls, classifies
    the remaining unlabeled units, and promotes those predicted control.
    Stops when no unlabeled unit changes class or ``max_iters`` is reached.
    Reliable units are never revoked, so the set grows monotonically.
    """
    svm_cfg = svm_cfg or SVMConfig()
    if len(initial.reliable_control_ids) == 0:
        raise InsufficientDataError("iSVM needs a nonempty initial reliable set")

    F, _ = _feature_matrix(pu, feature_set)
    ids = pu.base.unit_ids
    pos_of = {uid: i for i, uid in enumerate(ids)}
    pos_idx = np.array([pos_of[u] for u in initial.positive_ids], dtype=int)
    reliable = set(int(pos_of[u]) for u in initial.reliable_control_ids)
    remaining = set(int(pos_of[u]) for u in initial.remaining_unlabeled_ids)

    model = None
    iterations = 0
    svm_score = np.full(len(ids), np.nan)
    for iterations in range(1, max_iters + 1):
        train_idx = np.concatenate([pos_idx, np.array(sorted(reliable), dtype=int)])
        labels = np.concatenate([np.ones(pos_idx.size, dtype=int),
                                 np.zeros(len(reliable), dtype=int)])
        model = fit_linear_svm(F[train_idx], labels, C=svm_cfg.C, tol=svm_cfg.tol,
                               max_epochs=svm_cfg.max_epochs, seed=svm_cfg.seed)
        svm_score = model.decision(F)
        if not remaining:
            break
        rest = np.array(sorted(remaining), dtype=int)
        pred = model.predict(F[rest])
        promoted = rest[pred == 0]
        if promoted.size == 0:
            break
        reliable.update(int(i) for i in promoted)
        remaining.difference_update(int(i) for i in promoted)

    scores = initial.scores.copy()
    scores["svm_score"] = svm_score
    return PUSplit(
        positive_ids=initial.positive_ids,
        reliable_control_ids=ids[np.array(sorted(reliable), dtype=int)]
        if reliable else np.array([], dtype=int),
        remaining_unlabeled_ids=ids[np.array(sorted(remaining), dtype=int)]
        if remaining else np.array([], dtype=int),
        scores=scores,
        model=model,
        iterations=iterations,
        warnings_=list(initial.warnings_),
    )


def run_pu_pipeline(pu, method="SPY+iSVM", feature_set="X", spy_cfg=None,
                    svm_cfg=None, max_iters=50):
    """Compose the SPY step with the optional iSVM refinement."""
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    split = spy_step(pu, feature_set=feature_set, cfg=spy_cfg)
    if method == "SPY+iSVM":
        split = isvm_refine(pu, split, feature_set=feature_set,
                            svm_cfg=svm_cfg, max_iters=max_iters)
    return split


# ---------------------------------------------------------------------------
# coefficient export (slope-chart data)


def export_coefficients(model, feature_names):
    """Ranked coefficient table for a trained linear SVM.

    Coefficients are normalized by the maximum absolute value and sorted by
    absolute magnitude; an all-zero weight vector yields an all-zero table.
    """
    w = np.asarray(model.weights, dtype=float)
    if len(feature_names) != w.size:
        raise ConfigError("feature_names length must match the weight vector")
    max_abs = np.abs(w).max()
    normalized = w / max_abs if max_abs > 0 else np.zeros_like(w)
    order = np.argsort(-np.abs(w), kind="stable")
    table = pd.DataFrame({
        "feature": np.asarray(feature_names, dtype=object)[order],
        "coefficient": w[order],
        "normalized": normalized[order],
        "rank": np.arange(1, w.size + 1),
    })
    table.attrs["all_zero"] = bool(max_abs == 0)
    return table


def compare_coefficient_tables(z_table, x_table):
    """Merge Z-trained and X-trained tables for slope-chart plotting.

    Every Z feature appears in both columns; features present only in the
    X-trained model are marked newly introduced with a zero left value.
    """
    z = z_table.set_index("feature")["normalized"]
    x = x_table.set_index("feature")["normalized"]
    features = list(x.index)
    rows = []
    for f in features:
        rows.append((f, float(z.get(f, 0.0)), float(x[f]), f not in z.index))
    return pd.DataFrame(rows, columns=["feature", "normalized_z", "normalized_x",
                                       "newly_introduced"])
