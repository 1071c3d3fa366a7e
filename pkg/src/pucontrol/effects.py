"""ATE estimation on the trimmed sample.

Four estimators run on identical inputs: outcome regression (OLS with the
treatment indicator), self-normalized inverse propensity weighting (Hajek),
k-nearest-neighbor Mahalanobis matching with bidirectional counterfactual
imputation, and a T-learner over regression forests. Inference is classical
for OLS and percentile-bootstrap for the rest; the T-learner reports no
p-value.

Estimators consume adjustment (Z) columns only; the wider PU feature set
never enters effect estimation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats
from scipy.spatial.distance import cdist
from sklearn.ensemble import RandomForestRegressor

from .errors import ConfigError, EstimationError

METHOD_OLS = "linear_regression"
METHOD_IPW = "ipw"
METHOD_MATCHING = "matching"
METHOD_TLEARNER = "t_learner"


@dataclass
class ATEEstimate:
    method: str
    ate: float
    ci_lo: float
    ci_hi: float
    p_value: float | None
    n_treated: int
    n_control: int

    def __post_init__(self):
        if not self.ci_lo <= self.ate <= self.ci_hi:
            raise EstimationError("confidence interval must contain the point estimate")
        if self.p_value is not None and not 0 <= self.p_value <= 1:
            raise EstimationError("p-value must be in [0,1]")


@dataclass
class BootstrapConfig:
    n_replicates: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_replicates < 100:
            raise ConfigError("bootstrap needs at least 100 replicates")


@dataclass
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 6
    min_leaf: int = 5
    bootstrap: bool = True
    replicate_trees: int = 25  # reduced size for bootstrap refits
    seed: int = 0


def _groups(t):
    t = np.asarray(t, dtype=int)
    treated = np.where(t == 1)[0]
    control = np.where(t == 0)[0]
    if treated.size == 0 or control.size == 0:
        raise EstimationError("both treated and control units are required")
    return treated, control


def _bootstrap_ci(point, estimator, treated, control, cfg):
    """Stratified percentile bootstrap over units.

    Replicate b draws its RNG from (seed, b), so results are independent of
    execution order. Returns (ci_lo, ci_hi, two-sided p for H0: effect = 0).
    """
    B = cfg.n_replicates
    reps = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng([cfg.seed, b])
        idx = np.concatenate([
            rng.choice(treated, size=treated.size, replace=True),
            rng.choice(control, size=control.size, replace=True),
        ])
        reps[b] = estimator(idx)
    lo, hi = np.percentile(reps, [2.5, 97.5])
    # the percentile interval is widened, if needed, to cover the estimate
    lo, hi = min(lo, point), max(hi, point)
    p = 2.0 * min((1 + np.sum(reps <= 0.0)) / (B + 1),
                  (1 + np.sum(reps >= 0.0)) / (B + 1))
    return float(lo), float(hi), float(min(p, 1.0))


# ---------------------------------------------------------------------------
# outcome regression


def ate_ols(y, t, z_features):
    """OLS of y on [1, t, Z]; the treatment coefficient is the ATE.

    CI and two-sided p-value come from the classical normal-theory standard
    error of that coefficient.
    """
    y = np.asarray(y, dtype=float)
    treated, control = _groups(t)
    Z = np.atleast_2d(np.asarray(z_features, dtype=float))
    n = y.size
    X = np.column_stack([np.ones(n), np.asarray(t, dtype=float), Z])
    p = X.shape[1]
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        _, _, piv = sla.qr(X, pivoting=True, mode="economic")
        names = ["intercept", "treatment"] + [f"z{j}" for j in range(Z.shape[1])]
        dropped = [names[j] for j in piv[rank:]]
        raise EstimationError(f"design matrix is rank deficient; collinear columns: {dropped}")
    if n <= p:
        raise EstimationError("not enough units for OLS inference")

    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sigma2 = resid @ resid / (n - p)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = float(np.sqrt(cov[1, 1]))
    point = float(beta[1])
    zq = stats.norm.ppf(0.975)
    pval = float(2 * stats.norm.sf(abs(point) / se)) if se > 0 else 0.0
    return ATEEstimate(METHOD_OLS, point, point - zq * se, point + zq * se,
                       pval, treated.size, control.size)


# ---------------------------------------------------------------------------
# inverse propensity weighting (Hajek)


def hajek(y, t, scores):
    """Self-normalized IPW difference of weighted group means."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=int)
    e = np.asarray(scores, dtype=float)
    w1 = 1.0 / e[t == 1]
    w0 = 1.0 / (1.0 - e[t == 0])
    return float(np.sum(w1 * y[t == 1]) / np.sum(w1)
                 - np.sum(w0 * y[t == 0]) / np.sum(w0))


def ate_ipw(y, t, scores, bootstrap=None):
    """Hajek IPW estimate with percentile-bootstrap CI and p-value."""
    bootstrap = bootstrap or BootstrapConfig()
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=int)
    e = np.asarray(scores, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise EstimationError("propensity scores must lie strictly in (0,1); "
                              "trim to the common-support region first")
    treated, control = _groups(t)
    point = hajek(y, t, e)
    lo, hi, p = _bootstrap_ci(point, lambda idx: hajek(y[idx], t[idx], e[idx]),
                              treated, control, bootstrap)
    return ATEEstimate(METHOD_IPW, point, lo, hi, p, treated.size, control.size)


# ---------------------------------------------------------------------------
# nearest-neighbor matching


def _mahalanobis_vi(Z):
    cov = np.atleast_2d(np.cov(Z, rowvar=False, ddof=1))
    try:
        if np.linalg.cond(cov) > 1e12:
            raise np.linalg.LinAlgError
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        warnings.warn("singular covariance for Mahalanobis distance; "
                      "falling back to diagonal scaling")
        d = np.diag(cov).copy()
        d[d <= 0] = 1.0
        return np.diag(1.0 / d)


def _matching_point(y, t, D, k):
    """Mean over all units of (observed-or-imputed treated minus control outcome).

    D is a full pairwise distance matrix; ties break toward the lowest index
    (stable argsort) and matching is with replacement.
    """
    treated = np.where(t == 1)[0]
    control = np.where(t == 0)[0]

    def impute(src, pool):
        kk = min(k, pool.size)
        nn = np.argsort(D[np.ix_(src, pool)], axis=1, kind="stable")[:, :kk]
        return y[pool[nn]].mean(axis=1)

    ite = np.empty(y.size)
    ite[treated] = y[treated] - impute(treated, control)
    ite[control] = impute(control, treated) - y[control]
    return float(ite.mean())


def ate_matching(y, t, z_features, k=1, bootstrap=None):
    """Bidirectional k-NN Mahalanobis matching on the adjustment features."""
    bootstrap = bootstrap or BootstrapConfig()
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=int)
    Z = np.atleast_2d(np.asarray(z_features, dtype=float))
    if Z.shape[0] != y.size:
        Z = Z.T
    treated, control = _groups(t)
    if k < 1:
        raise ConfigError("k must be >= 1")

    VI = _mahalanobis_vi(Z)
    D = cdist(Z, Z, "mahalanobis", VI=VI)

    point = _matching_point(y, t, D, k)
    lo, hi, p = _bootstrap_ci(
        point,
        lambda idx: _matching_point(y[idx], t[idx], D[np.ix_(idx, idx)], k),
        treated, control, bootstrap)
    return ATEEstimate(METHOD_MATCHING, point, lo, hi, p, treated.size, control.size)


# ---------------------------------------------------------------------------
# T-learner over regression forests


@dataclass
class RegressionForest:
    """Regression forest of axis-aligned squared-error trees (scikit-learn backed)."""

    config: ForestConfig
    model: RandomForestRegressor

    def predict(self, Z):
        return self.model.predict(np.atleast_2d(np.asarray(Z, dtype=float)))


def fit_forest(z_features, y, cfg, seed=None, n_trees=None):
    model = RandomForestRegressor(
        n_estimators=n_trees if n_trees is not None else cfg.n_trees,
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_leaf,
        bootstrap=cfg.bootstrap,
        random_state=seed if seed is not None else cfg.seed,
    )
    model.fit(np.atleast_2d(np.asarray(z_features, dtype=float)),
              np.asarray(y, dtype=float))
    return RegressionForest(config=cfg, model=model)


def ate_tlearner(y, t, z_features, forest_cfg=None, bootstrap=None):
    """T-learner: one forest per arm, ATE = mean prediction gap over all units.

    CI via percentile bootstrap with reduced per-replicate tree counts; no
    p-value, matching the convention of reporting the T-learner without one.
    """
    forest_cfg = forest_cfg or ForestConfig()
    bootstrap = bootstrap or BootstrapConfig()
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=int)
    Z = np.atleast_2d(np.asarray(z_features, dtype=float))
    if Z.shape[0] != y.size:
        Z = Z.T
    treated, control = _groups(t)
    if min(treated.size, control.size) < forest_cfg.min_leaf:
        raise EstimationError("a treatment arm is smaller than the minimum leaf "
                              "size; use a smaller min_leaf")

    def fit_gap(idx, n_trees, seed):
        sel_t = idx[t[idx] == 1]
        sel_c = idx[t[idx] == 0]
        f1 = fit_forest(Z[sel_t], y[sel_t], forest_cfg, seed=seed, n_trees=n_trees)
        f0 = fit_forest(Z[sel_c], y[sel_c], forest_cfg, seed=seed + 1, n_trees=n_trees)
        return float(np.mean(f1.predict(Z[idx]) - f0.predict(Z[idx])))

    all_idx = np.arange(y.size)
    point = fit_gap(all_idx, forest_cfg.n_trees, forest_cfg.seed)

    B = bootstrap.n_replicates
    reps = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng([bootstrap.seed, b])
        idx = np.concatenate([
            rng.choice(treated, size=treated.size, replace=True),
            rng.choice(control, size=control.size, replace=True),
        ])
        reps[b] = fit_gap(idx, forest_cfg.replicate_trees,
                          int(rng.integers(2 ** 31 - 2)))
    lo, hi = np.percentile(reps, [2.5, 97.5])
    lo, hi = min(lo, point), max(hi, point)
    return ATEEstimate(METHOD_TLEARNER, point, float(lo), float(hi), None,
                       treated.size, control.size)


# ---------------------------------------------------------------------------


def estimate_all(y, t, z_features, scores, k=1, forest_cfg=None, bootstrap=None):
    """Run all four estimators on identical (trimmed) inputs."""
    return [
        ate_ols(y, t, z_features),
        ate_ipw(y, t, scores, bootstrap=bootstrap),
        ate_matching(y, t, z_features, k=k, bootstrap=bootstrap),
        ate_tlearner(y, t, z_features, forest_cfg=forest_cfg, bootstrap=bootstrap),
    ]
