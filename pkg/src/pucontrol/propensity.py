"""Propensity modeling on the adjustment set, common-support trimming,
and overlap diagnostics.

The logistic model is fit by Newton iteration (IRLS) on the L2-penalized
Bernoulli log-likelihood; the small default ridge keeps near-separated fits
finite, which is the expected regime when reliable controls were selected
precisely because they differ from the positives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import ConfigError, OverlapError, TrainingError

GROUP_TREATED = "treated"
GROUP_CONTROL = "reliable_control"


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    log_likelihood: float
    iterations: int
    converged: bool
    separation_flagged: bool = False

    def predict_proba(self, Z):
        z = np.asarray(Z, dtype=float) @ self.coef + self.intercept
        return expit(z)


def penalized_log_likelihood(coef, intercept, Z, g, l2):
    """Bernoulli log-likelihood minus the ridge penalty on the coefficients.

    The intercept is not penalized.
    """
    eta = Z @ coef + intercept
    ll = np.sum(g * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * l2 * float(coef @ coef)


def fit_logistic(z_features, group_labels, l2=1e-6, tol=1e-8, max_iters=100):
    """Maximize the L2-penalized Bernoulli log-likelihood by Newton steps.

    Deterministic; the converged flag reflects the actual stopping reason.
    Perfect separation shows up as very large coefficients: the fit still
    converges under the penalty but is flagged.
    """
    Z = np.asarray(z_features, dtype=float)
    g = np.asarray(group_labels, dtype=int)
    if set(np.unique(g)) != {0, 1}:
        raise TrainingError("logistic fit requires both groups present")
    n, d = Z.shape
    X = np.hstack([np.ones((n, 1)), Z])
    pen = np.full(d + 1, l2)
    pen[0] = 0.0  # intercept unpenalized
    beta = np.zeros(d + 1)

    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        eta = X @ beta
        p = expit(eta)
        grad = X.T @ (g - p) - pen * beta
        W = np.maximum(p * (1.0 - p), 1e-12)
        H = (X.T * W) @ X + np.diag(pen)
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break

    coef = beta[1:]
    intercept = float(beta[0])
    ll = penalized_log_likelihood(coef, intercept, Z, g, 0.0)
    separated = bool(np.max(np.abs(coef)) > 1e3) if d else False
    if separated:
        warnings.warn("near-perfect separation detected; coefficients bounded "
                      "only by the ridge penalty")
    return LogisticModel(coef=coef, intercept=intercept, log_likelihood=float(ll),
                         iterations=iterations, converged=converged,
                         separation_flagged=separated)


@dataclass
class TrimConfig:
    lo: float = 0.1
    hi: float = 0.6

    def __post_init__(self):
        if not (0 <= self.lo < self.hi <= 1):
            raise ConfigError("trim bounds need 0 <= lo < hi <= 1")


#: Default bounds mirroring the real-data analyses.
REAL_DATA_TRIM = TrimConfig(0.1, 0.6)
#: Default bounds for simulated runs.
SIMULATED_TRIM = TrimConfig(0.05, 0.95)


@dataclass
class PropensityReport:
    """Per-unit propensity scores with group tags and retention flags."""

    table: pd.DataFrame  # unit_id, group, score, retained
    trim: TrimConfig | None = None

    @property
    def retained_ids(self):
        return self.table.loc[self.table["retained"], "unit_id"].to_numpy()

    def retained_counts(self):
        kept = self.table[self.table["retained"]]
        return {
            GROUP_TREATED: int((kept["group"] == GROUP_TREATED).sum()),
            GROUP_CONTROL: int((kept["group"] == GROUP_CONTROL).sum()),
        }


def score_report(model, z_features, groups, unit_ids):
    """Build an untrimmed PropensityReport from a fitted model."""
    scores = model.predict_proba(z_features)
    groups = np.asarray(groups)
    table = pd.DataFrame({
        "unit_id": np.asarray(unit_ids),
        "group": np.where(groups == 1, GROUP_TREATED, GROUP_CONTROL),
        "score": scores,
        "retained": True,
    })
    return PropensityReport(table=table)


def trim(report, cfg):
    """Retain exactly the units with lo <= score <= hi, in both groups.

    Idempotent. Raises OverlapError when a group retains nothing; warns when
    a group retains fewer than 10 units.
    """
    table = report.table.copy()
    keep = (table["score"] >= cfg.lo) & (table["score"] <= cfg.hi) & table["retained"]
    table["retained"] = keep
    out = PropensityReport(table=table, trim=cfg)
    counts = out.retained_counts()
    for group, count in counts.items():
        if count == 0:
            raise OverlapError(
                f"no {group} units have propensity in [{cfg.lo}, {cfg.hi}]; "
                "widen the trim bounds")
        if count < 10:
            warnings.warn(f"only {count} {group} units retained after trimming")
    return out


def overlap_histogram(report, n_bins=10):
    """Equal-width binned score counts per group over [0, 1].

    Plot-ready: one row per (bin, group); counts per group sum to the group
    sizes in the report.
    """
    if n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    rows = []
    for group, sub in report.table.groupby("group", sort=True):
        counts, _ = np.histogram(sub["score"].to_numpy(), bins=edges)
        for b in range(n_bins):
            rows.append((edges[b], edges[b + 1], group, int(counts[b])))
    return pd.DataFrame(rows, columns=["bin_lo", "bin_hi", "group", "count"])
