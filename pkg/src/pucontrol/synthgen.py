"""Simulated datasets over a causal graph with good and bad controls.

Two data-generating processes ship, a linear and a nonlinear one. Both share
the same graph: covariates x1, x11, x2, x22 and the latent u3 drive treatment
assignment and/or the outcome (good controls); m mediates the treatment
effect; x7 proxies the mediator; x9 is a collider of treatment and outcome;
x5 is an M-bias variable fed by the latents u1 and u2; x3, x4, x8 are
neutral. The exported feature set deliberately includes the bad controls and
the outcome itself - the point of the PU step is that they help identify
treatment status even though they must not be adjusted on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import ADJUSTMENT, FEATURE, OUTCOME, TREATMENT, Dataset
from .errors import ConfigError

KINDS = ("linear", "nonlinear")

#: Columns exported for every simulated dataset, in order.
COLUMNS = ("x1", "x11", "x2", "x22", "x3", "x4", "x5", "x7", "x8", "x9", "u3", "m", "t", "y")

#: Backdoor adjustment set of the simulation graph.
ADJUSTMENT_COLS = ("x1", "x11", "x2", "x22", "u3")

#: Adjustment columns observable in practice. u3 is a latent common cause;
#: it is exported for completeness but estimation that mirrors a realistic
#: analyst (and the reference results this package is validated against)
#: treats it as unmeasured.
OBSERVED_ADJUSTMENT_COLS = ("x1", "x11", "x2", "x22")

#: PU feature set: every exported column except the treatment.
FEATURE_COLS = tuple(c for c in COLUMNS if c != "t")


@dataclass
class SimConfig:
    kind: str
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _draw(kind, n, rng):
    """Draw all structural variables; returns a dict of column arrays."""
    x1, x2, x11, x22, x3, x4, x8 = rng.standard_normal((7, n))
    u1, u2, u3 = rng.standard_normal((3, n))
    x5 = 0.6 * u1 + 0.6 * u2 + rng.normal(0.0, 0.1, n)

    if kind == "linear":
        logit = (1.2 * x1 + 0.8 * x2 + 1.4 * x11 + 0.6 * x22 + 0.7 * x4
                 + 1.0 * u1 + 1.0 * u3)
    else:
        logit = (1.2 * np.tanh(x1) + 0.8 * np.sin(x2) + 1.4 * np.tanh(x11)
                 + 0.6 * np.sin(x22) + 0.7 * np.tanh(x4) + 1.0 * u1 + 0.8 * u3 * x1)
    t = rng.binomial(1, _sigmoid(logit))

    eps_m = rng.normal(0.0, 0.1, n)
    eps_y = rng.normal(0.0, 0.1, n)
    eps_x7 = rng.normal(0.0, 0.1, n)
    eps_x9 = rng.normal(0.0, 0.1, n)

    def mediator(t_arm):
        if kind == "linear":
            return 1.5 * t_arm + 0.7 * x8 + 0.5 * x2 + 0.3 * x22 + eps_m
        return (1.5 * t_arm + 0.7 * np.sqrt(np.abs(x8)) + 0.5 * np.log1p(np.abs(x2))
                + 0.3 * x22 + 0.1 * x2 * x8 + eps_m)

    def outcome(m_arm):
        if kind == "linear":
            return (2.0 * m_arm + 0.7 * x1 + 0.5 * x11 + 0.6 * x3
                    + 1.0 * u2 + 1.0 * u3 + eps_y)
        return (2.0 * m_arm ** 2 + 0.7 * x1 + 0.5 * x11 + 0.6 * np.sin(x3)
                + 0.2 * x3 ** 2 + 1.0 * u2 + 1.0 * u3 + eps_y)

    m = mediator(t)
    y = outcome(m)
    x7 = 1.2 * m + eps_x7
    x9 = 1.0 * t + 1.0 * y + eps_x9

    cols = dict(x1=x1, x11=x11, x2=x2, x22=x22, x3=x3, x4=x4, x5=x5, x7=x7,
                x8=x8, x9=x9, u3=u3, m=m, t=t, y=y)
    extra = dict(u1=u1, u2=u2, mediator=mediator, outcome=outcome)
    return cols, extra


def default_roles(include_latents=False):
    roles = {}
    for c in FEATURE_COLS:
        roles[c] = ADJUSTMENT if c in ADJUSTMENT_COLS else FEATURE
    roles["t"] = TREATMENT
    roles["y"] = OUTCOME + "+" + FEATURE
    if include_latents:
        roles["u1"] = FEATURE
        roles["u2"] = FEATURE
        roles["hidden_truth"] = FEATURE
    return roles


def generate(cfg, include_latents=False):
    """Generate a simulated Dataset of ``cfg.n`` units.

    ``include_latents`` additionally exports u1, u2 and a hidden_truth copy
    of the treatment (debug only; never part of the standard PU feature set).
    """
    rng = np.random.default_rng(cfg.seed)
    cols, extra = _draw(cfg.kind, cfg.n, rng)
    df = pd.DataFrame({c: cols[c] for c in COLUMNS})
    if include_latents:
        df["u1"] = extra["u1"]
        df["u2"] = extra["u2"]
        df["hidden_truth"] = cols["t"]
    return Dataset(df=df, roles=default_roles(include_latents))


def true_ate_oracle(kind, n_mc, seed=0):
    """Interventional ATE by paired Monte Carlo.

    Forces treatment on and off over shared exogenous draws and averages the
    outcome difference, so the two arms see identical noise.
    """
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    if n_mc < 10 ** 4:
        raise ConfigError("n_mc must be at least 10^4")
    rng = np.random.default_rng(seed)
    _, extra = _draw(kind, n_mc, rng)
    mediator, outcome = extra["mediator"], extra["outcome"]
    ones = np.ones(n_mc)
    y1 = outcome(mediator(ones))
    y0 = outcome(mediator(0.0 * ones))
    return float(np.mean(y1 - y0))
