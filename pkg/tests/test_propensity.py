import numpy as np
import pandas as pd
import pytest
from scipy import optimize

from pucontrol import propensity
from pucontrol.errors import ConfigError, OverlapError, TrainingError


def _logistic_problem(seed=0, n=200, d=3, beta=None):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, d))
    beta = np.asarray(beta if beta is not None else [0.5, -1.0, 0.8])
    eta = Z @ beta + 0.3
    g = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta)))
    g[:2] = [0, 1]
    return Z, g


def test_logistic_matches_scipy_optimizer():
    # oracle: direct numerical maximization of the penalized likelihood
    Z, g = _logistic_problem(seed=1)
    l2 = 1e-6
    model = propensity.fit_logistic(Z, g, l2=l2)

    def negll(theta):
        return -propensity.penalized_log_likelihood(theta[1:], theta[0], Z, g, l2)

    res = optimize.minimize(negll, np.zeros(Z.shape[1] + 1), method="BFGS",
                            options={"gtol": 1e-10, "maxiter": 2000})
    assert model.converged
    assert abs(model.intercept - res.x[0]) < 1e-6
    assert np.max(np.abs(model.coef - res.x[1:])) < 1e-6


def test_logistic_likelihood_not_improvable():
    Z, g = _logistic_problem(seed=2)
    l2 = 1e-6
    model = propensity.fit_logistic(Z, g, l2=l2)
    base = propensity.penalized_log_likelihood(model.coef, model.intercept, Z, g, l2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        dc = rng.normal(scale=1e-3, size=model.coef.size)
        db = rng.normal(scale=1e-3)
        cand = propensity.penalized_log_likelihood(model.coef + dc,
                                                   model.intercept + db, Z, g, l2)
        assert cand <= base + 1e-10


def test_logistic_deterministic():
    Z, g = _logistic_problem(seed=3)
    a = propensity.fit_logistic(Z, g)
    b = propensity.fit_logistic(Z, g)
    assert np.array_equal(a.coef, b.coef)
    assert a.intercept == b.intercept
    assert a.iterations == b.iterations


def test_logistic_separation_flagged():
    margin = 0.002
    Z = np.concatenate([np.linspace(-2, -margin, 20),
                        np.linspace(margin, 2, 20)]).reshape(-1, 1)
    g = (Z[:, 0] > 0).astype(int)
    with pytest.warns(UserWarning, match="separation"):
        model = propensity.fit_logistic(Z, g, l2=1e-9, max_iters=500)
    assert model.separation_flagged
    assert np.all(np.isfinite(model.coef))


def test_logistic_single_group_rejected():
    with pytest.raises(TrainingError):
        propensity.fit_logistic(np.zeros((5, 2)), np.ones(5))


def test_predict_proba_range_and_monotonicity():
    Z, g = _logistic_problem(seed=4)
    model = propensity.fit_logistic(Z, g)
    p = model.predict_proba(Z)
    assert np.all((p > 0) & (p < 1))
    # scores increase along the fitted coefficient direction
    line = np.outer(np.linspace(-3, 3, 9), model.coef / np.linalg.norm(model.coef))
    assert np.all(np.diff(model.predict_proba(line)) > 0)


# ---------------------------------------------------------------------------
# trimming


def _report(scores, groups):
    table = pd.DataFrame({
        "unit_id": np.arange(len(scores)),
        "group": np.where(np.asarray(groups) == 1, propensity.GROUP_TREATED,
                          propensity.GROUP_CONTROL),
        "score": np.asarray(scores, dtype=float),
        "retained": True,
    })
    return propensity.PropensityReport(table=table)


def test_trim_boundaries_inclusive():
    scores = [0.05, 0.1, 0.35, 0.6, 0.65] * 4
    groups = ([1] * 10 + [0] * 10)
    out = propensity.trim(_report(scores, groups), propensity.TrimConfig(0.1, 0.6))
    kept = out.table[out.table["retained"]]
    assert set(kept["score"]) == {0.1, 0.35, 0.6}
    assert len(kept) == 12


def test_trim_idempotent():
    rng = np.random.default_rng(5)
    scores = rng.uniform(0.01, 0.99, 60)
    groups = rng.integers(0, 2, 60)
    groups[:2] = [0, 1]
    cfg = propensity.TrimConfig(0.2, 0.8)
    once = propensity.trim(_report(scores, groups), cfg)
    twice = propensity.trim(once, cfg)
    pd.testing.assert_frame_equal(once.table, twice.table)


def test_trim_empty_group_raises():
    scores = [0.9] * 12 + [0.3] * 12
    groups = [1] * 12 + [0] * 12
    with pytest.raises(OverlapError, match="treated"):
        propensity.trim(_report(scores, groups), propensity.TrimConfig(0.1, 0.6))


def test_trim_small_group_warns():
    scores = [0.3] * 5 + [0.9] * 20 + [0.3] * 20
    groups = [1] * 25 + [0] * 20
    with pytest.warns(UserWarning, match="only 5 treated"):
        out = propensity.trim(_report(scores, groups), propensity.TrimConfig(0.1, 0.6))
    assert out.retained_counts() == {propensity.GROUP_TREATED: 5,
                                     propensity.GROUP_CONTROL: 20}


def test_trim_config_validation():
    with pytest.raises(ConfigError):
        propensity.TrimConfig(0.6, 0.1)
    with pytest.raises(ConfigError):
        propensity.TrimConfig(-0.1, 0.5)


def test_default_trim_bounds():
    assert (propensity.REAL_DATA_TRIM.lo, propensity.REAL_DATA_TRIM.hi) == (0.1, 0.6)
    assert (propensity.SIMULATED_TRIM.lo, propensity.SIMULATED_TRIM.hi) == (0.05, 0.95)


def test_score_report_layout():
    Z, g = _logistic_problem(seed=6, n=50)
    model = propensity.fit_logistic(Z, g)
    report = propensity.score_report(model, Z, g, np.arange(50))
    assert list(report.table.columns) == ["unit_id", "group", "score", "retained"]
    assert report.table["retained"].all()
    assert len(report.retained_ids) == 50


# ---------------------------------------------------------------------------
# overlap histogram


def test_histogram_counts_sum_to_group_sizes():
    rng = np.random.default_rng(7)
    scores = rng.uniform(0, 1, 80)
    groups = rng.integers(0, 2, 80)
    groups[:2] = [0, 1]
    report = _report(scores, groups)
    hist = propensity.overlap_histogram(report, n_bins=10)
    assert len(hist) == 20
    totals = hist.groupby("group")["count"].sum()
    assert totals[propensity.GROUP_TREATED] == int((np.asarray(groups) == 1).sum())
    assert totals[propensity.GROUP_CONTROL] == int((np.asarray(groups) == 0).sum())


def test_histogram_bin_edges_cover_unit_interval():
    report = _report([0.0, 1.0], [1, 0])
    hist = propensity.overlap_histogram(report, n_bins=4)
    assert hist["bin_lo"].min() == 0.0
    assert hist["bin_hi"].max() == 1.0
    # endpoint scores are counted
    assert hist["count"].sum() == 2


def test_histogram_bins_validation():
    with pytest.raises(ConfigError):
        propensity.overlap_histogram(_report([0.5], [1]), n_bins=1)
