"""Data model, CSV ingestion, standardization and hide-and-seek PU engineering.

Columns carry *roles*. A column may hold several roles at once (an
adjustment column is always also a feature; the outcome may double as a
feature for PU learning). Roles are supplied as strings, joined with ``+``
when combined, e.g. ``"adjustment+feature"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError, InsufficientDataError, ParseError

FEATURE = "feature"
ADJUSTMENT = "adjustment"
TREATMENT = "treatment"
OUTCOME = "outcome"
LABEL_INDICATOR = "label_indicator"
UNIT_ID = "unit_id"

_KNOWN_ROLES = {FEATURE, ADJUSTMENT, TREATMENT, OUTCOME, LABEL_INDICATOR, UNIT_ID}


def parse_role_map(role_map):
    """Normalize a {column: role-string} mapping to {column: frozenset}.

    ``adjustment`` implies ``feature``.
    """
    parsed = {}
    for col, value in role_map.items():
        if isinstance(value, str):
            roles = {r.strip() for r in value.split("+")}
        else:
            roles = set(value)
        unknown = roles - _KNOWN_ROLES
        if unknown:
            raise ConfigError(f"unknown role(s) {sorted(unknown)} for column {col!r}")
        if ADJUSTMENT in roles:
            roles.add(FEATURE)
        parsed[col] = frozenset(roles)
    return parsed


def roles_to_string(roles):
    order = [UNIT_ID, TREATMENT, OUTCOME, LABEL_INDICATOR, ADJUSTMENT, FEATURE]
    return "+".join(r for r in order if r in roles)


@dataclass
class Dataset:
    """A unit-by-column table with per-column roles.

    All mapped columns are numeric with no missing values; treatment and
    label-indicator columns are binary {0,1}.
    """

    df: pd.DataFrame
    roles: dict

    def __post_init__(self):
        self.roles = parse_role_map(self.roles)
        missing = [c for c in self.roles if c not in self.df.columns]
        if missing:
            raise ConfigError(f"role map names absent columns: {missing}")
        self.df = self.df[[c for c in self.df.columns if c in self.roles]].reset_index(drop=True)
        self._validate()

    def _validate(self):
        def cols_with(role):
            return [c for c in self.df.columns if role in self.roles[c]]

        if len(cols_with(TREATMENT)) != 1:
            raise ConfigError("exactly one treatment column is required")
        if len(cols_with(OUTCOME)) != 1:
            raise ConfigError("exactly one outcome column is required")
        if len(cols_with(LABEL_INDICATOR)) > 1:
            raise ConfigError("at most one label-indicator column is allowed")
        if len(cols_with(UNIT_ID)) > 1:
            raise ConfigError("at most one unit-id column is allowed")
        for c in self.df.columns:
            if self.df[c].isna().any():
                rows = self.df.index[self.df[c].isna()].tolist()
                raise ParseError(f"missing values in column {c!r} at rows {rows}")
        for c in cols_with(TREATMENT) + cols_with(LABEL_INDICATOR):
            vals = self.df[c].to_numpy()
            bad = np.where(~np.isin(vals, (0, 1)))[0]
            if bad.size:
                raise DomainError(
                    f"column {c!r} must be binary {{0,1}}; offending rows: {bad.tolist()}"
                )

    # -- role-derived views ------------------------------------------------

    @property
    def n_units(self):
        return len(self.df)

    def _cols(self, role):
        return [c for c in self.df.columns if role in self.roles[c]]

    @property
    def feature_cols(self):
        return self._cols(FEATURE)

    @property
    def adjustment_cols(self):
        return self._cols(ADJUSTMENT)

    @property
    def treatment_col(self):
        return self._cols(TREATMENT)[0]

    @property
    def outcome_col(self):
        return self._cols(OUTCOME)[0]

    @property
    def label_col(self):
        cols = self._cols(LABEL_INDICATOR)
        return cols[0] if cols else None

    @property
    def unit_ids(self):
        cols = self._cols(UNIT_ID)
        if cols:
            return self.df[cols[0]].to_numpy(dtype=int)
        return np.arange(self.n_units)

    @property
    def treatment(self):
        return self.df[self.treatment_col].to_numpy(dtype=int)

    @property
    def outcome(self):
        return self.df[self.outcome_col].to_numpy(dtype=float)

    def features(self, cols=None):
        """Feature matrix (n_units, k) for the given columns (default: all features)."""
        cols = list(cols) if cols is not None else self.feature_cols
        return self.df[cols].to_numpy(dtype=float)


@dataclass
class StandardizationParams:
    """Per-feature mean/sd used for z-scoring; constant columns are flagged."""

    means: dict
    sds: dict
    constant: frozenset = frozenset()


@dataclass
class PUDataset:
    """A dataset under positive-unlabeled observation.

    ``s[i] = 1`` marks a unit observed as treated; ``s[i] = 0`` marks an
    unlabeled unit. ``hidden_truth`` carries the true treatment when the PU
    structure was engineered from fully labeled data.
    """

    base: Dataset
    s: np.ndarray
    hidden_truth: np.ndarray | None = None
    scar_c: float | None = None
    seed: int | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=int)
        if self.s.shape != (self.base.n_units,):
            raise ConfigError("label indicator length must equal n_units")
        if not np.isin(self.s, (0, 1)).all():
            raise DomainError("label indicator must be binary {0,1}")
        if self.hidden_truth is not None:
            # Label noise (s=1 with hidden_truth=0) is not rejected here so
            # that validate_pu_assumptions can report it as a failed check.
            self.hidden_truth = np.asarray(self.hidden_truth, dtype=int)
        if (self.s == 0).sum() == 0:
            raise InsufficientDataError("PU data needs at least one unlabeled unit")

    @property
    def positive_ids(self):
        return self.base.unit_ids[self.s == 1]

    @property
    def unlabeled_ids(self):
        return self.base.unit_ids[self.s == 0]


@dataclass
class AssumptionReport:
    """Diagnostics for the PU assumptions.

    Boolean fields are ``None`` when unverifiable (no hidden truth).
    """

    no_label_noise: bool | None
    controls_in_unlabeled: bool | None
    unlabeled_nonempty: bool
    scar: str  # "by construction" | "assumed"

    def all_pass(self):
        return (
            self.unlabeled_nonempty
            and self.no_label_noise is not False
            and self.controls_in_unlabeled is not False
        )


# ---------------------------------------------------------------------------
# ingestion / serialization


def load_csv(path, role_map):
    """Load a comma-separated file and attach column roles.

    Every key of ``role_map`` must appear in the header. Rows with missing
    values and non-numeric cells in mapped columns are rejected with
    row-indexed errors.
    """
    role_map = parse_role_map(role_map)
    raw = pd.read_csv(path, dtype=str)
    missing = [c for c in role_map if c not in raw.columns]
    if missing:
        raise ConfigError(f"columns {missing} not found in {path}")

    df = pd.DataFrame(index=raw.index)
    for col in role_map:
        cell = raw[col]
        blank = cell.isna() | (cell.str.strip() == "")
        if blank.any():
            raise ParseError(
                f"missing values in column {col!r} at rows {raw.index[blank].tolist()}"
            )
        numeric = pd.to_numeric(cell, errors="coerce")
        bad = numeric.isna()
        if bad.any():
            row = raw.index[bad][0]
            raise ParseError(f"non-numeric cell in column {col!r} at row {row}")
        df[col] = numeric
    tcols = [c for c, r in role_map.items() if TREATMENT in r]
    for c in tcols:
        vals = df[c].to_numpy()
        bad = np.where(~np.isin(vals, (0, 1)))[0]
        if bad.size:
            raise DomainError(f"treatment column {c!r} not in {{0,1}} at row {bad[0]}")
    return Dataset(df=df, roles=role_map)


def write_csv(dataset, path, sidecar=None):
    """Write the dataset as CSV plus a JSON role sidecar (``<path>.roles.json``)."""
    path = Path(path)
    dataset.df.to_csv(path, index=False)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".roles.json")
    meta = {"roles": {c: roles_to_string(r) for c, r in dataset.roles.items()}}
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_csv_with_sidecar(path, sidecar=None):
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".roles.json")
    meta = json.loads(sidecar.read_text())
    return load_csv(path, meta["roles"])


def write_pu_csv(pu, path, sidecar=None):
    """Serialize a PUDataset: base CSV plus ``s``/``hidden_truth`` columns and metadata."""
    path = Path(path)
    df = pu.base.df.copy()
    df["s"] = pu.s
    if pu.hidden_truth is not None:
        df["hidden_truth"] = pu.hidden_truth
    df.to_csv(path, index=False)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".roles.json")
    meta = {
        "roles": {c: roles_to_string(r) for c, r in pu.base.roles.items()},
        "pu": {
            "s_column": "s",
            "hidden_truth_column": "hidden_truth" if pu.hidden_truth is not None else None,
            "scar_c": pu.scar_c,
            "seed": pu.seed,
        },
    }
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_pu_csv(path, sidecar=None):
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".roles.json")
    meta = json.loads(sidecar.read_text())
    pu_meta = meta.get("pu", {})
    s_col = pu_meta.get("s_column", "s")
    truth_col = pu_meta.get("hidden_truth_column")
    raw = pd.read_csv(path)
    base = Dataset(df=raw, roles=meta["roles"])
    s = raw[s_col].to_numpy(dtype=int)
    truth = raw[truth_col].to_numpy(dtype=int) if truth_col else None
    return PUDataset(
        base=base, s=s, hidden_truth=truth,
        scar_c=pu_meta.get("scar_c"), seed=pu_meta.get("seed"),
    )


# ---------------------------------------------------------------------------
# standardization


def standardize(dataset):
    """Z-score the feature columns; returns (new dataset, params).

    Columns that double as treatment/outcome/label indicator are left
    untouched. Constant columns are centered only and flagged.
    """
    if dataset.n_units < 2:
        raise InsufficientDataError("standardization needs at least 2 units")
    skip = {dataset.treatment_col, dataset.outcome_col}
    if dataset.label_col:
        skip.add(dataset.label_col)
    df = dataset.df.copy()
    means, sds, constant = {}, {}, []
    for c in dataset.feature_cols:
        if c in skip:
            continue
        x = df[c].to_numpy(dtype=float)
        mu = x.mean()
        sd = x.std(ddof=1)
        means[c] = mu
        if sd <= 0:
            constant.append(c)
            sds[c] = 1.0
            df[c] = x - mu
        else:
            sds[c] = sd
            df[c] = (x - mu) / sd
    params = StandardizationParams(means=means, sds=sds, constant=frozenset(constant))
    return Dataset(df=df, roles=dict(dataset.roles)), params


def inverse_standardize(dataset, params):
    """Undo :func:`standardize` using the recorded parameters."""
    df = dataset.df.copy()
    for c, mu in params.means.items():
        df[c] = df[c].to_numpy(dtype=float) * params.sds[c] + mu
    return Dataset(df=df, roles=dict(dataset.roles))


def zscore_matrix(F):
    """Z-score the columns of a feature matrix; constant columns are centered only."""
    F = np.asarray(F, dtype=float)
    mu = F.mean(axis=0)
    sd = F.std(axis=0, ddof=1) if F.shape[0] > 1 else np.ones(F.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return (F - mu) / sd


# ---------------------------------------------------------------------------
# hide-and-seek PU engineering


def engineer_pu(dataset, hide_fraction, seed):
    """Engineer a PU dataset by hiding a fraction of the true treated units.

    The hidden treated join the controls in the unlabeled pool (s=0); the
    rest keep s=1. Counts round to the nearest integer with at least one
    unit hidden. The label frequency P(S=1|T=1) is recorded as
    ``1 - hide_fraction``.
    """
    if not 0 < hide_fraction < 1:
        raise DomainError(f"hide_fraction must be in (0,1), got {hide_fraction}")
    t = dataset.treatment
    treated = np.where(t == 1)[0]
    if treated.size < 2:
        raise InsufficientDataError("need at least 2 treated units to engineer PU data")
    if (t == 0).sum() == 0:
        raise InsufficientDataError("need at least 1 control unit to engineer PU data")
    n_hide = max(1, int(round(hide_fraction * treated.size)))
    if n_hide >= treated.size:
        n_hide = treated.size - 1
    rng = np.random.default_rng(seed)
    hidden = rng.choice(treated, size=n_hide, replace=False)
    s = t.copy()
    s[hidden] = 0
    return PUDataset(base=dataset, s=s, hidden_truth=t.copy(),
                     scar_c=1.0 - hide_fraction, seed=seed)


def validate_pu_assumptions(pu):
    """Report which PU assumptions hold, are violated, or cannot be checked."""
    if pu.hidden_truth is None:
        noise = None
        controls = None
    else:
        noise = not ((pu.s == 1) & (pu.hidden_truth == 0)).any()
        controls = bool(((pu.s == 0) & (pu.hidden_truth == 0)).any())
    return AssumptionReport(
        no_label_noise=noise,
        controls_in_unlabeled=controls,
        unlabeled_nonempty=bool((pu.s == 0).any()),
        scar="by construction" if pu.scar_c is not None else "assumed",
    )
