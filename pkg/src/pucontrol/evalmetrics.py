"""Scoring of a PU split against ground truth.

The confusion semantics are causal-flavored: the *positive* class of the
evaluation is the true controls, because the task under test is control
recovery. Counting is restricted to the unlabeled pool; labeled positives
(including restored spies) never enter the counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
import pandas as pd

from .errors import ConfigError


@dataclass
class ConfusionCounts:
    tp: int  # true controls recovered as reliable controls
    fp: int  # hidden treated wrongly selected as controls
    fn: int  # true controls not recovered
    tn: int  # hidden treated correctly left out

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ConfigError("confusion counts must be non-negative")


def confusion(split, truth):
    """Count control recovery over the unlabeled pool of a PUSplit.

    ``truth`` maps unit id to true treatment (array indexed by id, or a
    mapping). Labeled positives are excluded from counting.
    """
    def lookup(uid):
        try:
            value = truth[uid]
        except (IndexError, KeyError):
            raise ConfigError(f"no ground truth for unit {uid}") from None
        if value not in (0, 1):
            raise ConfigError(f"ground truth for unit {uid} must be 0 or 1")
        return int(value)

    selected = np.asarray(split.reliable_control_ids)
    rest = np.asarray(split.remaining_unlabeled_ids)
    tp = sum(1 for u in selected if lookup(u) == 0)
    fp = len(selected) - tp
    fn = sum(1 for u in rest if lookup(u) == 0)
    tn = len(rest) - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num, den):
    """Exact ratio as Fraction, or None when the denominator is zero."""
    return None if den == 0 else Fraction(num, den)


def control_recall(c):
    return _ratio(c.tp, c.tp + c.fn)


def control_precision(c):
    return _ratio(c.tp, c.tp + c.fp)


def contamination_rate(c):
    return _ratio(c.fp, c.tp + c.fp)


def treated_leakage(c):
    return _ratio(c.fp, c.fp + c.tn)


def render3(value):
    """Render an exact ratio to 3 decimals (half-up); None stays undefined."""
    if value is None:
        return None
    d = Decimal(value.numerator) / Decimal(value.denominator)
    return float(d.quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


@dataclass
class PUEvalReport:
    counts: ConfusionCounts
    control_recall: float | None
    control_precision: float | None
    contamination_rate: float | None
    treated_leakage: float | None
    metadata: dict

    def to_row(self):
        c = self.counts
        row = dict(self.metadata)
        row.update({
            "n_unlabeled_controls": c.tp + c.fn,
            "n_unlabeled_treated": c.fp + c.tn,
            "sel_controls": c.tp,
            "sel_treated": c.fp,
            "nonsel_controls": c.fn,
            "nonsel_treated": c.tn,
            "recall": self.control_recall,
            "precision": self.control_precision,
            "contamination": self.contamination_rate,
            "leakage": self.treated_leakage,
        })
        return row


def evaluate_split(split, truth, metadata=None):
    """Full evaluation report for one PU run (one Table-style row)."""
    c = confusion(split, truth)
    return PUEvalReport(
        counts=c,
        control_recall=render3(control_recall(c)),
        control_precision=render3(control_precision(c)),
        contamination_rate=render3(contamination_rate(c)),
        treated_leakage=render3(treated_leakage(c)),
        metadata=dict(metadata or {}),
    )


def report_frame(reports):
    """Stack evaluation reports into the delimited report layout."""
    return pd.DataFrame([r.to_row() for r in reports])
