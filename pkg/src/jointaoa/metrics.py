"""
Accuracy measures for joint source-number / AOA estimates.

True and estimated AOAs of an instance are paired after sorting both in
ascending order. Metrics that can be undefined return a :class:`Metric`
whose ``defined`` flag is False and whose value is None.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "InstanceOutcome",
    "Metric",
    "F1Table",
    "MetricReport",
    "rmse",
    "p_q_correct",
    "max_abs_errors",
    "success_rate",
    "success_curve",
    "success_rate_by_q",
    "expected_success_rate",
    "expected_success_rate_max",
    "f1_scores",
    "averaged_f1",
    "THETA_TILDE_GRID",
]

THETA_TILDE_GRID = [round(0.1 * i, 1) for i in range(1, 51)]


class Metric(NamedTuple):
    value: float | None
    defined: bool


@dataclass
class InstanceOutcome:
    q_true: int
    aoas_true: list
    q_hat: int
    aoas_hat: list

    def __post_init__(self):
        self.aoas_true = sorted(float(a) for a in self.aoas_true)
        self.aoas_hat = sorted(float(a) for a in self.aoas_hat)
        if len(self.aoas_true) != self.q_true or len(self.aoas_hat) != self.q_hat:
            raise ValueError("AOA list lengths must match the source counts")

    @property
    def count_correct(self) -> bool:
        return self.q_hat == self.q_true


def _percent(count, total) -> float:
    # one formula for every rate so equal counts give identical floats
    return 100.0 * int(count) / total


def rmse(outcomes: Sequence[InstanceOutcome]) -> Metric:
    """RMSE in degrees over the instances with a correct source count.

    Each instance contributes its mean squared error over its Q AOAs; those
    per-instance means are averaged before the square root. Instances with
    Q = 0 carry no angle error and are skipped.
    """
    per_instance = [
        np.mean((np.asarray(o.aoas_true) - np.asarray(o.aoas_hat)) ** 2)
        for o in outcomes
        if o.count_correct and o.q_true > 0
    ]
    if not per_instance:
        return Metric(None, False)
    return Metric(float(np.sqrt(np.mean(per_instance))), True)


def p_q_correct(outcomes: Sequence[InstanceOutcome]) -> float:
    """Percentage of instances with Q-hat == Q."""
    if len(outcomes) == 0:
        raise ValueError("no outcomes")
    return _percent(sum(o.count_correct for o in outcomes), len(outcomes))


def max_abs_errors(outcomes: Sequence[InstanceOutcome]) -> np.ndarray:
    """Largest sorted-pair AOA error per instance; inf where Q-hat != Q."""
    out = np.full(len(outcomes), np.inf)
    for n, o in enumerate(outcomes):
        if o.count_correct:
            if o.q_true == 0:
                out[n] = 0.0
            else:
                out[n] = np.max(np.abs(np.asarray(o.aoas_hat) - np.asarray(o.aoas_true)))
    return out


def success_rate(outcomes: Sequence[InstanceOutcome], theta_tilde: float) -> float:
    """Percentage of instances with the right count and every error <= theta_tilde."""
    if theta_tilde < 0:
        raise ValueError("theta_tilde must be >= 0")
    if len(outcomes) == 0:
        raise ValueError("no outcomes")
    return _percent(np.count_nonzero(max_abs_errors(outcomes) <= theta_tilde), len(outcomes))


def success_curve(outcomes: Sequence[InstanceOutcome], theta_tildes=THETA_TILDE_GRID) -> dict:
    errs = max_abs_errors(outcomes)
    return {float(t): _percent(np.count_nonzero(errs <= t), len(errs)) for t in theta_tildes}


def success_rate_by_q(outcomes: Sequence[InstanceOutcome], theta_tilde: float) -> dict:
    """Success rate restricted to the instances of each true source count."""
    groups: dict = {}
    for o in outcomes:
        groups.setdefault(o.q_true, []).append(o)
    return {q: success_rate(groups[q], theta_tilde) for q in sorted(groups)}


def expected_success_rate_max(Q: int, M: int) -> Metric:
    """Share of uniform AOA draws landing in distinct, non-adjacent segments."""
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if M < 2 * Q - 1:
        return Metric(0.0, False)
    return Metric(100.0 * math.comb(M + 1 - Q, Q) * math.factorial(Q) / M**Q, True)


def expected_success_rate(theta_tilde: float, delta_theta: float, Q, M: int, weights=None) -> Metric:
    """Success rate of ideal classifiers for uniform AOAs, in percent.

    ``Q`` may be a sequence of source counts, averaged with ``weights``
    (uniform by default).
    """
    if theta_tilde < 0:
        raise ValueError("theta_tilde must be >= 0")
    if np.ndim(Q) > 0:
        qs = [int(q) for q in Q]
        w = np.ones(len(qs)) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        parts = [expected_success_rate(theta_tilde, delta_theta, q, M) for q in qs]
        return Metric(
            float(sum(wi * p.value for wi, p in zip(w, parts))), all(p.defined for p in parts)
        )
    top = expected_success_rate_max(int(Q), M)
    half = delta_theta / 2.0
    if theta_tilde < half:
        return Metric(top.value * (theta_tilde / half) ** int(Q), top.defined)
    return top


@dataclass
class F1Table:
    """Per-classifier F1 over label subsets; ``valid[j][k]`` is False when tp = 0."""

    f1: list
    valid: list
    cardinalities: list

    def to_dict(self) -> dict:
        return {
            "f1": [[float(x) if v else None for x, v in zip(f, ok)] for f, ok in zip(self.f1, self.valid)],
        }


def _labels(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        # first maximum wins ties
        return np.argmax(x, axis=1)
    return x.astype(np.int64)


def f1_scores(predictions: Sequence, targets: Sequence, framework) -> F1Table:
    """F1 per (classifier, label subset) after booleanizing predictions by argmax.

    ``predictions[j]`` is a (P, 2^k_j) probability matrix or class labels;
    ``targets[j]`` is one-hot rows or class labels.
    """
    if len(predictions) != framework.classifier_count or len(targets) != framework.classifier_count:
        raise ValueError("need one prediction and one target array per classifier")
    f1s, valids, cards = [], [], []
    for pred, targ, subsets in zip(predictions, targets, framework.subsets):
        K = len(subsets)
        p = _labels(pred)
        t = _labels(targ)
        tp = np.bincount(p[p == t], minlength=K)[:K]
        fp = np.bincount(p, minlength=K)[:K] - tp
        fn = np.bincount(t, minlength=K)[:K] - tp
        valid = tp > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            f1 = np.where(valid, 2.0 * tp / np.maximum(2 * tp + fp + fn, 1), 0.0)
        f1s.append(f1)
        valids.append(valid)
        cards.append(np.array([len(s) for s in subsets]))
    return F1Table(f1s, valids, cards)


def averaged_f1(table: F1Table, framework, cardinality: int) -> Metric:
    """Mean over classifiers of the mean valid F1 at one subset cardinality.

    Classifiers without any valid entry at that cardinality are skipped.
    """
    if not 0 <= cardinality <= framework.k:
        raise ValueError("cardinality must lie in [0, k]")
    inner = []
    for f1, valid, card in zip(table.f1, table.valid, table.cardinalities):
        sel = valid & (card == cardinality)
        if sel.any():
            inner.append(f1[sel].mean())
    if not inner:
        return Metric(None, False)
    return Metric(float(np.mean(inner)), True)


@dataclass
class MetricReport:
    method: str
    scenario: str
    snr_db: float
    delta_theta: float
    L: int | None
    threshold: float | None
    rmse_deg: float | None
    p_q_correct_pct: float
    success_rate_pct: dict
    expected_success_rate_pct: dict
    f1_by_cardinality: dict | None = None
    success_at_1deg_by_q: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            **self.tags,
            "scenario": self.scenario,
            "snr_db": self.snr_db,
            "delta_theta": self.delta_theta,
            "L": self.L,
            "thresholds": self.threshold,
            "rmse": self.rmse_deg,
            "rmse_defined": self.rmse_deg is not None,
            "p_q_correct": self.p_q_correct_pct,
            "success_rate": {f"{k:g}": v for k, v in self.success_rate_pct.items()},
            "expected_success_rate": {
                f"{k:g}": v for k, v in self.expected_success_rate_pct.items()
            },
            "f1": None
            if self.f1_by_cardinality is None
            else {str(k): v for k, v in self.f1_by_cardinality.items()},
            "success_at_1deg_by_q": {str(k): v for k, v in self.success_at_1deg_by_q.items()},
        }
