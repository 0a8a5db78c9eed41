"""Ranking, threshold and calibration metrics."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import _stable_sigmoid as expit


class MetricError(ValueError):
    pass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(int)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0/1")
    return scores, labels


def average_ranks(x):
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels):
    """Mann-Whitney statistic from the rank sum of the positives."""
    scores, labels = _check(scores, labels)
    P = int(labels.sum())
    N = labels.size - P
    if P == 0 or N == 0:
        raise MetricError("AUROC needs at least one positive and one negative")
    rank_sum = average_ranks(scores)[labels == 1].sum()
    return float((rank_sum - P * (P + 1) / 2.0) / (P * N))


def aupr(scores, labels):
    """Average precision: sum_k (R_k - R_{k-1}) P_k over the descending-score sweep.

    Equal scores keep their input order (stable sort).
    """
    scores, labels = _check(scores, labels)
    P = int(labels.sum())
    if P == 0:
        raise MetricError("AUPR needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    hits = np.flatnonzero(labels[order] == 1)
    # each hit adds (1/P) * tp/k; summing float terms plus their exact rounding
    # residuals keeps the total correctly rounded
    terms = []
    for tp, k in enumerate(hits + 1, start=1):
        exact = Fraction(tp, int(k) * P)
        q = float(exact)
        terms.append(q)
        terms.append(float(exact - Fraction(q)))
    return math.fsum(terms)


@dataclass
class ClassificationMetrics:
    f1: float
    accuracy: float
    precision: float
    recall: float
    precision_undefined: bool = False
    recall_undefined: bool = False


def classification_metrics(scores, labels, threshold=0.5):
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    prec_undef = tp + fp == 0
    rec_undef = tp + fn == 0
    precision = 0.0 if prec_undef else tp / (tp + fp)
    recall = 0.0 if rec_undef else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    accuracy = (tp + tn) / labels.size if labels.size else 0.0
    return ClassificationMetrics(f1, accuracy, precision, recall, prec_undef, rec_undef)


def pearson(x, y):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size or x.size < 2:
        raise MetricError("pearson needs two equal-length vectors of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(dx * dx)), np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise MetricError("correlation undefined for a constant vector")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


def uncertainty_error_correlation(predictions, labels):
    """Pearson r between predicted variance exp(s) and squared error (p - y)^2.

    ``predictions`` is a sequence of objects with ``probability`` and
    ``variance`` attributes (e.g. PredictionOutput).
    """
    if len(predictions) < 2:
        raise MetricError("need at least two predictions")
    prob = np.array([p.probability for p in predictions], dtype=float)
    var = np.array([p.variance for p in predictions], dtype=float)
    return _variance_error_r(prob, var, labels)


def _variance_error_r(probabilities, variances, labels):
    probabilities, labels = _check(probabilities, labels)
    return pearson(variances, (probabilities - labels) ** 2)


def macro_f1(true_classes, predicted_classes, num_classes):
    """Unweighted mean of one-vs-rest F1 over ``num_classes`` classes."""
    t = np.asarray(true_classes).reshape(-1)
    p = np.asarray(predicted_classes).reshape(-1)
    scores = []
    for c in range(num_classes):
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


@dataclass
class EvalReport:
    auroc: float
    aupr: float
    f1: float
    accuracy: float
    precision: float
    recall: float
    uncertainty_error_correlation: float
    positives: int
    negatives: int
    prevalence: float
    flags: list = field(default_factory=list)

    def to_text(self):
        lines = []
        for key, val in asdict(self).items():
            if key == "flags":
                val = ",".join(val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        kwargs = {}
        for key in cls.__dataclass_fields__:
            val = raw[key]
            if key == "flags":
                kwargs[key] = [v for v in val.split(",") if v]
            elif key in ("positives", "negatives"):
                kwargs[key] = int(val)
            else:
                kwargs[key] = float(val)
        return cls(**kwargs)


def evaluate_predictions(mu, s, labels, threshold=0.5):
    """EvalReport from logits, log-variances and binary labels."""
    mu = np.asarray(mu, dtype=float)
    labels = np.asarray(labels).astype(int)
    prob = expit(mu)
    var = np.exp(np.asarray(s, dtype=float))
    flags = []
    cm = classification_metrics(prob, labels, threshold)
    if cm.precision_undefined:
        flags.append("precision_undefined")
    if cm.recall_undefined:
        flags.append("recall_undefined")
    try:
        corr = _variance_error_r(prob, var, labels)
    except MetricError:
        corr = float("nan")
        flags.append("correlation_undefined")
    P = int(labels.sum())
    return EvalReport(
        auroc=auroc(prob, labels),
        aupr=aupr(prob, labels),
        f1=cm.f1,
        accuracy=cm.accuracy,
        precision=cm.precision,
        recall=cm.recall,
        uncertainty_error_correlation=corr,
        positives=P,
        negatives=int(labels.size - P),
        prevalence=P / labels.size,
        flags=flags,
    )
