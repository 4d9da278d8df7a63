"""Population summaries over document-topic mixtures."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ParameterError, UndefinedAgeError, UndefinedMetricError, ZeroMassError


def ages_array(metadata, doc_ids: Sequence[str]) -> np.ndarray:
    """``D x 2`` array of (age_min, age_max); NaN where unknown."""
    out = np.full((len(doc_ids), 2), np.nan)
    for i, doc_id in enumerate(doc_ids):
        m = metadata.get(doc_id)
        if m is not None:
            out[i] = (np.nan if m.age_min is None else m.age_min,
                      np.nan if m.age_max is None else m.age_max)
    return out


def eligible(ages: np.ndarray, t_age: float) -> np.ndarray:
    """Documents whose recorded age range contains ``t_age`` (inclusive)."""
    ages = np.asarray(ages, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return (ages[:, 0] <= t_age) & (t_age <= ages[:, 1])


def _mean_over_eligible(values: np.ndarray, ages, t_age) -> float:
    mask = eligible(ages, t_age)
    if not mask.any():
        raise UndefinedAgeError(f"no document covers age {t_age}")
    return float(values[mask].mean())


def prevalence_at_age(theta: np.ndarray, ages: np.ndarray, t_age: float, km: int) -> float:
    return _mean_over_eligible(np.asarray(theta)[:, km], ages, t_age)


def baseline_prevalence(counts: np.ndarray, ages: np.ndarray, t_age: float, k: int) -> float:
    return _mean_over_eligible(np.asarray(counts, dtype=np.float64)[:, k], ages, t_age)


def relative_prevalence(rhos) -> np.ndarray:
    rhos = np.asarray(rhos, dtype=np.float64)
    total = rhos.sum()
    if not total > 0:
        raise ZeroMassError("prevalence curve has zero total mass")
    return rhos / total


@dataclass
class PrevalenceCurve:
    subtopic: int
    ages: list[float]
    rho: np.ndarray
    rho_rel: np.ndarray


def prevalence_curve(values: np.ndarray, ages: np.ndarray, grid: Sequence[float], column: int) -> PrevalenceCurve:
    """Absolute and relative prevalence of one column over an age grid.

    Ages no document covers are left out of the curve.
    """
    kept, rho = [], []
    for a in grid:
        try:
            rho.append(_mean_over_eligible(np.asarray(values, dtype=np.float64)[:, column], ages, a))
        except UndefinedAgeError:
            continue
        kept.append(a)
    rho = np.asarray(rho)
    if rho.size == 0:
        raise UndefinedAgeError("no age of the grid is covered by any document")
    try:
        rel = relative_prevalence(rho)
    except ZeroMassError:
        rel = np.zeros_like(rho)
    return PrevalenceCurve(column, kept, rho, rel)


def auroc(scores, labels) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class RankingEval:
    order: list
    labels: np.ndarray
    precision_at: dict[int, float] = field(default_factory=dict)
    auroc: float = float("nan")


def topk_precision(scores, labels, ks: Sequence[int], doc_ids: Sequence | None = None) -> RankingEval:
    """Precision among the ``K`` highest scores for each requested ``K``.

    Ties in score are broken by ascending ``doc_id`` (position when absent).
    AUROC is NaN when the labels are all of one class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ParameterError("scores and labels differ in length")
    if not set(np.unique(labels).tolist()) <= {0, 1}:
        raise ParameterError("labels must be 0 or 1")
    ks = [int(k) for k in ks]
    if ks and (min(ks) < 1 or max(ks) > scores.size):
        raise ParameterError(f"each K must lie in [1, {scores.size}]")
    ids = np.arange(scores.size) if doc_ids is None else np.asarray(doc_ids)
    order = np.lexsort((ids, -scores))
    hits = np.cumsum(labels[order])
    result = RankingEval([ids[i].item() for i in order], labels[order])
    for k in ks:
        result.precision_at[k] = float(hits[k - 1]) / k
    try:
        result.auroc = auroc(scores, labels)
    except UndefinedMetricError:
        pass
    return result
