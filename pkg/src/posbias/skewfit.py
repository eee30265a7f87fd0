"""Popularity histograms, exponential rank fits and the skew statistic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import InteractionLog, PositionBiasCurve
from .errors import DomainError, EmptyHistogramError


@dataclass(frozen=True, eq=False)
class PopularityHistogram:
    """Click counts per item with 1-based popularity ranks.

    Rank 1 is the most clicked item; equal counts are ranked by ascending id, so
    zero-click items take the largest ranks.
    """

    counts: np.ndarray
    ranks: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_items(self) -> int:
        return len(self.counts)

    @property
    def shares(self) -> np.ndarray:
        if self.total == 0:
            raise EmptyHistogramError("histogram has no interactions")
        return self.counts / self.total

    def by_rank(self) -> np.ndarray:
        """Item ids ordered by rank."""
        return np.argsort(self.ranks, kind="stable")

    def sorted_counts(self) -> np.ndarray:
        return self.counts[self.by_rank()]

    def rows(self) -> list:
        """``(rank, item, count, share)`` tuples in rank order."""
        total = self.total
        return [
            (int(self.ranks[i]), int(i), int(self.counts[i]), self.counts[i] / total if total else 0.0)
            for i in self.by_rank()
        ]


def histogram_from_counts(counts) -> PopularityHistogram:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or len(counts) == 0:
        raise DomainError("counts must be a nonempty 1-D array")
    if counts.min() < 0:
        raise DomainError("counts must be nonnegative")
    order = np.lexsort((np.arange(len(counts)), -counts))
    ranks = np.empty(len(counts), dtype=np.int64)
    ranks[order] = np.arange(1, len(counts) + 1)
    return PopularityHistogram(counts, ranks)


def build_histogram(log: InteractionLog, n_items: int) -> PopularityHistogram:
    """Histogram of clicks per item; raises :class:`EmptyHistogramError` without clicks."""
    if len(log) == 0:
        raise EmptyHistogramError("log is empty")
    hist = histogram_from_counts(log.click_counts(n_items))
    if hist.total == 0:
        raise EmptyHistogramError("log contains no clicks")
    return hist


@dataclass(frozen=True)
class PopularityFit:
    lambda_hat: float
    mean_rank: float
    n_observations: int

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "mean_rank": self.mean_rank,
            "n": self.n_observations,
        }


def fit_rank_observations(ranks, weights=None) -> PopularityFit:
    """Exponential MLE ``1 / mean(x)`` over (optionally weighted) rank observations."""
    ranks = np.asarray(ranks, dtype=float)
    weights = np.ones_like(ranks) if weights is None else np.asarray(weights, dtype=float)
    n = weights.sum()
    if n <= 0:
        raise EmptyHistogramError("no rank observations")
    mean_rank = float(np.dot(ranks, weights) / n)
    return PopularityFit(1.0 / mean_rank, mean_rank, int(round(n)))


def fit_exponential_mle(
    histogram: PopularityHistogram, ranks: Optional[np.ndarray] = None
) -> PopularityFit:
    """Fit the rate of an exponential to the popularity rank of every click.

    ``ranks`` overrides the histogram's own ranks (used for frozen-rank
    comparisons across iterations).
    """
    if histogram.total == 0:
        raise EmptyHistogramError("histogram has no interactions")
    ranks = histogram.ranks if ranks is None else np.asarray(ranks)
    return fit_rank_observations(ranks, histogram.counts)


def skew_change(lambda_before: float, lambda_after: float) -> float:
    """Relative change ``(after - before) / before``; positive means more skew."""
    if not lambda_before > 0:
        raise DomainError(f"lambda_before must be positive, got {lambda_before}")
    return (lambda_after - lambda_before) / lambda_before


def weighted_density(lam: float, weight_table) -> np.ndarray:
    """Normalised ``w(x) * lam * exp(-lam * x)`` on the rank grid ``x = 1..len(w)``."""
    w = np.asarray(weight_table, dtype=float)
    if w.ndim != 1 or len(w) == 0:
        raise DomainError("weight table must be a nonempty vector")
    if not np.all(np.isfinite(w)) or w.min() < 0:
        raise DomainError("weights must be finite and nonnegative")
    if not w.max() > 0:
        raise DomainError("weights are all zero")
    if not lam > 0:
        raise DomainError("rate must be positive")
    x = np.arange(1, len(w) + 1, dtype=float)
    dens = w * lam * np.exp(-lam * x)
    if not dens.sum() > 0:
        raise DomainError("density underflows on the rank grid")
    return dens / dens.sum()


def effective_exposure_weights(
    log: InteractionLog, curve: PositionBiasCurve, n_items: int,
    histogram: Optional[PopularityHistogram] = None,
) -> np.ndarray:
    """Mean examination probability of the item at each popularity rank.

    Entry ``x - 1`` averages ``bias(position)`` over every impression of the item
    ranked ``x``; ranks whose item was never shown are NaN.
    """
    hist = histogram if histogram is not None else build_histogram(log, n_items)
    bias = curve.values(log.slate_length)
    per_slot = np.broadcast_to(bias, log.items.shape)
    exposure = np.bincount(log.items.ravel(), weights=per_slot.ravel(), minlength=n_items)
    shown = np.bincount(log.items.ravel(), minlength=n_items)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_item = np.where(shown > 0, exposure / shown, np.nan)
    return per_item[hist.by_rank()]
