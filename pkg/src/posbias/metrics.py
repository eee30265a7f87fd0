"""Ranking and exposure metrics: Recall@k, IPS-NDCG@k, ARP@k and ECS@X.

Aggregates that have no qualifying session return ``nan`` rather than zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import InteractionLog, PositionBiasCurve
from .skewfit import PopularityHistogram

# relative slack for the cumulative-share comparison in ECS
_ECS_RTOL = 1e-12


@dataclass(frozen=True)
class EvalSession:
    """One evaluation instance: a ranking under test and the logged interactions.

    ``logged_positions`` maps each attributed item to the 1-based position at
    which it was shown when the interaction was logged.
    """

    segment: int
    slate: tuple
    attributed: frozenset = frozenset()
    logged_positions: dict = field(default_factory=dict)


@dataclass
class MetricReport:
    metric: str
    parameter: float
    value: float
    variant: str = ""
    iteration: Optional[int] = None
    n_sessions: int = 0
    delta_vs_baseline: Optional[float] = None


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def recall_at_k(sessions: Sequence[EvalSession], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    values = [
        len(s.attributed & set(s.slate[:k])) / len(s.attributed)
        for s in sessions
        if s.attributed
    ]
    return float(np.mean(values)) if values else math.nan


def dcg(gains_in_order: Sequence[float], k: int) -> float:
    g = np.asarray(gains_in_order[:k], dtype=float)
    return float(np.dot(g, _discounts(len(g))))


def ndcg_from_gains(gains_in_order, all_gains, k: int) -> float:
    """DCG of ``gains_in_order`` over the ideal DCG of ``all_gains``; nan if IDCG is 0."""
    ideal = dcg(sorted(all_gains, reverse=True), k)
    if ideal <= 0:
        return math.nan
    return dcg(gains_in_order, k) / ideal


def ips_ndcg_at_k(
    sessions: Sequence[EvalSession], k: int, curve: Optional[PositionBiasCurve]
) -> float:
    """NDCG@k where each attributed item gains ``1 / bias(logged position)``.

    ``curve=None`` gives unweighted binary NDCG.
    """
    values = []
    for s in sessions:
        if not s.attributed:
            continue
        gains = {
            i: 1.0 if curve is None else 1.0 / curve.at(s.logged_positions[i])
            for i in s.attributed
        }
        score = ndcg_from_gains([gains.get(i, 0.0) for i in s.slate], list(gains.values()), k)
        if not math.isnan(score):
            values.append(score)
    return float(np.mean(values)) if values else math.nan


def arp_at_k(slates: Sequence[Sequence[int]], k: int, popularity_table) -> float:
    """Mean over sessions of the mean popularity count of the top-k items."""
    table = np.asarray(popularity_table, dtype=float)
    values = []
    for slate in slates:
        top = np.asarray(slate[:k], dtype=np.int64)
        if len(top) == 0:
            continue
        inside = top < len(table)
        pops = np.where(inside, table[np.where(inside, top, 0)], 0.0)
        values.append(pops.mean())
    return float(np.mean(values)) if values else math.nan


def arp_matrix(slates: np.ndarray, k: int, popularity_table) -> float:
    """Vectorised :func:`arp_at_k` for equal-length slates."""
    table = np.asarray(popularity_table, dtype=float)
    if len(slates) == 0:
        return math.nan
    top = np.asarray(slates)[:, :k]
    return float(table[top].mean(axis=1).mean())


def ecs_at_x(histogram: PopularityHistogram, x: float, interpolate: bool = False) -> float:
    """Smallest share of items whose interactions reach fraction ``x`` of the total.

    With ``interpolate`` the last item counts fractionally, by the part of its
    interactions needed to reach the target, so the value varies continuously.
    """
    if not 0.0 < x <= 1.0:
        raise ValueError("X must lie in (0, 1]")
    total = histogram.total
    if total == 0:
        return math.nan
    counts = np.sort(histogram.counts)[::-1]
    cum = np.cumsum(counts)
    target = x * total
    m = int(np.argmax(cum >= target * (1.0 - _ECS_RTOL))) + 1
    if interpolate:
        before = cum[m - 2] if m > 1 else 0
        frac = min(max((target - before) / counts[m - 1], 0.0), 1.0)
        return (m - 1 + frac) / histogram.n_items
    return m / histogram.n_items


def true_ndcg(
    segments: np.ndarray, slates: np.ndarray, relevance: np.ndarray, k: int,
    candidates: Optional[np.ndarray] = None,
) -> float:
    """Mean NDCG@k of served slates with true relevance ``p[u, i]`` as gains.

    The ideal ordering is over ``candidates`` (default: the slate items).
    """
    slates = np.asarray(slates)
    cands = slates if candidates is None else np.asarray(candidates)
    gains = relevance[segments[:, None], slates[:, :k]]
    ideal = -np.sort(-relevance[segments[:, None], cands], axis=1)[:, :k]
    disc = _discounts(gains.shape[1])
    idcg = ideal @ _discounts(ideal.shape[1])
    ok = idcg > 0
    if not ok.any():
        return math.nan
    return float(np.mean((gains @ disc)[ok] / idcg[ok]))


def eval_sessions_from_log(log: InteractionLog, reranked: Optional[np.ndarray] = None) -> list:
    """Build evaluation sessions from a logged iteration.

    ``reranked`` holds the policy-under-test ordering of each logged slate; by
    default the logged order itself is evaluated.
    """
    slates = log.items if reranked is None else np.asarray(reranked)
    sessions = []
    for row in range(len(log)):
        items = log.items[row]
        hits = np.nonzero(log.clicked[row])[0]
        sessions.append(
            EvalSession(
                segment=int(log.segment[row]),
                slate=tuple(int(i) for i in slates[row]),
                attributed=frozenset(int(items[j]) for j in hits),
                logged_positions={int(items[j]): int(j) + 1 for j in hits},
            )
        )
    return sessions


def relative_delta(value: float, baseline: float) -> float:
    if baseline == 0 or math.isnan(baseline) or math.isnan(value):
        return math.nan
    return (value - baseline) / baseline
