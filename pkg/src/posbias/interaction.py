"""User interaction models for a displayed slate.

Two granularities are provided. In *choice* mode the user picks exactly one
item with probability proportional to relevance (optionally multiplied by the
examination probability of its position). In *examination* mode every slot is
examined independently with probability ``bias(position)`` and clicked when it
is examined and, independently, found relevant.
"""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from .domain import ImpressionRecord, PositionBiasCurve, RankedSlate
from .errors import ConfigError, NoInteractionError


class InteractionMode(str, enum.Enum):
    CHOICE_UNBIASED = "choice_unbiased"
    CHOICE_BIASED = "choice_biased"
    EXAMINATION = "examination"

    @classmethod
    def parse(cls, value) -> "InteractionMode":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown interaction mode {value!r}; expected one of {names}") from None

    @property
    def uses_bias(self) -> bool:
        return self is not InteractionMode.CHOICE_UNBIASED


def _slate_relevance(slate, relevance_row) -> np.ndarray:
    items = np.fromiter(slate, dtype=np.int64)
    return np.asarray(relevance_row, dtype=float)[items]


def _normalize(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if not total > 0:
        raise NoInteractionError("all relevances on the slate are zero")
    return weights / total


def choice_probabilities_unbiased(slate, relevance_row) -> np.ndarray:
    """Choice distribution ``p_i / sum_j p_j`` over the slate."""
    return _normalize(_slate_relevance(slate, relevance_row))


def choice_probabilities_biased(slate, relevance_row, curve: PositionBiasCurve) -> np.ndarray:
    """Choice distribution ``bias(pos_i) p_i / sum_j bias(pos_j) p_j``."""
    rel = _slate_relevance(slate, relevance_row)
    return _normalize(curve.values(len(rel)) * rel)


def sample_choice(probabilities, rng: np.random.Generator) -> int:
    """Draw one slate index from a categorical distribution."""
    cdf = np.cumsum(probabilities)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def simulate_examination_session(
    slate, relevance_row, curve: PositionBiasCurve, rng: np.random.Generator,
    session_id: int = 0, segment: int = 0, iteration: int = 0,
) -> ImpressionRecord:
    slate = slate if isinstance(slate, RankedSlate) else RankedSlate(tuple(slate))
    rel = _slate_relevance(slate, relevance_row)
    bias = curve.values(len(rel))
    examined = rng.random(len(rel)) < bias
    relevant = rng.random(len(rel)) < rel
    return ImpressionRecord(
        session_id=session_id,
        segment=segment,
        slate=slate,
        examined=tuple(examined),
        clicked=tuple(examined & relevant),
        iteration=iteration,
    )


def simulate_choice_session(
    slate, segment: int, relevance_row, curve: Optional[PositionBiasCurve],
    rng: np.random.Generator, session_id: int = 0, iteration: int = 0,
) -> ImpressionRecord:
    """Single-choice session; ``curve=None`` gives the unbiased model.

    A slate with zero total relevance is logged without a click.
    """
    slate = slate if isinstance(slate, RankedSlate) else RankedSlate(tuple(slate))
    n = len(slate)
    if curve is None:
        examined = np.ones(n, dtype=bool)
        try:
            probs = choice_probabilities_unbiased(slate, relevance_row)
        except NoInteractionError:
            probs = None
    else:
        examined = rng.random(n) < curve.values(n)
        try:
            probs = choice_probabilities_biased(slate, relevance_row, curve)
        except NoInteractionError:
            probs = None
    clicked = np.zeros(n, dtype=bool)
    if probs is not None:
        choice = sample_choice(probs, rng)
        clicked[choice] = True
        examined[choice] = True
    return ImpressionRecord(
        session_id=session_id,
        segment=segment,
        slate=slate,
        examined=tuple(examined),
        clicked=tuple(clicked),
        iteration=iteration,
    )


def simulate_batch(
    items: np.ndarray,
    segments: np.ndarray,
    relevance: np.ndarray,
    mode: InteractionMode,
    curve: Optional[PositionBiasCurve],
    rng: np.random.Generator,
) -> tuple:
    """Vectorised session simulation; returns ``(examined, clicked)`` matrices.

    Row ``s`` follows the same model as the single-session functions for slate
    ``items[s]`` shown to segment ``segments[s]``.
    """
    n, length = items.shape
    rel = relevance[segments[:, None], items]
    if mode is InteractionMode.EXAMINATION:
        bias = curve.values(length)
        examined = rng.random((n, length)) < bias
        clicked = examined & (rng.random((n, length)) < rel)
        return examined, clicked

    if mode is InteractionMode.CHOICE_BIASED:
        bias = curve.values(length)
        examined = rng.random((n, length)) < bias
        weights = rel * bias
    else:
        examined = np.ones((n, length), dtype=bool)
        weights = rel
    cdf = np.cumsum(weights, axis=1)
    total = cdf[:, -1]
    u = rng.random(n) * total
    choice = np.minimum((cdf <= u[:, None]).sum(axis=1), length - 1)
    active = total > 0
    clicked = np.zeros((n, length), dtype=bool)
    rows = np.nonzero(active)[0]
    clicked[rows, choice[rows]] = True
    examined[rows, choice[rows]] = True
    return examined, clicked
