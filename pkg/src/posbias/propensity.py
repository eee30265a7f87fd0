"""Position-bias estimation from click logs with the position-based click model.

The model is ``P(click | u, i, k) = theta[k] * rho[u, i]``: a slot is examined
with probability ``theta[k]`` and the item is relevant with probability
``rho[u, i]``, independently. Both are latent, so they are fitted by EM on the
sufficient statistics ``(impressions, clicks)`` of every observed
(segment, item, position) cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import InteractionLog, PositionBiasCurve
from .errors import DomainError, EstimationError

_EPS = 1e-12


@dataclass
class PropensityFit:
    """Estimated examination curve, normalised so position 1 has weight 1."""

    curve_table: np.ndarray
    beta_hat: float
    em_iterations_used: int
    converged: bool
    log_likelihood_trace: list = field(default_factory=list)

    def curve(self) -> PositionBiasCurve:
        return PositionBiasCurve.tabulated(self.curve_table)

    def to_dict(self) -> dict:
        return {
            "curve_table": [float(v) for v in self.curve_table],
            "beta_hat": float(self.beta_hat),
            "em_iterations_used": int(self.em_iterations_used),
            "converged": bool(self.converged),
            "log_likelihood_trace": [float(v) for v in self.log_likelihood_trace],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PropensityFit":
        return cls(
            curve_table=np.asarray(data["curve_table"], dtype=float),
            beta_hat=float(data["beta_hat"]),
            em_iterations_used=int(data["em_iterations_used"]),
            converged=bool(data["converged"]),
            log_likelihood_trace=list(data.get("log_likelihood_trace", [])),
        )


def fit_power_law(curve_table) -> float:
    """Least-squares slope of ``-log(table[k])`` against ``log(k)``.

    An intercept is included, so a curve that is a power law up to a constant
    factor still yields its exponent.

    Examples
    --------
    >>> round(fit_power_law([1.0, 0.5, 1 / 3]), 12)
    1.0
    """
    table = np.asarray(curve_table, dtype=float)
    if table.ndim != 1 or len(table) < 2:
        raise DomainError("need at least two positions to fit a power law")
    if not np.all((table > 0) & np.isfinite(table)):
        raise DomainError("curve entries must be positive and finite")
    x = np.log(np.arange(1, len(table) + 1))
    y = -np.log(table)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def _position_cells(log: InteractionLog, n_positions: int):
    """Observed (pair, position) cells with impression and click totals."""
    length = log.slate_length
    pair = np.broadcast_to(log.segment[:, None], log.items.shape).astype(np.int64)
    pair = pair * (int(log.items.max()) + 1) + log.items
    pos = np.broadcast_to(np.arange(length), log.items.shape)
    key = (pair * length + pos).ravel()
    cells, inverse = np.unique(key, return_inverse=True)
    n = np.bincount(inverse).astype(float)
    c = np.bincount(inverse, weights=log.clicked.ravel().astype(float))
    pairs, pair_index = np.unique(cells // length, return_inverse=True)
    return pair_index, (cells % length).astype(np.int64), n, c, len(pairs)


def _penalised_loglik(theta, rho, pair_idx, pos_idx, n, c) -> float:
    q = np.clip(theta[pos_idx] * rho[pair_idx], _EPS, 1.0 - _EPS)
    loglik = np.sum(c * np.log(q) + (n - c) * np.log1p(-q))
    # Beta(2, 2) prior on rho, which is what the add-one M-step maximises
    r = np.clip(rho, _EPS, 1.0 - _EPS)
    return float(loglik + np.sum(np.log(r) + np.log1p(-r)))


def estimate_propensity_em(
    log: InteractionLog,
    max_iter: int = 200,
    tol: float = 1e-6,
    init: Optional[np.ndarray] = None,
    n_positions: Optional[int] = None,
) -> PropensityFit:
    """Fit the examination curve of the position-based click model by EM.

    Parameters
    ----------
    log : InteractionLog
        Impressions with per-slot clicks, ideally from examination mode.
    max_iter : int
        Iteration budget. Running out returns ``converged=False``.
    tol : float
        Stop once the largest relative parameter change falls below this.
    init : array, optional
        Starting examination curve; defaults to ``1 / k``. Relevance starts
        at the global click-through rate.
    n_positions : int, optional
        Number of positions to estimate; defaults to the slate length.

    Returns
    -------
    PropensityFit
        ``log_likelihood_trace`` holds the objective the EM steps ascend: the
        click log-likelihood plus the Beta(2, 2) log-prior of the relevance
        terms.

    Raises
    ------
    EstimationError
        If some position in ``1..n_positions`` never appears in the log.
    """
    n_positions = log.slate_length if n_positions is None else int(n_positions)
    if len(log) == 0:
        raise EstimationError(f"log is empty; positions 1..{n_positions} unobserved")
    if n_positions > log.slate_length:
        missing = list(range(log.slate_length + 1, n_positions + 1))
        raise EstimationError(f"positions never observed: {missing}")
    if max_iter < 1 or tol <= 0:
        raise EstimationError("max_iter must be positive and tol must be positive")

    trimmed = log if n_positions == log.slate_length else _truncate(log, n_positions)
    pair_idx, pos_idx, n, c, n_pairs = _position_cells(trimmed, n_positions)

    if init is None:
        theta = 1.0 / np.arange(1, n_positions + 1)
    else:
        theta = np.asarray(init, dtype=float).copy()
        if theta.shape != (n_positions,) or not np.all((theta > 0) & (theta <= 1)):
            raise EstimationError("init must hold one value in (0, 1] per position")
    rho = np.full(n_pairs, c.sum() / n.sum())
    n_pos = np.bincount(pos_idx, weights=n, minlength=n_positions)
    n_pair = np.bincount(pair_idx, weights=n, minlength=n_pairs)

    trace = [_penalised_loglik(theta, rho, pair_idx, pos_idx, n, c)]
    converged = False
    used = 0
    for used in range(1, max_iter + 1):
        t, r = theta[pos_idx], rho[pair_idx]
        miss = np.maximum(1.0 - t * r, _EPS)
        # posterior of examined / relevant for impressions without a click
        post_exam = t * (1.0 - r) / miss
        post_rel = r * (1.0 - t) / miss
        skipped = n - c
        new_theta = np.bincount(pos_idx, weights=c + skipped * post_exam, minlength=n_positions)
        new_theta = np.clip(new_theta / n_pos, _EPS, 1.0)
        new_rho = np.bincount(pair_idx, weights=c + skipped * post_rel, minlength=n_pairs)
        new_rho = (new_rho + 1.0) / (n_pair + 2.0)

        change = max(
            float(np.max(np.abs(new_theta - theta) / np.maximum(theta, _EPS))),
            float(np.max(np.abs(new_rho - rho) / np.maximum(rho, _EPS))),
        )
        theta, rho = new_theta, new_rho
        trace.append(_penalised_loglik(theta, rho, pair_idx, pos_idx, n, c))
        if change < tol:
            converged = True
            break

    table = np.clip(theta / theta[0], _EPS, 1.0)
    return PropensityFit(
        curve_table=table,
        beta_hat=fit_power_law(table),
        em_iterations_used=used,
        converged=converged,
        log_likelihood_trace=trace,
    )


def _truncate(log: InteractionLog, n_positions: int) -> InteractionLog:
    return InteractionLog(
        log.session_id,
        log.segment,
        log.items[:, :n_positions],
        log.examined[:, :n_positions],
        log.clicked[:, :n_positions],
        iteration=log.iteration,
        meta=dict(log.meta),
    )
