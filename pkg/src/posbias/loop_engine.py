"""Feedback-loop orchestration: bootstrap, train, serve, collect, repeat.

Randomness is derived from the run seed only. Sessions are simulated in fixed
blocks of :data:`CHUNK_SIZE` consecutive session ids; block ``b`` of iteration
``t`` draws from ``SeedSequence(seed, spawn_key=(t, b))``. Blocks may run on
any number of threads and are merged in session-id order, so results do not
depend on scheduling.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics as M
from .domain import InteractionLog, PositionBiasCurve, World
from .errors import ConfigError, EmptyHistogramError, TrainingError
from .interaction import InteractionMode, simulate_batch
from .rankers import RankerKind, RankerPolicy, serve_batch, train_policy
from .skewfit import build_histogram, fit_exponential_mle

log = logging.getLogger(__name__)

CHUNK_SIZE = 4096
WINDOWS = ("previous", "all")


@dataclass
class LoopConfig:
    n_iterations: int = 3
    sessions_per_iteration: int = 10_000
    slate_length: int = 6
    mode: InteractionMode = InteractionMode.CHOICE_BIASED
    curve: Optional[PositionBiasCurve] = None
    policy_kind: RankerKind = RankerKind.NAIVE_CTR
    hyperparams: dict = field(default_factory=dict)
    traffic: Optional[tuple] = None
    seed: int = 0
    # items drawn per request; the policy orders them and shows the top slate_length
    n_candidates: Optional[int] = None
    window: str = "previous"
    frozen_ranks: bool = False
    metric_ks: tuple = (6,)
    metric_xs: tuple = (0.1, 0.5)
    ecs_interpolate: bool = False

    def __post_init__(self):
        self.mode = InteractionMode.parse(self.mode)
        self.policy_kind = RankerKind.parse(self.policy_kind)
        if self.curve is None:
            self.curve = PositionBiasCurve.power_law(1.0, self.slate_length)
        if self.n_candidates is None:
            self.n_candidates = self.slate_length
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be positive")
        if self.sessions_per_iteration < 1:
            raise ConfigError("sessions_per_iteration must be positive")
        if self.slate_length < 1:
            raise ConfigError("slate_length must be positive")
        if self.slate_length > self.curve.max_position:
            raise ConfigError(
                f"slate_length {self.slate_length} exceeds curve max_position {self.curve.max_position}"
            )
        if self.n_candidates < self.slate_length:
            raise ConfigError("n_candidates must be >= slate_length")
        if self.window not in WINDOWS:
            raise ConfigError(f"window must be one of {WINDOWS}")

    def validate(self, world: World) -> None:
        n_items = world.catalog.n_items
        if self.slate_length > n_items:
            raise ConfigError(f"slate_length {self.slate_length} exceeds n_items {n_items}")
        if self.n_candidates > n_items:
            raise ConfigError(f"n_candidates {self.n_candidates} exceeds n_items {n_items}")
        if self.traffic is not None:
            w = np.asarray(self.traffic, dtype=float)
            if len(w) != world.relevance.n_segments:
                raise ConfigError("traffic mixture needs one weight per segment")
            if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError("traffic mixture weights must be nonnegative and sum to 1")

    def traffic_weights(self, n_segments: int) -> np.ndarray:
        if self.traffic is None:
            return np.full(n_segments, 1.0 / n_segments)
        return np.asarray(self.traffic, dtype=float)

    def to_dict(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "sessions_per_iteration": self.sessions_per_iteration,
            "slate_length": self.slate_length,
            "n_candidates": self.n_candidates,
            "mode": self.mode.value,
            "curve": self.curve.to_dict(),
            "policy_kind": self.policy_kind.value,
            "hyperparams": dict(self.hyperparams),
            "traffic": None if self.traffic is None else [float(w) for w in self.traffic],
            "seed": self.seed,
            "window": self.window,
            "frozen_ranks": self.frozen_ranks,
            "metric_ks": list(self.metric_ks),
            "metric_xs": list(self.metric_xs),
            "ecs_interpolate": self.ecs_interpolate,
        }


@dataclass
class LoopResult:
    config: LoopConfig
    logs: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    @property
    def lambdas(self) -> list:
        return [f.lambda_hat if f is not None else math.nan for f in self.fits]


def chunk_rng(seed: int, iteration: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(iteration, chunk)))


def _chunks(n_sessions: int):
    for chunk, start in enumerate(range(0, n_sessions, CHUNK_SIZE)):
        yield chunk, start, min(start + CHUNK_SIZE, n_sessions)


def _random_subsets(rng, n_rows: int, n_items: int, size: int) -> np.ndarray:
    """Uniformly random ordered subsets of ``size`` distinct items per row."""
    keys = rng.random((n_rows, n_items))
    if size < n_items:
        idx = np.argpartition(keys, size - 1, axis=1)[:, :size]
    else:
        idx = np.broadcast_to(np.arange(n_items), (n_rows, n_items)).copy()
    order = np.argsort(np.take_along_axis(keys, idx, axis=1), axis=1)
    return np.take_along_axis(idx, order, axis=1)


def _simulate(world, config, iteration, policy, threads, mode=None) -> InteractionLog:
    n_items = world.catalog.n_items
    p = world.relevance.p
    traffic = config.traffic_weights(world.relevance.n_segments)
    if mode is None:
        mode = InteractionMode.CHOICE_UNBIASED if policy is None else config.mode
    mode = InteractionMode.parse(mode)
    size = config.slate_length if policy is None else config.n_candidates

    def block(bounds):
        chunk, start, stop = bounds
        rng = chunk_rng(config.seed, iteration, chunk)
        n = stop - start
        segments = rng.choice(len(traffic), size=n, p=traffic)
        candidates = _random_subsets(rng, n, n_items, size)
        if policy is None:
            slates = candidates
        else:
            slates = serve_batch(policy, segments, candidates, config.slate_length)
        examined, clicked = simulate_batch(slates, segments, p, mode, config.curve, rng)
        return np.arange(start, stop), segments, slates, examined, clicked, candidates

    blocks = list(_chunks(config.sessions_per_iteration))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, blocks))
    else:
        parts = [block(s) for s in blocks]
    cols = [np.concatenate([part[j] for part in parts]) for j in range(6)]
    return InteractionLog(
        *cols[:5],
        candidates=cols[5],
        iteration=iteration,
        meta={
            "ranker_id": "bootstrap" if policy is None else policy.kind.value,
            "seed": config.seed,
            "mode": mode.value,
        },
    )


def bootstrap_log(config: LoopConfig, world: World, threads: int = 1) -> InteractionLog:
    """Iteration 0: uniformly random slates with unbiased single-choice interactions."""
    config.validate(world)
    return _simulate(world, config, 0, None, threads)


def random_slate_log(
    config: LoopConfig, world: World, mode=None, iteration: int = 0, threads: int = 1
) -> InteractionLog:
    """Uniformly random slates with interactions in ``mode`` (default: ``config.mode``).

    Useful for propensity estimation, where every item must appear at every
    position.
    """
    config.validate(world)
    return _simulate(world, config, iteration, None, threads, mode or config.mode)


def run_iteration(
    world: World, policy: RankerPolicy, config: LoopConfig, iteration_index: int, threads: int = 1
) -> InteractionLog:
    """Serve ``policy`` to one iteration of traffic and log the interactions."""
    if iteration_index < 1:
        raise ConfigError("served iterations start at index 1")
    config.validate(world)
    return _simulate(world, config, iteration_index, policy, threads)


def train_for_iteration(world: World, config: LoopConfig, logs: list) -> RankerPolicy:
    train_log = logs[-1] if config.window == "previous" else InteractionLog.concat(logs)
    return train_policy(
        config.policy_kind,
        train_log,
        world.catalog.n_items,
        world.relevance.n_segments,
        curve=config.curve,
        hyperparams=config.hyperparams,
        seed=config.seed,
    )


def iteration_metrics(
    world: World, config: LoopConfig, logs: list, frozen_ranks: Optional[np.ndarray] = None
) -> tuple:
    """Popularity fit and metric rows for the newest log in ``logs``."""
    current = logs[-1]
    n_items = world.catalog.n_items
    rows = []
    try:
        hist = build_histogram(current, n_items)
        fit = fit_exponential_mle(hist, ranks=frozen_ranks)
    except EmptyHistogramError:
        hist, fit = None, None
    rows.append(("lambda", 0, fit.lambda_hat if fit else math.nan))
    for x in config.metric_xs:
        rows.append(("ecs", x, M.ecs_at_x(hist, x, config.ecs_interpolate) if hist else math.nan))
    for k in config.metric_ks:
        if len(logs) > 1:
            pop = logs[-2].click_counts(n_items)
            rows.append(("arp", k, M.arp_matrix(current.items, k, pop)))
        rows.append(("true_ndcg", k, M.true_ndcg(
            current.segment, current.items, world.relevance.p, k, current.candidates)))
    return fit, rows


def run_feedback_loop(world: World, config: LoopConfig, threads: int = 1) -> LoopResult:
    """Run bootstrap plus ``n_iterations`` train/serve/collect cycles.

    A training failure stops the loop; the result keeps every completed
    iteration and sets ``failed``.
    """
    config.validate(world)
    result = LoopResult(config)
    logs = result.logs
    logs.append(bootstrap_log(config, world, threads))
    result.policies.append(None)
    frozen = None
    if config.frozen_ranks:
        frozen = build_histogram(logs[0], world.catalog.n_items).ranks
    fit, rows = iteration_metrics(world, config, logs, frozen)
    result.fits.append(fit)
    result.metrics.append(rows)
    for t in range(1, config.n_iterations + 1):
        try:
            policy = train_for_iteration(world, config, logs)
        except TrainingError as exc:
            log.error("training failed before iteration %d: %s", t, exc)
            result.failed = True
            result.error = f"iteration {t}: {exc}"
            break
        logs.append(run_iteration(world, policy, config, t, threads))
        result.policies.append(policy)
        fit, rows = iteration_metrics(world, config, logs, frozen)
        result.fits.append(fit)
        result.metrics.append(rows)
        log.info("iteration %d lambda=%s", t, fit.lambda_hat if fit else None)
    return result


def select_l2(world: World, config: LoopConfig, grid, threads: int = 1) -> tuple:
    """Pick ``l2_position`` for a position-aware loop by held-out loss.

    Every candidate is trained on the same bootstrap log; the one with the
    lowest validation cross-entropy wins (ties go to the larger penalty).
    Returns ``(best_l2, {l2: validation_loss})``.
    """
    grid = sorted({float(v) for v in grid}, reverse=True)
    if not grid:
        raise ConfigError("l2 sweep needs at least one value")
    boot = bootstrap_log(config, world, threads)
    losses = {}
    for l2 in grid:
        hp = dict(config.hyperparams, l2_position=l2)
        policy = train_policy(
            RankerKind.POSITION_AWARE, boot, world.catalog.n_items,
            world.relevance.n_segments, curve=config.curve, hyperparams=hp, seed=config.seed,
        )
        losses[l2] = policy.state.training_state["validation_loss"]
    best = min(grid, key=lambda v: (losses[v], -v))
    return best, losses
