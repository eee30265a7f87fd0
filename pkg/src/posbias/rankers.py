"""Ranking policies trained on interaction logs.

Four variants are available:

* ``popularity`` scores an item by its total click count;
* ``naive_ctr`` uses clicks / impressions per (segment, item);
* ``ipw_ctr`` weights each click by ``1 / bias(position)`` (Horvitz-Thompson);
* ``position_aware`` fits ``sigmoid(a[u, i] + gamma[k])`` by regularised
  binary cross-entropy and serves with ``k`` fixed to a default position.

All serving is deterministic: items are ordered by descending score and ties
go to the smaller item id.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .domain import InteractionLog, PositionBiasCurve, RankedSlate
from .errors import ConfigError, RequestError, TrainingError

POLICY_SCHEMA_VERSION = 1


class RankerKind(str, enum.Enum):
    POPULARITY = "popularity"
    NAIVE_CTR = "naive_ctr"
    IPW_CTR = "ipw_ctr"
    POSITION_AWARE = "position_aware"

    @classmethod
    def parse(cls, value) -> "RankerKind":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown ranker kind {value!r}; expected one of {names}") from None


@dataclass(eq=False)
class CtrEstimate:
    """Per-(segment, item) click-through estimate with a global fallback prior."""

    clicks_weighted: np.ndarray
    impressions: np.ndarray
    estimate: np.ndarray
    prior: float


@dataclass
class PositionAwareParams:
    l2_position: float = 1e-3
    learning_rate: float = 0.1
    max_epochs: int = 500
    patience: int = 10
    validation_fraction: float = 0.1
    default_position: int = 1
    min_delta: float = 1e-9

    def __post_init__(self):
        if self.l2_position < 0:
            raise ConfigError("l2_position must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.default_position < 1:
            raise ConfigError("default_position is 1-based")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PositionAwareParams":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown position_aware hyperparameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(eq=False)
class PositionAwareModel:
    logits: np.ndarray
    position_weights: np.ndarray
    l2_position: float
    default_position: int = 1
    training_state: dict = field(default_factory=dict)

    def serve_offset(self) -> float:
        k = min(self.default_position, len(self.position_weights))
        return float(self.position_weights[k - 1])

    def predict(self, segment, item, position) -> np.ndarray:
        z = self.logits[segment, item] + self.position_weights[np.asarray(position) - 1]
        return 1.0 / (1.0 + np.exp(-z))


State = Union[np.ndarray, CtrEstimate, PositionAwareModel]


@dataclass(eq=False)
class RankerPolicy:
    kind: RankerKind
    n_segments: int
    n_items: int
    state: State
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def score_matrix(self) -> np.ndarray:
        """Serving scores with shape ``(n_segments, n_items)``.

        For ``position_aware`` these are the item logits; the default-position
        weight is a constant shift and is left out so float rounding cannot
        create ties that the shifted scores would not have.
        """
        if self.kind is RankerKind.POPULARITY:
            return np.broadcast_to(self.state.astype(float), (self.n_segments, self.n_items))
        if self.kind is RankerKind.POSITION_AWARE:
            return self.state.logits
        return self.state.estimate

    def scores(self, segment: int) -> np.ndarray:
        return self.score_matrix()[segment]

    def to_dict(self) -> dict:
        return {
            "schema_version": POLICY_SCHEMA_VERSION,
            "kind": self.kind.value,
            "n_segments": self.n_segments,
            "n_items": self.n_items,
            "hyperparameters": self.hyperparams,
            "seed": self.seed,
            "parameters": _state_to_dict(self.kind, self.state),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankerPolicy":
        if data.get("schema_version") != POLICY_SCHEMA_VERSION:
            raise ConfigError(f"unsupported policy schema_version {data.get('schema_version')!r}")
        kind = RankerKind.parse(data["kind"])
        return cls(
            kind=kind,
            n_segments=int(data["n_segments"]),
            n_items=int(data["n_items"]),
            state=_state_from_dict(kind, data["parameters"]),
            hyperparams=dict(data.get("hyperparameters", {})),
            seed=int(data.get("seed", 0)),
        )


def _state_to_dict(kind: RankerKind, state: State) -> dict:
    if kind is RankerKind.POPULARITY:
        return {"click_counts": state.tolist()}
    if kind is RankerKind.POSITION_AWARE:
        return {
            "logits": state.logits.tolist(),
            "position_weights": state.position_weights.tolist(),
            "l2_position": state.l2_position,
            "default_position": state.default_position,
            "training_state": state.training_state,
        }
    return {
        "clicks_weighted": state.clicks_weighted.tolist(),
        "impressions": state.impressions.tolist(),
        "estimate": state.estimate.tolist(),
        "prior": state.prior,
    }


def _state_from_dict(kind: RankerKind, data: dict) -> State:
    if kind is RankerKind.POPULARITY:
        return np.asarray(data["click_counts"], dtype=np.int64)
    if kind is RankerKind.POSITION_AWARE:
        return PositionAwareModel(
            logits=np.asarray(data["logits"], dtype=float),
            position_weights=np.asarray(data["position_weights"], dtype=float),
            l2_position=float(data["l2_position"]),
            default_position=int(data["default_position"]),
            training_state=dict(data.get("training_state", {})),
        )
    return CtrEstimate(
        clicks_weighted=np.asarray(data["clicks_weighted"], dtype=float),
        impressions=np.asarray(data["impressions"], dtype=np.int64),
        estimate=np.asarray(data["estimate"], dtype=float),
        prior=float(data["prior"]),
    )


def _check_nonempty(log: InteractionLog):
    if len(log) == 0:
        raise ConfigError("cannot train on an empty log")


def train_popularity(log: InteractionLog, n_items: int, n_segments: int = 1) -> RankerPolicy:
    _check_nonempty(log)
    return RankerPolicy(RankerKind.POPULARITY, n_segments, n_items, log.click_counts(n_items))


def _ctr_from_weights(log, click_weights, n_items, n_segments) -> CtrEstimate:
    seg = np.broadcast_to(log.segment[:, None], log.items.shape)
    flat = (seg * n_items + log.items).ravel()
    size = n_segments * n_items
    impressions = np.bincount(flat, minlength=size).reshape(n_segments, n_items)
    weighted = np.bincount(flat, weights=click_weights.ravel(), minlength=size).reshape(
        n_segments, n_items
    )
    prior = float(np.clip((weighted.sum() + 1.0) / (impressions.sum() + 2.0), 0.0, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = weighted / impressions
    estimate = np.where(impressions > 0, np.clip(ratio, 0.0, 1.0), prior)
    return CtrEstimate(weighted, impressions, estimate, prior)


def train_naive_ctr(log: InteractionLog, n_items: int, n_segments: int) -> RankerPolicy:
    """Clicks over impressions per (segment, item); unseen pairs get the global prior."""
    _check_nonempty(log)
    state = _ctr_from_weights(log, log.clicked.astype(float), n_items, n_segments)
    return RankerPolicy(RankerKind.NAIVE_CTR, n_segments, n_items, state)


def train_ipw_ctr(
    log: InteractionLog, curve: PositionBiasCurve, n_items: int, n_segments: int
) -> RankerPolicy:
    """Inverse-propensity weighted CTR, clipped to ``[0, 1]``."""
    _check_nonempty(log)
    inv = 1.0 / curve.values(log.slate_length)
    state = _ctr_from_weights(log, log.clicked * inv[None, :], n_items, n_segments)
    return RankerPolicy(
        RankerKind.IPW_CTR, n_segments, n_items, state, hyperparams={"curve": curve.to_dict()}
    )


def _session_hash(session_id: np.ndarray, salt: int) -> np.ndarray:
    """SplitMix64 finaliser mapped to [0, 1)."""
    with np.errstate(over="ignore"):
        z = session_id.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15) * np.uint64(salt + 1)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _cell_counts(log: InteractionLog, mask, n_segments, n_items):
    length = log.slate_length
    seg = np.broadcast_to(log.segment[mask][:, None], (int(mask.sum()), length))
    pos = np.broadcast_to(np.arange(length), seg.shape)
    flat = ((seg * n_items + log.items[mask]) * length + pos).ravel()
    size = n_segments * n_items * length
    shape = (n_segments, n_items, length)
    n = np.bincount(flat, minlength=size).reshape(shape).astype(float)
    c = np.bincount(flat, weights=log.clicked[mask].ravel().astype(float), minlength=size)
    return n, c.reshape(shape)


def _bce(z, n, c, total):
    # log(1 + e^z) computed stably
    softplus = np.logaddexp(0.0, z)
    return float(np.sum(n * softplus - c * z) / total)


def train_position_aware(
    log: InteractionLog,
    n_items: int,
    n_segments: int,
    hyperparams: Optional[PositionAwareParams] = None,
    seed: int = 0,
) -> RankerPolicy:
    """Fit per-(segment, item) logits with an additive position weight.

    Minimises mean binary cross-entropy over (shown slot -> clicked) examples
    plus ``l2_position * ||gamma||^2`` with full-batch gradient descent, each
    coordinate's step scaled by its diagonal curvature. Training stops early
    once validation loss fails to improve for ``patience`` epochs.
    """
    _check_nonempty(log)
    hp = hyperparams or PositionAwareParams()
    if isinstance(hp, dict):
        hp = PositionAwareParams.from_dict(hp)
    val_mask = _session_hash(log.session_id, seed) < hp.validation_fraction
    if not val_mask.any():
        raise ConfigError("validation split is empty; log too small for the validation fraction")
    if val_mask.all():
        raise ConfigError("training split is empty")
    n_tr, c_tr = _cell_counts(log, ~val_mask, n_segments, n_items)
    n_va, c_va = _cell_counts(log, val_mask, n_segments, n_items)
    total_tr, total_va = n_tr.sum(), n_va.sum()

    global_ctr = (c_tr.sum() + 1.0) / (total_tr + 2.0)
    a = np.full((n_segments, n_items), np.log(global_ctr / (1.0 - global_ctr)))
    gamma = np.zeros(log.slate_length)
    lr, l2 = hp.learning_rate, hp.l2_position

    def objectives(a, gamma):
        z = a[:, :, None] + gamma[None, None, :]
        train = _bce(z, n_tr, c_tr, total_tr) + l2 * float(gamma @ gamma)
        return z, train, _bce(z, n_va, c_va, total_va)

    z, train_loss, val_loss = objectives(a, gamma)
    best = (val_loss, a.copy(), gamma.copy(), 0, train_loss)
    stale = 0
    epoch = 0
    for epoch in range(1, hp.max_epochs + 1):
        with np.errstate(over="ignore"):
            prob = 1.0 / (1.0 + np.exp(-z))
        resid = (n_tr * prob - c_tr) / total_tr
        curv = n_tr * prob * (1.0 - prob) / total_tr
        grad_a = resid.sum(axis=2)
        grad_g = resid.sum(axis=(0, 1)) + 2.0 * l2 * gamma
        h_a = curv.sum(axis=2)
        h_g = curv.sum(axis=(0, 1)) + 2.0 * l2
        with np.errstate(over="ignore", invalid="ignore"):
            a = a - lr * np.divide(grad_a, h_a, out=np.zeros_like(a), where=h_a > 0)
            gamma = gamma - lr * np.divide(grad_g, h_g, out=np.zeros_like(gamma), where=h_g > 0)
            z, train_loss, val_loss = objectives(a, gamma)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} (learning_rate={lr})",
                epoch=epoch,
                learning_rate=lr,
            )
        if val_loss < best[0] - hp.min_delta:
            best = (val_loss, a.copy(), gamma.copy(), epoch, train_loss)
            stale = 0
        else:
            stale += 1
            if stale >= hp.patience:
                break

    val_loss, a, gamma, best_epoch, train_loss = best
    model = PositionAwareModel(
        logits=a,
        position_weights=gamma,
        l2_position=l2,
        default_position=hp.default_position,
        training_state={
            "learning_rate": lr,
            "max_epochs": hp.max_epochs,
            "patience": hp.patience,
            "epochs_run": epoch,
            "best_epoch": best_epoch,
            "train_loss": train_loss,
            "validation_loss": val_loss,
        },
    )
    return RankerPolicy(
        RankerKind.POSITION_AWARE, n_segments, n_items, model, hyperparams=asdict(hp), seed=seed
    )


def train_policy(
    kind,
    log: InteractionLog,
    n_items: int,
    n_segments: int,
    curve: Optional[PositionBiasCurve] = None,
    hyperparams: Optional[dict] = None,
    seed: int = 0,
) -> RankerPolicy:
    kind = RankerKind.parse(kind)
    if kind is RankerKind.POPULARITY:
        return train_popularity(log, n_items, n_segments)
    if kind is RankerKind.NAIVE_CTR:
        return train_naive_ctr(log, n_items, n_segments)
    if kind is RankerKind.IPW_CTR:
        if curve is None:
            raise ConfigError("ipw_ctr needs a position-bias curve")
        return train_ipw_ctr(log, curve, n_items, n_segments)
    return train_position_aware(
        log, n_items, n_segments, PositionAwareParams.from_dict(hyperparams), seed=seed
    )


def serve(policy: RankerPolicy, segment: int, candidate_items, slate_length: int) -> RankedSlate:
    """Top ``slate_length`` candidates by descending score, ties by ascending id."""
    candidates = np.unique(np.asarray(candidate_items, dtype=np.int64))
    if len(candidates) < slate_length:
        raise RequestError(
            f"{len(candidates)} candidates cannot fill a slate of length {slate_length}"
        )
    if slate_length < 1:
        raise RequestError("slate_length must be positive")
    scores = policy.scores(segment)[candidates]
    order = np.lexsort((candidates, -scores))
    return RankedSlate(tuple(candidates[order[:slate_length]]))


def serve_batch(
    policy: RankerPolicy, segments: np.ndarray, candidates: np.ndarray, slate_length: int
) -> np.ndarray:
    """Row-wise :func:`serve` for a matrix of candidate sets."""
    if candidates.shape[1] < slate_length:
        raise RequestError("candidate sets smaller than the slate length")
    scores = policy.score_matrix()[segments[:, None], candidates]
    order = np.lexsort((candidates, -scores), axis=1)
    return np.take_along_axis(candidates, order[:, :slate_length], axis=1)
