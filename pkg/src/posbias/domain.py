"""Core value types: catalog, relevance, position-bias curve and interaction logs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DomainError

POWER_LAW = "power_law"
TABULATED = "tabulated"


@dataclass(frozen=True)
class Catalog:
    """Item vocabulary with dense ids ``0..n_items-1``."""

    n_items: int

    def __post_init__(self):
        if int(self.n_items) != self.n_items or self.n_items < 2:
            raise ConfigError(f"n_items must be an integer >= 2, got {self.n_items!r}")

    @property
    def item_ids(self) -> np.ndarray:
        return np.arange(self.n_items)


@dataclass(frozen=True, eq=False)
class RelevanceModel:
    """True relevance probabilities ``p[segment, item]``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ConfigError(f"relevance matrix must be 2-D and nonempty, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ConfigError("relevance entries must lie in [0, 1]")
        if np.any(p.max(axis=1) <= 0.0):
            raise ConfigError("every segment needs at least one item with positive relevance")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n_segments(self) -> int:
        return self.p.shape[0]

    @property
    def n_items(self) -> int:
        return self.p.shape[1]

    def row(self, segment: int) -> np.ndarray:
        return self.p[segment]


class World(NamedTuple):
    catalog: Catalog
    relevance: RelevanceModel


@dataclass(frozen=True, eq=False)
class PositionBiasCurve:
    """Examination probability per 1-based display position.

    Use :meth:`power_law` for ``bias(k) = k ** -beta`` (so ``bias(1) == 1``) or
    :meth:`tabulated` for an explicit nonincreasing table.
    """

    kind: str
    max_position: int
    beta: float = 0.0
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_position < 1:
            raise ConfigError(f"max_position must be positive, got {self.max_position}")
        if self.kind == POWER_LAW:
            if not np.isfinite(self.beta) or self.beta < 0:
                raise ConfigError(f"beta must be a nonnegative real, got {self.beta!r}")
        elif self.kind == TABULATED:
            table = np.asarray(self.table, dtype=float)
            if table.ndim != 1 or len(table) != self.max_position:
                raise ConfigError("tabulated curve length must equal max_position")
            if np.any(table <= 0) or np.any(table > 1):
                raise ConfigError("tabulated curve values must lie in (0, 1]")
            if np.any(np.diff(table) > 0):
                raise ConfigError("tabulated curve values must be nonincreasing in position")
            table.setflags(write=False)
            object.__setattr__(self, "table", table)
        else:
            raise ConfigError(f"unknown curve kind {self.kind!r}")

    @classmethod
    def power_law(cls, beta: float, max_position: int) -> "PositionBiasCurve":
        return cls(kind=POWER_LAW, max_position=int(max_position), beta=float(beta))

    @classmethod
    def tabulated(cls, table) -> "PositionBiasCurve":
        table = np.asarray(table, dtype=float)
        return cls(kind=TABULATED, max_position=len(table), table=table)

    def values(self, length: Optional[int] = None) -> np.ndarray:
        """Bias for positions ``1..length`` (default: all positions)."""
        length = self.max_position if length is None else length
        if length < 1 or length > self.max_position:
            raise DomainError(f"curve covers positions 1..{self.max_position}, asked for {length}")
        if self.kind == POWER_LAW:
            return np.arange(1, length + 1, dtype=float) ** -self.beta
        return np.array(self.table[:length])

    def at(self, k: int) -> float:
        return bias_at(self, k)

    def to_dict(self) -> dict:
        if self.kind == POWER_LAW:
            return {"kind": POWER_LAW, "beta": self.beta, "max_position": self.max_position}
        return {"kind": TABULATED, "table": [float(v) for v in self.table]}

    @classmethod
    def from_dict(cls, data: dict) -> "PositionBiasCurve":
        kind = data.get("kind", POWER_LAW)
        if kind == POWER_LAW:
            return cls.power_law(data.get("beta", 0.0), data["max_position"])
        if kind == TABULATED:
            return cls.tabulated(data["table"])
        raise ConfigError(f"unknown curve kind {kind!r}")


def bias_at(curve: PositionBiasCurve, k: int) -> float:
    """Examination probability at 1-based position ``k``."""
    if int(k) != k or k < 1 or k > curve.max_position:
        raise DomainError(f"position {k!r} outside 1..{curve.max_position}")
    if curve.kind == POWER_LAW:
        return float(k) ** -curve.beta
    return float(curve.table[k - 1])


@dataclass(frozen=True)
class RankedSlate:
    """Ordered items shown to a user; position of ``items[j]`` is ``j + 1``."""

    items: tuple

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if not items:
            raise DomainError("slate must hold at least one item")
        if len(set(items)) != len(items):
            raise DomainError(f"slate items must be distinct: {items}")
        if min(items) < 0:
            raise DomainError("item ids must be nonnegative")
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def position_of(self, item: int) -> int:
        return self.items.index(item) + 1

    def validate(self, n_items: int, max_position: int) -> None:
        if len(self.items) > max_position:
            raise DomainError(f"slate length {len(self.items)} exceeds max_position {max_position}")
        if max(self.items) >= n_items:
            raise DomainError(f"slate references item >= n_items={n_items}")


@dataclass(frozen=True)
class ImpressionRecord:
    session_id: int
    segment: int
    slate: RankedSlate
    examined: tuple
    clicked: tuple
    iteration: int = 0

    def __post_init__(self):
        examined = tuple(bool(x) for x in self.examined)
        clicked = tuple(bool(x) for x in self.clicked)
        if len(examined) != len(self.slate) or len(clicked) != len(self.slate):
            raise DomainError("examined/clicked lengths must equal slate length")
        if any(c and not e for c, e in zip(clicked, examined)):
            raise DomainError("a clicked slot must be examined")
        if self.iteration < 0:
            raise DomainError("iteration must be >= 0")
        object.__setattr__(self, "examined", examined)
        object.__setattr__(self, "clicked", clicked)

    @property
    def clicked_items(self) -> list:
        return [i for i, c in zip(self.slate.items, self.clicked) if c]


@dataclass(eq=False)
class InteractionLog:
    """Column-oriented impression log for one loop iteration.

    Every row is one session; ``items``, ``examined`` and ``clicked`` have shape
    ``(n_sessions, slate_length)`` and column ``j`` is display position ``j + 1``.
    """

    session_id: np.ndarray
    segment: np.ndarray
    items: np.ndarray
    examined: np.ndarray
    clicked: np.ndarray
    iteration: int = 0
    meta: dict = field(default_factory=dict)
    # candidate sets the slates were cut from; kept in memory only
    candidates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.session_id = np.asarray(self.session_id, dtype=np.int64)
        self.segment = np.asarray(self.segment, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.examined = np.asarray(self.examined, dtype=bool)
        self.clicked = np.asarray(self.clicked, dtype=bool)
        n = len(self.session_id)
        if self.items.ndim != 2:
            self.items = self.items.reshape(n, -1)
            self.examined = self.examined.reshape(n, -1)
            self.clicked = self.clicked.reshape(n, -1)
        if not (len(self.segment) == self.items.shape[0] == n):
            raise DomainError("log columns disagree on session count")
        if self.examined.shape != self.items.shape or self.clicked.shape != self.items.shape:
            raise DomainError("examined/clicked must match the slate matrix shape")
        if np.any(self.clicked & ~self.examined):
            raise DomainError("a clicked slot must be examined")
        self.meta = {"iteration": self.iteration, **self.meta}
        self.meta["iteration"] = self.iteration

    def __len__(self):
        return len(self.session_id)

    @property
    def slate_length(self) -> int:
        return self.items.shape[1]

    @property
    def n_clicks(self) -> int:
        return int(self.clicked.sum())

    def records(self) -> Iterator[ImpressionRecord]:
        for row in range(len(self)):
            yield self.record(row)

    def record(self, row: int) -> ImpressionRecord:
        return ImpressionRecord(
            session_id=int(self.session_id[row]),
            segment=int(self.segment[row]),
            slate=RankedSlate(tuple(self.items[row])),
            examined=tuple(self.examined[row]),
            clicked=tuple(self.clicked[row]),
            iteration=self.iteration,
        )

    @classmethod
    def from_records(cls, records: Iterable[ImpressionRecord], iteration=None, meta=None):
        records = list(records)
        if not records:
            raise DomainError("cannot build a log from zero records")
        lengths = {len(r.slate) for r in records}
        if len(lengths) != 1:
            raise DomainError(f"all slates in a log must share one length, got {sorted(lengths)}")
        iters = {r.iteration for r in records}
        if iteration is None:
            if len(iters) != 1:
                raise DomainError("records carry different iteration indices")
            iteration = iters.pop()
        elif iters != {iteration}:
            raise DomainError("records must carry the log's iteration index")
        return cls(
            session_id=[r.session_id for r in records],
            segment=[r.segment for r in records],
            items=[r.slate.items for r in records],
            examined=[r.examined for r in records],
            clicked=[r.clicked for r in records],
            iteration=iteration,
            meta=dict(meta or {}),
        )

    def click_counts(self, n_items: int) -> np.ndarray:
        """Total clicks per item."""
        return np.bincount(self.items[self.clicked], minlength=n_items)[:n_items]

    def positions(self) -> np.ndarray:
        """1-based position matrix matching ``items``."""
        return np.broadcast_to(np.arange(1, self.slate_length + 1), self.items.shape)

    def subset(self, mask: np.ndarray) -> "InteractionLog":
        return InteractionLog(
            session_id=self.session_id[mask],
            segment=self.segment[mask],
            items=self.items[mask],
            examined=self.examined[mask],
            clicked=self.clicked[mask],
            iteration=self.iteration,
            meta=dict(self.meta),
            candidates=None if self.candidates is None else self.candidates[mask],
        )

    @classmethod
    def concat(cls, logs: list, iteration: Optional[int] = None) -> "InteractionLog":
        """Stack logs (e.g. for an accumulating training window)."""
        if not logs:
            raise DomainError("nothing to concatenate")
        iteration = logs[-1].iteration if iteration is None else iteration
        return cls(
            session_id=np.concatenate([lg.session_id for lg in logs]),
            segment=np.concatenate([lg.segment for lg in logs]),
            items=np.concatenate([lg.items for lg in logs]),
            examined=np.concatenate([lg.examined for lg in logs]),
            clicked=np.concatenate([lg.clicked for lg in logs]),
            iteration=iteration,
            meta=dict(logs[-1].meta),
        )


RELEVANCE_FAMILIES = ("constant", "exponential_tail")
JITTER_LOW, JITTER_HIGH = 0.8, 1.2


def _relevance_params(params) -> tuple:
    if isinstance(params, str):
        params = {"family": params}
    if not isinstance(params, dict) or "family" not in params:
        raise ConfigError(f"relevance_spec must be a mapping with a 'family' key, got {params!r}")
    family = params["family"]
    extra = set(params) - {"family", "value", "scale"}
    if extra:
        raise ConfigError(f"unknown relevance_spec keys: {sorted(extra)}")
    if family == "constant":
        value = float(params.get("value", 0.5))
        if not 0.0 < value <= 1.0:
            raise ConfigError(f"constant relevance must lie in (0, 1], got {value}")
        return family, value
    if family == "exponential_tail":
        scale = float(params.get("scale", 0.2))
        if not np.isfinite(scale) or scale <= 0:
            raise ConfigError(f"exponential_tail scale must be positive, got {scale}")
        return family, scale
    raise ConfigError(f"unknown relevance family {family!r}; expected one of {RELEVANCE_FAMILIES}")


def generate_world(n_items: int, n_segments: int, relevance_spec, seed: int) -> World:
    """Build a catalog and a relevance matrix deterministically from ``seed``.

    ``exponential_tail`` draws a base relevance per item from an exponential with
    the given scale, clipped to ``[0, 1]``, then applies a per-(segment, item)
    multiplicative jitter uniform in ``[0.8, 1.2]`` and clips again. Item ids carry no relevance order,
    so id-based tie-breaking stays uninformative.
    """
    catalog = Catalog(n_items)
    if int(n_segments) != n_segments or n_segments < 1:
        raise ConfigError(f"n_segments must be a positive integer, got {n_segments!r}")
    family, param = _relevance_params(relevance_spec)
    if family == "constant":
        return World(catalog, RelevanceModel(np.full((n_segments, n_items), param)))

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    base = np.clip(rng.exponential(param, size=n_items), 0.0, 1.0)
    jitter = rng.uniform(JITTER_LOW, JITTER_HIGH, size=(n_segments, n_items))
    p = np.clip(base[None, :] * jitter, 0.0, 1.0)
    return World(catalog, RelevanceModel(p))
