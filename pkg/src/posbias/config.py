"""Experiment configuration: YAML parsing with line-anchored validation errors.

A configuration file looks like::

    seed: 0
    world:
      n_items: 500
      n_segments: 10
      relevance: {family: exponential_tail, scale: 0.2}
    loop:
      n_iterations: 3
      sessions_per_iteration: 10000
      slate_length: 6
      mode: choice_biased
      curve: {kind: power_law, beta: 1.0, max_position: 6}
    variants:
      - {name: naive, policy: naive_ctr}
      - {name: debiased, policy: position_aware, l2_sweep: [0.1, 0.01, 0.001]}
    metrics: {k: [6], x: [0.1, 0.5]}

Every section except ``world`` and ``variants`` is optional. Unknown keys are
rejected.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .domain import PositionBiasCurve, World, generate_world
from .errors import ConfigError
from .interaction import InteractionMode
from .loop_engine import WINDOWS, LoopConfig
from .rankers import PositionAwareParams, RankerKind

_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "world": {"n_items": None, "n_segments": None, "relevance": None, "seed": None},
    "loop": {
        "n_iterations": None,
        "sessions_per_iteration": None,
        "slate_length": None,
        "n_candidates": None,
        "mode": None,
        "curve": None,
        "traffic": None,
        "window": None,
        "frozen_ranks": None,
    },
    "variants": None,
    "metrics": {"k": None, "x": None, "ecs_interpolate": None},
    "propensity": {"enabled": None, "sessions": None, "max_iter": None, "tol": None},
    "evaluation": {"sessions": None},
}
_VARIANT_KEYS = {"name", "policy", "hyperparams", "l2_sweep"}


class _Located:
    """Maps dotted key paths to the source line they came from."""

    def __init__(self, source: str = "config"):
        self.source = source
        self.lines: dict = {}

    def error(self, path: str, message: str) -> ConfigError:
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        where = f"{self.source}:{line}: " if line is not None else f"{self.source}: "
        return ConfigError(f"{where}{message}")


def _to_python(node, path: str, loc: _Located):
    loc.lines.setdefault(path or "<root>", node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            loc.lines[sub] = key_node.start_mark.line + 1
            if key in out:
                raise loc.error(sub, f"duplicate key {sub!r}")
            out[key] = _to_python(value_node, sub, loc)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{j}]", loc) for j, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node)


def _check_keys(data: dict, schema: dict, path: str, loc: _Located):
    for key in data:
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise loc.error(sub, f"unknown key {sub!r}")
        if isinstance(schema[key], dict):
            if not isinstance(data[key], dict):
                raise loc.error(sub, f"{sub!r} must be a mapping")
            _check_keys(data[key], schema[key], sub, loc)


@dataclass
class VariantSpec:
    name: str
    policy: RankerKind
    hyperparams: dict = field(default_factory=dict)
    l2_sweep: Optional[list] = None

    def to_dict(self) -> dict:
        out = {"name": self.name, "policy": self.policy.value, "hyperparams": dict(self.hyperparams)}
        if self.l2_sweep is not None:
            out["l2_sweep"] = list(self.l2_sweep)
        return out


@dataclass
class ExperimentConfig:
    seed: int
    world: dict
    loop: dict
    variants: list
    metric_ks: tuple = (6,)
    metric_xs: tuple = (0.1, 0.5)
    ecs_interpolate: bool = False
    propensity: dict = field(default_factory=dict)
    evaluation_sessions: int = 0
    output_dir: Optional[str] = None

    def build_world(self) -> World:
        w = self.world
        return generate_world(
            w["n_items"], w["n_segments"], w["relevance"], w.get("seed", self.seed)
        )

    def loop_config(self, variant: VariantSpec, hyperparams: Optional[dict] = None) -> LoopConfig:
        lp = self.loop
        return LoopConfig(
            n_iterations=lp["n_iterations"],
            sessions_per_iteration=lp["sessions_per_iteration"],
            slate_length=lp["slate_length"],
            n_candidates=lp.get("n_candidates"),
            mode=lp["mode"],
            curve=PositionBiasCurve.from_dict(lp["curve"]) if lp.get("curve") else None,
            policy_kind=variant.policy,
            hyperparams=dict(variant.hyperparams if hyperparams is None else hyperparams),
            traffic=tuple(lp["traffic"]) if lp.get("traffic") is not None else None,
            seed=self.seed,
            window=lp.get("window", "previous"),
            frozen_ranks=bool(lp.get("frozen_ranks", False)),
            metric_ks=tuple(self.metric_ks),
            metric_xs=tuple(self.metric_xs),
            ecs_interpolate=self.ecs_interpolate,
        )

    def select(self, names) -> "ExperimentConfig":
        """Copy restricted to the named variants, in config order."""
        wanted = list(names)
        known = [v.name for v in self.variants]
        missing = [n for n in wanted if n not in known]
        if missing:
            raise ConfigError(f"unknown variant(s) {missing}; configured: {known}")
        out = copy.copy(self)
        out.variants = [v for v in self.variants if v.name in wanted]
        return out

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "world": copy.deepcopy(self.world),
            "loop": copy.deepcopy(self.loop),
            "variants": [v.to_dict() for v in self.variants],
            "metrics": {
                "k": list(self.metric_ks),
                "x": list(self.metric_xs),
                "ecs_interpolate": self.ecs_interpolate,
            },
            "propensity": dict(self.propensity),
            "evaluation": {"sessions": self.evaluation_sessions},
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out


def _require_int(value, path, loc, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise loc.error(path, f"{path!r} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise loc.error(path, f"{path!r} must be >= {minimum}, got {value}")
    return value


def _require_number(value, path, loc):
    if isinstance(value, str):
        # YAML 1.1 reads exponent literals such as 1e-6 as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise loc.error(path, f"{path!r} must be a number, got {value!r}")
    return float(value)


def parse_config(data, loc: Optional[_Located] = None) -> ExperimentConfig:
    """Validate a configuration mapping and build an :class:`ExperimentConfig`."""
    loc = loc or _Located()
    if not isinstance(data, dict):
        raise loc.error("<root>", "configuration must be a mapping")
    _check_keys(data, _SCHEMA, "", loc)
    for section in ("world", "variants"):
        if section not in data:
            raise loc.error("<root>", f"missing required section {section!r}")

    seed = _require_int(data.get("seed", 0), "seed", loc)
    world = dict(data["world"])
    for key in ("n_items", "n_segments", "relevance"):
        if key not in world:
            raise loc.error("world", f"world.{key} is required")
    _require_int(world["n_items"], "world.n_items", loc, 2)
    _require_int(world["n_segments"], "world.n_segments", loc, 1)
    if "seed" in world:
        _require_int(world["seed"], "world.seed", loc)

    loop = dict(data.get("loop", {}))
    defaults = {"n_iterations": 3, "sessions_per_iteration": 10_000, "slate_length": 6,
                "mode": InteractionMode.CHOICE_BIASED.value, "window": "previous"}
    for key, value in defaults.items():
        loop.setdefault(key, value)
    for key in ("n_iterations", "sessions_per_iteration", "slate_length"):
        _require_int(loop[key], f"loop.{key}", loc, 1)
    if loop.get("n_candidates") is not None:
        _require_int(loop["n_candidates"], "loop.n_candidates", loc, 1)
    if loop["window"] not in WINDOWS:
        raise loc.error("loop.window", f"loop.window must be one of {list(WINDOWS)}")
    try:
        InteractionMode.parse(loop["mode"])
    except ConfigError as exc:
        raise loc.error("loop.mode", str(exc)) from None
    if loop.get("curve") is not None:
        if not isinstance(loop["curve"], dict):
            raise loc.error("loop.curve", "loop.curve must be a mapping")
        try:
            PositionBiasCurve.from_dict(loop["curve"])
        except (ConfigError, ValueError, KeyError, TypeError) as exc:
            raise loc.error("loop.curve", f"invalid curve: {exc}") from None

    variants = data["variants"]
    if not isinstance(variants, list) or not variants:
        raise loc.error("variants", "variants must be a nonempty list")
    parsed = []
    for j, raw in enumerate(variants):
        path = f"variants[{j}]"
        if not isinstance(raw, dict):
            raise loc.error(path, f"{path} must be a mapping")
        unknown = set(raw) - _VARIANT_KEYS
        if unknown:
            raise loc.error(f"{path}.{sorted(unknown)[0]}", f"unknown key(s) {sorted(unknown)} in {path}")
        for key in ("name", "policy"):
            if key not in raw:
                raise loc.error(path, f"{path}.{key} is required")
        name = str(raw["name"])
        if not _NAME_RE.match(name):
            raise loc.error(f"{path}.name", f"variant name {name!r} may use letters, digits, '_', '-', '.'")
        if name in {s.name for s in parsed}:
            raise loc.error(f"{path}.name", f"duplicate variant name {name!r}")
        try:
            kind = RankerKind.parse(raw["policy"])
        except ConfigError as exc:
            raise loc.error(f"{path}.policy", str(exc)) from None
        hp = raw.get("hyperparams") or {}
        if not isinstance(hp, dict):
            raise loc.error(f"{path}.hyperparams", "hyperparams must be a mapping")
        sweep = raw.get("l2_sweep")
        if kind is RankerKind.POSITION_AWARE:
            try:
                PositionAwareParams.from_dict(hp)
            except (ConfigError, TypeError) as exc:
                raise loc.error(f"{path}.hyperparams", str(exc)) from None
        elif hp:
            raise loc.error(f"{path}.hyperparams", f"policy {kind.value} takes no hyperparameters")
        if sweep is not None:
            if kind is not RankerKind.POSITION_AWARE:
                raise loc.error(f"{path}.l2_sweep", "l2_sweep applies to position_aware only")
            if not isinstance(sweep, list) or not sweep:
                raise loc.error(f"{path}.l2_sweep", "l2_sweep must be a nonempty list")
            sweep = [_require_number(v, f"{path}.l2_sweep", loc) for v in sweep]
            if min(sweep) < 0:
                raise loc.error(f"{path}.l2_sweep", "l2 values must be nonnegative")
        parsed.append(VariantSpec(name, kind, dict(hp), sweep))

    metrics = data.get("metrics", {})
    ks = metrics.get("k", [loop["slate_length"]])
    xs = metrics.get("x", [0.1, 0.5])
    if not isinstance(ks, list) or not isinstance(xs, list) or not ks or not xs:
        raise loc.error("metrics", "metrics.k and metrics.x must be nonempty lists")
    ks = tuple(_require_int(k, "metrics.k", loc, 1) for k in ks)
    xs = tuple(_require_number(x, "metrics.x", loc) for x in xs)
    if any(not 0 < x <= 1 for x in xs):
        raise loc.error("metrics.x", "every X must lie in (0, 1]")
    if max(ks) > loop["slate_length"]:
        raise loc.error("metrics.k", f"k={max(ks)} exceeds slate_length {loop['slate_length']}")

    prop = dict(data.get("propensity", {}))
    prop.setdefault("enabled", False)
    prop.setdefault("sessions", 50_000)
    prop.setdefault("max_iter", 200)
    prop.setdefault("tol", 1e-6)
    _require_int(prop["sessions"], "propensity.sessions", loc, 1)
    _require_int(prop["max_iter"], "propensity.max_iter", loc, 1)
    prop["tol"] = _require_number(prop["tol"], "propensity.tol", loc)
    prop["enabled"] = bool(prop["enabled"])

    evaluation = data.get("evaluation", {})
    eval_sessions = _require_int(evaluation.get("sessions", 10_000), "evaluation.sessions", loc, 0)

    cfg = ExperimentConfig(
        seed=seed,
        world=world,
        loop=loop,
        variants=parsed,
        metric_ks=ks,
        metric_xs=xs,
        ecs_interpolate=bool(metrics.get("ecs_interpolate", False)),
        propensity=prop,
        evaluation_sessions=eval_sessions,
        output_dir=data.get("output_dir"),
    )
    _validate_runtime(cfg, loc)
    return cfg


def _validate_runtime(cfg: ExperimentConfig, loc: _Located):
    try:
        world = cfg.build_world()
    except (ConfigError, ValueError) as exc:
        raise loc.error("world", str(exc)) from None
    for v in cfg.variants:
        try:
            cfg.loop_config(v).validate(world)
        except ConfigError as exc:
            key = next((k for k in ("slate_length", "n_candidates", "traffic") if k in str(exc)), "")
            raise loc.error(f"loop.{key}" if key else "loop", str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML configuration file."""
    loc = _Located(str(path))
    try:
        with open(path, encoding="utf-8") as fh:
            node = yaml.compose(fh, Loader=yaml.SafeLoader)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        raise ConfigError(f"{path}: configuration is empty")
    return parse_config(_to_python(node, "", loc), loc)
