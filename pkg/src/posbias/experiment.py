"""Run a configured experiment and persist every artifact of it.

Layout of a run directory::

    manifest.json              config echo, file index, per-variant summaries
    metrics.csv                metric, parameter, variant, iteration, value
    fits.csv                   per-iteration exponential fits and skew change
    propensity.json            EM fit (only when propensity estimation is on)
    <variant>/iteration_000.jsonl
    <variant>/histogram_000.csv
    <variant>/policy_001.json  ...
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import metrics as M
from .config import ExperimentConfig
from .domain import InteractionLog, PositionBiasCurve, World
from .io import write_csv, write_json, write_json_atomic, write_log_jsonl
from .loop_engine import LoopConfig, LoopResult, random_slate_log, run_feedback_loop, select_l2
from .propensity import PropensityFit, estimate_propensity_em
from .rankers import RankerPolicy, serve_batch
from .skewfit import build_histogram, skew_change

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
METRIC_COLUMNS = ("metric", "parameter", "variant", "iteration", "value")
FIT_COLUMNS = ("variant", "iteration", "lambda_hat", "mean_rank", "n", "skew_change")
HISTOGRAM_COLUMNS = ("rank", "item", "count", "share")

# RNG stream indices reserved for logs that sit outside the loop
EVAL_STREAM = 1_000_000
PROPENSITY_STREAM = 1_000_001


@dataclass
class VariantOutcome:
    name: str
    result: LoopResult
    selected_l2: Optional[float] = None
    l2_losses: dict = field(default_factory=dict)


def offline_metrics(
    policy: RankerPolicy, eval_log: InteractionLog, ks, curve: PositionBiasCurve
) -> list:
    """Recall@k and IPS-NDCG@k of ``policy`` re-ranking every logged slate."""
    reranked = serve_batch(policy, eval_log.segment, eval_log.items, eval_log.slate_length)
    sessions = M.eval_sessions_from_log(eval_log, reranked)
    rows = []
    for k in ks:
        rows.append(("recall", k, M.recall_at_k(sessions, k)))
        rows.append(("ips_ndcg", k, M.ips_ndcg_at_k(sessions, k, curve)))
    return rows


def _fit_rows(name: str, result: LoopResult) -> list:
    rows = []
    base = result.fits[0].lambda_hat if result.fits and result.fits[0] else math.nan
    for t, fit in enumerate(result.fits):
        if fit is None:
            rows.append((name, t, math.nan, math.nan, 0, math.nan))
            continue
        change = skew_change(base, fit.lambda_hat) if base > 0 else math.nan
        rows.append((name, t, fit.lambda_hat, fit.mean_rank, fit.n_observations, change))
    return rows


def run_variant(cfg: ExperimentConfig, world: World, variant, threads: int = 1) -> VariantOutcome:
    loop_cfg = cfg.loop_config(variant)
    selected, losses = None, {}
    if variant.l2_sweep:
        selected, losses = select_l2(world, loop_cfg, variant.l2_sweep, threads)
        loop_cfg = cfg.loop_config(variant, dict(variant.hyperparams, l2_position=selected))
        log.info("variant %s: selected l2_position=%g", variant.name, selected)
    result = run_feedback_loop(world, loop_cfg, threads)
    return VariantOutcome(variant.name, result, selected, losses)


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Execute every variant, write the run directory and return the manifest."""
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    world = cfg.build_world()
    files = {"metrics": "metrics.csv", "fits": "fits.csv", "variants": {}}

    t0 = time.perf_counter()
    first = cfg.loop_config(cfg.variants[0])
    curve = first.curve
    propensity_fit: Optional[PropensityFit] = None
    if cfg.propensity.get("enabled"):
        prop_cfg = LoopConfig(
            sessions_per_iteration=cfg.propensity["sessions"],
            slate_length=first.slate_length,
            mode="examination",
            curve=first.curve,
            traffic=first.traffic,
            seed=cfg.seed,
        )
        prop_log = random_slate_log(prop_cfg, world, iteration=PROPENSITY_STREAM, threads=threads)
        propensity_fit = estimate_propensity_em(
            prop_log, cfg.propensity["max_iter"], cfg.propensity["tol"]
        )
        write_json(out / "propensity.json", propensity_fit.to_dict())
        files["propensity"] = "propensity.json"
        curve = propensity_fit.curve()
    eval_log = None
    if cfg.evaluation_sessions > 0:
        eval_cfg = LoopConfig(
            sessions_per_iteration=cfg.evaluation_sessions,
            slate_length=first.slate_length,
            mode=first.mode,
            curve=first.curve,
            traffic=first.traffic,
            seed=cfg.seed,
        )
        eval_log = random_slate_log(eval_cfg, world, iteration=EVAL_STREAM, threads=threads)
    timings["setup"] = time.perf_counter() - t0

    metric_rows, fit_rows, summaries = [], [], {}
    failed = False
    for variant in cfg.variants:
        t0 = time.perf_counter()
        outcome = run_variant(cfg, world, variant, threads)
        result = outcome.result
        vdir = out / variant.name
        vdir.mkdir(exist_ok=True)
        entry = {"logs": [], "histograms": [], "policies": []}
        for t, lg in enumerate(result.logs):
            name = f"{variant.name}/iteration_{t:03d}.jsonl"
            write_log_jsonl(lg, out / name)
            entry["logs"].append(name)
            if lg.n_clicks:
                hist = build_histogram(lg, world.catalog.n_items)
                hname = f"{variant.name}/histogram_{t:03d}.csv"
                write_csv(out / hname, HISTOGRAM_COLUMNS, hist.rows())
                entry["histograms"].append(hname)
            policy = result.policies[t]
            if policy is not None:
                pname = f"{variant.name}/policy_{t:03d}.json"
                write_json(out / pname, policy.to_dict())
                entry["policies"].append(pname)
        files["variants"][variant.name] = entry

        for t, rows in enumerate(result.metrics):
            rows = list(rows)
            policy = result.policies[t]
            if eval_log is not None and policy is not None:
                rows += offline_metrics(policy, eval_log, cfg.metric_ks, curve)
            metric_rows += [(m, p, variant.name, t, v) for m, p, v in rows]
        fit_rows += _fit_rows(variant.name, result)
        failed |= result.failed
        summaries[variant.name] = {
            "policy": variant.policy.value,
            "failed": result.failed,
            "error": result.error,
            "iterations_completed": len(result.logs) - 1,
            "lambda": [None if math.isnan(v) else v for v in result.lambdas],
            "selected_l2": outcome.selected_l2,
            "l2_validation_loss": {repr(k): v for k, v in outcome.l2_losses.items()},
        }
        timings[f"variant:{variant.name}"] = time.perf_counter() - t0

    write_csv(out / "metrics.csv", METRIC_COLUMNS, metric_rows)
    write_csv(out / "fits.csv", FIT_COLUMNS, fit_rows)
    timings["total"] = time.perf_counter() - started
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool": "posbias",
        "tool_version": __version__,
        "status": "failed" if failed else "ok",
        "config": cfg.to_dict(),
        "threads": threads,
        "world": {
            "n_items": world.catalog.n_items,
            "n_segments": world.relevance.n_segments,
            "mean_relevance": float(np.mean(world.relevance.p)),
        },
        "propensity": None if propensity_fit is None else {
            "beta_hat": propensity_fit.beta_hat,
            "converged": propensity_fit.converged,
        },
        "files": files,
        "variants": summaries,
        "timings_seconds": timings,
    }
    write_json_atomic(out / "manifest.json", manifest)
    return manifest
