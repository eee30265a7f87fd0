"""Variant-versus-baseline comparison tables built from a run directory."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .io import read_csv, read_json, write_csv
from .metrics import relative_delta

REPORT_COLUMNS = ("metric", "parameter", "variant", "iteration", "value", "baseline", "delta_vs_baseline")
SUMMARY_ITERATION = "mean"


def _float(text: str) -> float:
    return float(text) if text not in ("", "nan") else math.nan


def load_run(run_dir) -> tuple:
    run = Path(run_dir)
    manifest = read_json(run / "manifest.json")
    metrics = read_csv(run / manifest["files"]["metrics"])
    fits = read_csv(run / manifest["files"]["fits"])
    return manifest, metrics, fits


def comparison_rows(metrics: list, fits: list, baseline: str) -> list:
    """Long-format rows with each value's relative change against ``baseline``.

    Alongside every iteration, a ``mean`` row averages the served
    iterations (``t >= 1``) of each metric.
    """
    values = {}
    order = []
    for r in metrics:
        key = (r["metric"], r["parameter"], r["variant"], int(r["iteration"]))
        values[key] = _float(r["value"])
        order.append(key)
    for r in fits:
        for metric in ("lambda_hat", "skew_change"):
            key = (metric, "0", r["variant"], int(r["iteration"]))
            values[key] = _float(r[metric])
            order.append(key)

    served = defaultdict(list)
    for (metric, param, variant, t), v in values.items():
        if t >= 1 and not math.isnan(v):
            served[(metric, param, variant)].append(v)

    rows = []
    for metric, param, variant, t in order:
        v = values[(metric, param, variant, t)]
        base = values.get((metric, param, baseline, t), math.nan)
        rows.append((metric, param, variant, t, v, base, _delta(metric, v, base)))
    seen = set()
    for metric, param, variant, _ in order:
        key = (metric, param, variant)
        if key in seen or key not in served:
            continue
        seen.add(key)
        v = float(np.mean(served[key]))
        base_vals = served.get((metric, param, baseline))
        base = float(np.mean(base_vals)) if base_vals else math.nan
        rows.append((metric, param, variant, SUMMARY_ITERATION, v, base, _delta(metric, v, base)))
    return rows


def _delta(metric: str, value: float, base: float) -> float:
    # skew_change is already relative; compare it by difference
    if metric == "skew_change":
        return value - base if not (math.isnan(value) or math.isnan(base)) else math.nan
    return relative_delta(value, base)


def build_report(run_dir, baseline: str, out_path=None) -> tuple:
    """Write ``report.csv`` and return ``(path, rows, text)``."""
    manifest, metrics, fits = load_run(run_dir)
    variants = list(manifest["variants"])
    if baseline not in variants:
        raise ConfigError(f"baseline variant {baseline!r} not in run; available: {variants}")
    rows = comparison_rows(metrics, fits, baseline)
    path = Path(out_path) if out_path else Path(run_dir) / "report.csv"
    write_csv(path, REPORT_COLUMNS, rows)
    return path, rows, render_text(rows, variants, baseline)


def render_text(rows: list, variants: list, baseline: str) -> str:
    summary = [r for r in rows if r[3] == SUMMARY_ITERATION]
    keys = []
    for metric, param, *_ in summary:
        if (metric, param) not in keys:
            keys.append((metric, param))
    by = {(r[0], r[1], r[2]): r for r in summary}
    lines = [f"mean over served iterations; deltas relative to {baseline!r}", ""]
    header = f"{'metric':<14}{'param':>8}  " + "  ".join(f"{v:>24}" for v in variants)
    lines.append(header)
    for metric, param in keys:
        cells = []
        for v in variants:
            r = by.get((metric, param, v))
            if r is None:
                cells.append(f"{'-':>24}")
            elif v == baseline:
                cells.append(f"{r[4]:>24.6g}")
            else:
                cells.append(f"{r[4]:>13.6g} ({r[6]:+8.2%})")
        lines.append(f"{metric:<14}{param:>8}  " + "  ".join(cells))
    return "\n".join(lines)
