"""Command-line entry point.

Exit codes: 0 on success, 1 on runtime failure (including unreadable or
malformed inputs), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .domain import PositionBiasCurve
from .errors import (
    ConfigError,
    EmptyHistogramError,
    EstimationError,
    LogFormatError,
    TrainingError,
)
from .io import read_json, read_log_jsonl, write_csv, write_json
from . import metrics as M
from .propensity import PropensityFit, estimate_propensity_em
from .rankers import RankerPolicy, serve_batch
from .skewfit import build_histogram, fit_exponential_mle, skew_change

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("posbias")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def cmd_simulate(args) -> int:
    from .experiment import run_experiment

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.variant:
            cfg = cfg.select(args.variant)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    out = args.out or cfg.output_dir or str(Path("runs") / Path(args.config).stem)
    try:
        manifest = run_experiment(cfg, out, threads=args.threads)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (TrainingError, EstimationError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    for name, summary in manifest["variants"].items():
        lams = ", ".join("nan" if v is None else f"{v:.5f}" for v in summary["lambda"])
        status = "FAILED: " + summary["error"] if summary["failed"] else "ok"
        print(f"{name}: lambda per iteration [{lams}] {status}")
    print(f"wrote {out}")
    return EXIT_RUNTIME if manifest["status"] == "failed" else EXIT_OK


def _read_log(path):
    try:
        return read_log_jsonl(path)
    except LogFormatError as exc:
        _err(f"{path}: {exc}")
    except OSError as exc:
        _err(f"{path}: {exc.strerror}")
    return None


def cmd_estimate_propensity(args) -> int:
    lg = _read_log(args.log)
    if lg is None:
        return EXIT_RUNTIME
    try:
        fit = estimate_propensity_em(lg, max_iter=args.max_iter, tol=args.tol)
    except EstimationError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    out = Path(args.out or Path(args.log).with_suffix(".propensity.json"))
    write_json(out, fit.to_dict())
    status = "converged" if fit.converged else "not converged"
    print(f"beta_hat={fit.beta_hat:.6f} {status} after {fit.em_iterations_used} iterations")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fit_skew(args) -> int:
    lg = _read_log(args.log)
    if lg is None:
        return EXIT_RUNTIME
    n_items = args.n_items or int(lg.items.max()) + 1
    if n_items <= int(lg.items.max()):
        _err(f"--n-items {n_items} is smaller than the largest logged item id + 1")
        return EXIT_CONFIG
    try:
        hist = build_histogram(lg, n_items)
        fit = fit_exponential_mle(hist)
        payload = fit.to_dict()
        if args.reference:
            ref = _read_log(args.reference)
            if ref is None:
                return EXIT_RUNTIME
            before = fit_exponential_mle(build_histogram(ref, n_items))
            payload["reference_lambda_hat"] = before.lambda_hat
            payload["skew_change"] = skew_change(before.lambda_hat, fit.lambda_hat)
    except EmptyHistogramError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    out = Path(args.out or Path(args.log).parent / (Path(args.log).stem + "_skew"))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "histogram.csv", ("rank", "item", "count", "share"), hist.rows())
    write_json(out / "fit.json", payload)
    line = f"lambda_hat={fit.lambda_hat:.6f} mean_rank={fit.mean_rank:.3f} n={fit.n_observations}"
    if "skew_change" in payload:
        line += f" skew_change={payload['skew_change']:+.4f}"
    print(line)
    print(f"wrote {out}")
    return EXIT_OK


def _curve_for(args, length: int):
    if args.propensity:
        return PropensityFit.from_dict(read_json(args.propensity)).curve()
    return PositionBiasCurve.power_law(args.beta, length)


def cmd_evaluate(args) -> int:
    from .experiment import offline_metrics

    lg = _read_log(args.log)
    if lg is None:
        return EXIT_RUNTIME
    try:
        policy = RankerPolicy.from_dict(read_json(args.policy))
    except (OSError, KeyError, ValueError) as exc:
        _err(f"{args.policy}: cannot load policy: {exc}")
        return EXIT_RUNTIME
    ks = args.k or [min(6, lg.slate_length)]
    if max(ks) > lg.slate_length:
        _err(f"k={max(ks)} exceeds the logged slate length {lg.slate_length}")
        return EXIT_CONFIG
    if int(lg.items.max()) >= policy.n_items or int(lg.segment.max()) >= policy.n_segments:
        _err("log references items or segments the policy does not know")
        return EXIT_CONFIG
    try:
        curve = _curve_for(args, lg.slate_length)
    except (OSError, KeyError, ValueError) as exc:
        _err(f"cannot build the propensity curve: {exc}")
        return EXIT_CONFIG
    rows = offline_metrics(policy, lg, ks, curve)
    if args.popularity_log:
        pop_log = _read_log(args.popularity_log)
        if pop_log is None:
            return EXIT_RUNTIME
        pop = pop_log.click_counts(policy.n_items)
    else:
        pop = lg.click_counts(policy.n_items)
    reranked = serve_batch(policy, lg.segment, lg.items, lg.slate_length)
    rows += [("arp", k, M.arp_matrix(reranked, k, pop)) for k in ks]
    variant = args.variant[0] if args.variant else policy.kind.value
    out = Path(args.out or Path(args.log).with_suffix(".metrics.csv"))
    write_csv(out, ("metric", "parameter", "variant", "iteration", "value"),
              [(m, p, variant, lg.iteration, v) for m, p, v in rows])
    for m, p, v in rows:
        print(f"{m}@{p} = {v:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    if not args.baseline:
        _err("--baseline is required")
        return EXIT_CONFIG
    try:
        path, _, text = build_report(args.run_dir, args.baseline, args.out)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (OSError, KeyError, ValueError) as exc:
        _err(f"{args.run_dir}: incomplete run directory ({exc})")
        return EXIT_RUNTIME
    print(text)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posbias",
        description="Position-bias feedback-loop simulator and popularity-skew analysis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the configured feedback-loop experiment")
    p.add_argument("--config", required=True, help="YAML experiment configuration")
    p.add_argument("--out", help="run directory (default: output_dir or runs/<config name>)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("--variant", action="append", help="run only this variant (repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-propensity", help="fit the position-bias curve of a log by EM")
    p.add_argument("--log", required=True, help="JSONL impression log")
    p.add_argument("--out", help="output JSON path")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_estimate_propensity)

    p = sub.add_parser("fit-skew", help="popularity histogram and exponential fit of a log")
    p.add_argument("--log", required=True, help="JSONL impression log")
    p.add_argument("--reference", help="earlier log to compute the skew change against")
    p.add_argument("--n-items", type=int, help="catalog size (default: largest id + 1)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_fit_skew)

    p = sub.add_parser("evaluate", help="offline metrics of a saved policy on a logged iteration")
    p.add_argument("--policy", required=True, help="policy JSON written by simulate")
    p.add_argument("--log", required=True, help="JSONL impression log to evaluate on")
    p.add_argument("--k", type=int, action="append", help="cutoff (repeatable; default 6)")
    p.add_argument("--beta", type=float, default=1.0, help="power-law severity for IPS gains")
    p.add_argument("--propensity", help="propensity JSON to use instead of --beta")
    p.add_argument("--popularity-log", help="log whose clicks define ARP popularity")
    p.add_argument("--variant", action="append", help="variant label for the output rows")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="compare variants of a run against a baseline")
    p.add_argument("run_dir", help="run directory written by simulate")
    p.add_argument("--baseline", help="baseline variant name")
    p.add_argument("--variant", action="append", help="alias for --baseline when given once")
    p.add_argument("--out", help="report CSV path (default: <run_dir>/report.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "report" and not args.baseline and args.variant:
        args.baseline = args.variant[0]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
