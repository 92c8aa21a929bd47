"""Command-line interface: ``rankbias <command> [options]``.

Commands
--------
simulate        draw a data set from a DGP config and write it as CSV
mc-experiment   Monte Carlo moments of uplift predictions and noise by rank
fit-eval        fit, tune and evaluate learners; bucket, Qini and bias reports
qini            Qini curve and ranking-bias report for a file of scores
report-svg      render SVG charts from CSV outputs

Exit status: 0 success, 1 usage or configuration error, 2 invalid input
data, 3 experiment failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from rankbias import __version__
from rankbias.datagen import ConfigError, generate, write_csv
from rankbias.experiment import (
    ExperimentFailure,
    ExperimentSpec,
    dgp_from_dict,
    run_fit_eval,
    run_mc,
)
from rankbias.ingest import ColumnMapping, DataValidationError, load_csv
from rankbias.learners import InsufficientDataError
from rankbias.qini import detect_ranking_bias, qini_curve, write_curve_csv
from rankbias.ranking import bucket_report, write_bucket_report
from rankbias.svg import svg_from_csv

logger = logging.getLogger("rankbias")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FAILURE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed (overrides the spec file)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--out-dir", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging")


def _add_mapping(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="input CSV file")
    p.add_argument("--features", type=_csv_list, help="comma-separated feature columns")
    p.add_argument("--treatment-col", default="treatment")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--p", type=float, help="known treatment probability (default: treated share)")


def _add_forest(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learners", type=_csv_list, help="comma-separated learners: T,S,TO-forest")
    p.add_argument("--n-trees", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--buckets", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankbias", description="Ranking-bias diagnostics for uplift models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a data set from a DGP")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="DGP config JSON")
    src.add_argument("--preset", choices=["paper", "bias-stress", "homoskedastic"])
    p.add_argument("--n", type=int, help="number of rows (overrides the config)")
    p.add_argument("--out", type=Path, help="output CSV (default OUT_DIR/data.csv)")
    p.add_argument("--no-ground-truth", action="store_true", help="omit mu and tau columns")
    _add_common(p)

    p = sub.add_parser("mc-experiment", help="Monte Carlo moments of predictions")
    p.add_argument("--spec", type=Path, help="experiment spec JSON")
    p.add_argument("--preset", choices=["paper", "bias-stress", "homoskedastic"])
    p.add_argument("--replications", type=int)
    p.add_argument("--no-svg", action="store_true")
    _add_forest(p)
    _add_common(p)

    p = sub.add_parser("fit-eval", help="fit, tune and evaluate on train/tune/test splits")
    p.add_argument("--spec", type=Path, help="experiment spec JSON")
    p.add_argument("--preset", choices=["paper", "bias-stress", "homoskedastic"])
    p.add_argument("--split", help="train,tune,test fractions (default 0.1,0.1,0.8)")
    p.add_argument("--no-tune", action="store_true", help="use the given forest parameters")
    p.add_argument("--no-svg", action="store_true")
    _add_mapping(p)
    _add_forest(p)
    _add_common(p)

    p = sub.add_parser("qini", help="Qini curve and bias report for a scores file")
    p.add_argument("--input", required=True, help="CSV with score, treatment and outcome columns")
    p.add_argument("--score-col", default="score")
    p.add_argument("--treatment-col", default="treatment")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--buckets", type=int, default=100)
    p.add_argument("--tail-window", type=float, default=0.10)
    p.add_argument("--z", type=float, default=3.0)
    p.add_argument("--no-svg", action="store_true")
    _add_common(p)

    p = sub.add_parser("report-svg", help="render SVG charts from CSV outputs")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out-dir", type=Path, help="default: next to each CSV")
    return parser


def _read_json(path: Path) -> dict[str, Any]:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def _require_out_dir(args) -> Path:
    if args.out_dir is None:
        raise UsageError("--out-dir is required")
    return args.out_dir


def _svgs(paths: Sequence[Path]) -> None:
    for p in paths:
        if p.suffix == ".csv":
            p.with_suffix(".svg").write_text(svg_from_csv(p))


def _spec_dict(args) -> dict[str, Any]:
    d = _read_json(args.spec) if args.spec else {}
    if args.preset:
        d["dgp"] = {"preset": args.preset}
    if getattr(args, "input", None):
        d.pop("dgp", None)
        d["input"] = args.input
    if getattr(args, "features", None):
        m = d.setdefault("mapping", {})
        m["feature_columns"] = args.features
    if "mapping" in d or getattr(args, "input", None):
        m = d.setdefault("mapping", {})
        if getattr(args, "treatment_col", "treatment") != "treatment" or "treatment_column" not in m:
            m["treatment_column"] = args.treatment_col
        if getattr(args, "outcome_col", "outcome") != "outcome" or "outcome_column" not in m:
            m["outcome_column"] = args.outcome_col
        if getattr(args, "p", None) is not None:
            m["treatment_probability"] = args.p
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        d["replications"] = args.replications
    if args.buckets is not None:
        d["buckets"] = args.buckets
    if getattr(args, "split", None):
        d["split"] = [float(v) for v in args.split.split(",")]
    if getattr(args, "no_tune", False):
        d["tune"] = False
    if args.no_svg:
        d["svg"] = False

    overrides = {
        k: v
        for k, v in (
            ("n_trees", args.n_trees), ("max_depth", args.max_depth),
            ("min_leaf", args.min_leaf), ("mtry", args.mtry),
        )
        if v is not None
    }
    if args.learners:
        d["learners"] = [{"kind": k} for k in args.learners]
    if overrides:
        learners = d.get("learners") or [{"kind": "T"}]
        d["learners"] = [
            {"kind": x} if isinstance(x, str) else dict(x) for x in learners
        ]
        for x in d["learners"]:
            x["params"] = {**x.get("params", {}), **overrides}
        d["outcome_params"] = {**d.get("outcome_params", {}), **overrides}
    return d


def cmd_simulate(args) -> int:
    if args.config:
        cfg = dgp_from_dict(_read_json(args.config))
    else:
        cfg = dgp_from_dict({"preset": args.preset})
    if args.n is not None:
        if args.n < 1:
            raise ConfigError(f"--n must be positive, got {args.n}")
        cfg = dataclasses.replace(cfg, n_observations=args.n)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        out = args.out
    else:
        out = _require_out_dir(args) / "data.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    data = generate(cfg)
    write_csv(data, out, ground_truth=not args.no_ground_truth)
    out.with_suffix(".dgp.json").write_text(cfg.to_json() + "\n")
    logger.info("wrote %d rows to %s", data.n, out)
    return EXIT_OK


def cmd_mc_experiment(args) -> int:
    out_dir = _require_out_dir(args)
    spec = ExperimentSpec.from_dict(_spec_dict(args))
    result = run_mc(spec, threads=args.threads)
    paths = result.write(out_dir)
    if spec.svg:
        _svgs(paths)
    return EXIT_OK


def cmd_fit_eval(args) -> int:
    out_dir = _require_out_dir(args)
    d = _spec_dict(args)
    if "input" in d and not d.get("mapping", {}).get("feature_columns"):
        raise UsageError("--features is required with --input")
    spec = ExperimentSpec.from_dict(d)
    try:
        result = run_fit_eval(spec, threads=args.threads)
    except InsufficientDataError as exc:
        raise ExperimentFailure(str(exc)) from None
    paths = result.write(out_dir)
    if spec.svg:
        _svgs(paths)
    return EXIT_OK


def cmd_qini(args) -> int:
    out_dir = _require_out_dir(args)
    if args.buckets < 3:
        raise UsageError("--buckets must be at least 3")
    mapping = ColumnMapping((args.score_col,), args.treatment_col, args.outcome_col)
    data = load_csv(args.input, mapping)
    scores = data.features[:, 0]
    curve = qini_curve(scores, data.outcome, data.treatment, n_points=args.buckets, label="scores")
    stats = bucket_report(scores, data.outcome, data.treatment, args.buckets)
    report = detect_ranking_bias(
        curve,
        [s.ate_hat for s in stats],
        [s.ate_se for s in stats],
        tail_window=args.tail_window,
        z=args.z,
        bucket_counts=[s.n for s in stats],
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "qini.csv", out_dir / "buckets.csv"]
    write_curve_csv(curve, paths[0])
    write_bucket_report(stats, paths[1])
    doc = report.to_dict()
    doc["auuc"] = float(curve.auuc)
    (out_dir / "bias.json").write_text(json.dumps(doc, indent=2) + "\n")
    if not args.no_svg:
        _svgs(paths)
    return EXIT_OK


def cmd_report_svg(args) -> int:
    for path in args.csv:
        if not path.exists():
            raise UsageError(f"{path}: no such file")
        target_dir = args.out_dir or path.parent
        target_dir.mkdir(parents=True, exist_ok=True)
        (target_dir / (path.stem + ".svg")).write_text(svg_from_csv(path))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "mc-experiment": cmd_mc_experiment,
    "fit-eval": cmd_fit_eval,
    "qini": cmd_qini,
    "report-svg": cmd_report_svg,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", 1) < 1:
        print("rankbias: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except DataValidationError as exc:
        print(f"rankbias: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ExperimentFailure as exc:
        print(f"rankbias: experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except FileNotFoundError as exc:
        print(f"rankbias: error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"rankbias: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
