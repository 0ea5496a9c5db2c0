"""Command line entry points.

Subcommands mirror the pipeline stages: gen-benchmark, ingest,
extract-topics, retrieve, rerank, evaluate, run-all, sweep-n, and
depth-analysis. Every stage command accepts --config TOML plus repeatable
--set key=value overrides.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .benchmark import generate_benchmark
from .evaluation import EvaluationError, EvalConfig, evaluate_run, parse_qrels, parse_run
from .pipeline import (
    CorpusStore,
    PipelineStageError,
    build_labeler,
    extract_topics,
    ingest_corpus,
    load_config,
    run_depth_analysis,
    run_pipeline,
    run_retrieval,
    sweep_n_level,
)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _build_config(args: argparse.Namespace):
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"bad override {item!r}, expected KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides)


def _print_macro(report) -> None:
    for name in sorted(report.macro):
        print(f"{name}\t{report.macro[name]:.4f}")


def cmd_gen_benchmark(args: argparse.Namespace) -> int:
    paths = generate_benchmark(args.out, topics=args.topics, seed=args.seed)
    print(f"ontology  {paths.ontology}")
    print(f"corpus    {paths.corpus}")
    print(f"topics    {paths.topics}")
    print(f"qrels     {paths.qrels}")
    print(f"manifest  {paths.manifest}")
    print(f"config    {paths.config}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if not cfg.corpus:
        raise ValueError("config sets no corpus path")
    store = CorpusStore(cfg.resolved_store_dir)
    count = ingest_corpus(cfg.corpus, build_labeler(cfg), store)
    print(f"stored {count} new trials in {cfg.resolved_store_dir}")
    return 0


def cmd_extract_topics(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if not cfg.topics:
        raise ValueError("config sets no topics path")
    store = CorpusStore(cfg.resolved_store_dir)
    count = extract_topics(cfg.topics, build_labeler(cfg), store)
    print(f"extracted {count} new patient profiles into {cfg.resolved_store_dir}")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    result = run_retrieval(cfg)
    print(f"wrote {result.first_stage_path}")
    if result.first_stage_report:
        _print_macro(result.first_stage_report)
    return 0


def cmd_rerank(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    result = run_pipeline(cfg)
    print(f"wrote {result.first_stage_path}")
    print(f"wrote {result.reranked_path}")
    if result.report:
        _print_macro(result.report)
    return 0


def cmd_run_all(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if not cfg.qrels:
        raise ValueError("run-all needs a qrels path in the config")
    result = run_pipeline(cfg)
    print(f"run directory: {result.run_dir}")
    print("first stage (ov):")
    _print_macro(result.first_stage_report)
    print("reranked:")
    _print_macro(result.report)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    run = parse_run(args.run)
    qrels = parse_qrels(args.qrels)
    config = EvalConfig(rel_threshold=args.threshold)
    report = evaluate_run(run, qrels, config)
    _print_macro(report)
    if args.per_topic:
        for topic in sorted(report.per_topic):
            vals = report.per_topic[topic]
            rendered = " ".join(
                f"{k}={'NA' if vals[k] is None else format(vals[k], '.4f')}"
                for k in sorted(vals)
            )
            print(f"{topic}\t{rendered}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def cmd_sweep_n(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    levels = [int(x) for x in args.levels.split(",") if x.strip()]
    rows = sweep_n_level(cfg, levels, out_path=args.out)
    print("level\trecall\tprecision\tmean_trials_per_patient")
    for level, recall, precision, mean_size in rows:
        print(f"{level}\t{recall:.4f}\t{precision:.4f}\t{mean_size:.1f}")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def cmd_depth_analysis(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    recall_r, precision_r, rows = run_depth_analysis(cfg, out_path=args.out)
    print(f"pearson recall vs depth\t{recall_r:.4f}")
    print(f"pearson precision vs depth\t{precision_r:.4f}")
    print(f"topics\t{len(rows)}")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trialmatch",
        description="Ontology-guided clinical trial retrieval and re-ranking.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-benchmark", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_benchmark)

    p = sub.add_parser("ingest", help="ingest the trial corpus into the store")
    _add_config_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract-topics", help="extract patient profiles from topics")
    _add_config_args(p)
    p.set_defaults(func=cmd_extract_topics)

    p = sub.add_parser("retrieve", help="first-stage retrieval with the demographic filter")
    _add_config_args(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("rerank", help="full pipeline: retrieve, label, gate, re-rank")
    _add_config_args(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("evaluate", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--threshold", type=int, default=2, choices=(1, 2))
    p.add_argument("--per-topic", action="store_true")
    p.add_argument("--out", help="write the full report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-all", help="pipeline plus evaluation in one command")
    _add_config_args(p)
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("sweep-n", help="retrieval sweep over expansion levels")
    _add_config_args(p)
    p.add_argument("--levels", default="1,2,3,4", help="comma-separated levels")
    p.add_argument("--out", help="TSV output path")
    p.set_defaults(func=cmd_sweep_n)

    p = sub.add_parser("depth-analysis", help="correlate retrieval quality with diagnosis depth")
    _add_config_args(p)
    p.add_argument("--out", help="scatter TSV output path")
    p.set_defaults(func=cmd_depth_analysis)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (PipelineStageError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
