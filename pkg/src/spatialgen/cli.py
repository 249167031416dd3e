"""Command-line entry points.

Exit codes: 0 success, 1 partial or failed run, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .datasets import TrainingItem, sample_subset, top_table_csv, report_text, FILTERS
from .errors import ConfigInvalid, SpatialGenError
from .evaluation import load_answer_file, score
from .datasets import HoldoutItem
from .graphs import SpatialKG, corpus_stats
from .pipeline import Pipeline, _read_jsonl

logger = logging.getLogger(__name__)

STAGE_COMMANDS = {
    "gen-scenes": "scenes",
    "build-skg": "skgs",
    "solve": "instances",
    "render": "render",
    "filter": "image_filter",
    "qa": "qa",
    "emit": "emit",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline config YAML")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--workers", type=int, help="stage-internal worker count")
    parser.add_argument("--out", type=Path, help="override the output directory")
    parser.add_argument(
        "--offline", action="store_true", help="force catalog/procedural/offline backends"
    )


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.out is not None:
        config.output_dir = str(args.out)
    if args.offline:
        config.text_backend.kind = "catalog"
        config.image_backend.kind = "procedural"
        config.knowledge.kind = "offline"
    config.validate()
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    pipeline = Pipeline(_build_config(args))
    return pipeline.run()


def _cmd_stage(stage: str, args: argparse.Namespace) -> int:
    pipeline = Pipeline(_build_config(args))
    status = pipeline.run_stage(stage)
    print(f"{status.name}: {'skipped' if status.skipped else status.counts}")
    return 1 if pipeline.pending else 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out = Path(config.output_dir)
    skgs_path = out / "skgs.jsonl"
    if not skgs_path.exists():
        print("no skgs.jsonl found; run build-skg first", file=sys.stderr)
        return 1
    corpus = [SpatialKG.from_dict(row) for row in _read_jsonl(skgs_path)]
    stats = corpus_stats(corpus)
    print(report_text(stats), end="")
    (out / "objects_top15.csv").write_text(top_table_csv(stats.top_objects(15)), encoding="utf-8")
    (out / "relations_top15.csv").write_text(top_table_csv(stats.top_relations(15)), encoding="utf-8")
    print(f"wrote {out / 'objects_top15.csv'} and {out / 'relations_top15.csv'}")
    return 0


def _cmd_sample(args: argparse.Namespace) -> int:
    config = _build_config(args)
    train_path = Path(config.output_dir) / "dataset" / "train.json"
    if not train_path.exists():
        print("no train.json found; run emit first", file=sys.stderr)
        return 1
    items = [TrainingItem.from_dict(row) for row in json.loads(train_path.read_text(encoding="utf-8"))]
    subset = sample_subset(items, args.size, args.seed if args.seed is not None else 0, args.filter)
    dest = args.dest or Path(config.output_dir) / "subsets" / (
        f"subset_{args.size}_{args.filter or 'all'}.json"
    )
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps([item.to_dict() for item in subset], indent=1), encoding="utf-8")
    print(f"wrote {len(subset)} items to {dest}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    holdout_rows = json.loads(Path(args.holdout).read_text(encoding="utf-8"))
    holdout = [HoldoutItem.from_dict(row) for row in holdout_rows]
    answers = load_answer_file(Path(args.answers))
    report = score(answers, holdout)
    print(report.format_table())
    report_path = args.report or Path(args.answers).with_name("eval_report.json")
    Path(report_path).write_text(json.dumps(report.to_dict(), indent=1), encoding="utf-8")
    print(f"wrote {report_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialgen",
        description="Generate layout-consistent images and spatial QA datasets from spatial knowledge graphs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the full pipeline")
    _add_common(run)

    for command in STAGE_COMMANDS:
        stage_parser = sub.add_parser(command, help=f"run only the {command} stage")
        _add_common(stage_parser)

    stats = sub.add_parser("stats", help="distribution report over the built graphs")
    _add_common(stats)

    sample = sub.add_parser("sample", help="draw an ablation subset from train.json")
    _add_common(sample)
    sample.add_argument("--size", type=int, required=True)
    sample.add_argument("--filter", choices=sorted(FILTERS), default=None)
    sample.add_argument("--dest", type=Path, default=None)

    scorer = sub.add_parser("score", help="score an answer file against a holdout benchmark")
    scorer.add_argument("--holdout", type=Path, required=True, help="holdout.json path")
    scorer.add_argument("--answers", type=Path, required=True, help="JSONL answer file")
    scorer.add_argument("--report", type=Path, default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command in STAGE_COMMANDS:
            return _cmd_stage(STAGE_COMMANDS[args.command], args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "score":
            return _cmd_score(args)
        raise AssertionError(args.command)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpatialGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
