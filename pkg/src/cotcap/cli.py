"""``cotcap`` command line.

Exit codes: 0 success, 1 some items failed, 2 usage / config / input error.
Errors are printed to stderr as one JSON object; each command prints a JSON
summary line to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backends import BackendError, Gateway, MockBackend
from .config import Config, ConfigError, load_config
from .dataset import (
    STRATEGY_GROUNDING,
    TRIPLE_LOG,
    TRIPLES_FILE,
    build_cot_dataset,
    export_sft,
    project_datasets,
    write_datasets,
)
from .inference import INFERENCES_FILE, Backends, load_inferences, run_split
from .metrics import METRIC_FAMILIES_CLI, EmptyEvaluation, MissingReference, evaluate, load_references, report_json
from .metrics.evaluate import score_items
from .metrics.items import EvalItem
from .models import CoTTriple, MetricReport, PairRecord, RecordError, read_jsonl, validate_corpus
from .report import labels_for, render_report, to_csv, to_text

logger = logging.getLogger("cotcap")


class CliError(Exception):
    def __init__(self, message: str, kind: str = "usage", code: int = 2):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _emit(summary: dict[str, Any]) -> None:
    print(json.dumps(summary, sort_keys=True))


def _load_corpus(path: str, split: str | None = None) -> list[PairRecord]:
    if not Path(path).is_file():
        raise CliError(f"corpus not found: {path}", "io")
    try:
        records = read_jsonl(path, PairRecord)
    except (KeyError, TypeError, RecordError) as exc:
        raise CliError(f"{path}: invalid pair record: {exc}", "corpus") from exc
    if split:
        records = [r for r in records if r.split == split]
    return records


def _validated(records: list[PairRecord]) -> list[PairRecord]:
    summary = validate_corpus(records)
    if not summary.ok:
        raise CliError(
            f"corpus invalid: {len(summary.duplicate_ids)} duplicate ids, {len(summary.empty_captions)} empty captions",
            "corpus",
        )
    return records


def _load_config(path: str | None) -> Config:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), "config") from exc


def _backend_stats(gw: Gateway) -> dict[str, Any]:
    stats: dict[str, Any] = {"new_calls": gw.network_calls, "cache_hits": gw.cache_hits}
    in_flight = {name: b.max_in_flight for name, b in gw.backends.items() if isinstance(b, MockBackend)}
    if in_flight:
        stats["max_in_flight"] = in_flight
    return stats


def _require_backend(cfg: Config, name: str | None, role: str) -> str:
    if not name:
        raise CliError(f"no {role} backend: pass --{role} or set pipeline.{role}", "config")
    if name not in cfg.backends:
        raise CliError(f"{role} backend {name!r} is not configured", "config")
    return name


# -- commands -----------------------------------------------------------------


def cmd_build_dataset(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    corpus = _validated(_load_corpus(args.corpus, args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vlm = _require_backend(cfg, args.vlm or cfg.pipeline.vlm, "vlm")
    llm = _require_backend(cfg, args.llm or cfg.pipeline.llm, "llm")
    strategy = args.strategy or cfg.pipeline.strategy
    if strategy not in STRATEGY_GROUNDING:
        raise CliError(f"unknown strategy {strategy!r}")
    if not args.resume:
        (out / TRIPLE_LOG).unlink(missing_ok=True)
    gw = cfg.gateway(out / "cache", use_cache=False if args.no_cache else None)
    limit = args.limit or cfg.pipeline.limit
    result = build_cot_dataset(corpus, vlm, llm, gw, templates=cfg.templates, out_dir=out, limit=limit)
    if not result.triples:
        raise CliError("no triples were built; every pair failed", "pipeline", 1)
    code = _export(cfg, result.triples, corpus, strategy, out, args.no_plain, vlm)
    summary = {
        "command": "build-dataset",
        "pairs": len(corpus),
        "triples": len(result.triples),
        "failures": len(result.failures),
        "resumed": result.resumed,
        "config_digest": cfg.digest,
        **code,
        **_backend_stats(gw),
    }
    _emit(summary)
    print(f"{summary['new_calls']} new calls", file=sys.stderr)
    return 1 if result.failures else 0


def _export(
    cfg: Config, triples: list[CoTTriple], corpus: list[PairRecord], strategy: str, out: Path, no_plain: bool,
    vlm: str | None = None,
) -> dict[str, Any]:
    grounding = STRATEGY_GROUNDING[strategy]
    videos = {p.id: p.video for p in corpus}
    datasets = project_datasets(triples, grounding, videos)
    ds_files = write_datasets(datasets, out)
    vlm = vlm or cfg.pipeline.vlm
    sample = cfg.backends[vlm].sample_frames if vlm in cfg.backends else 16
    manifest = export_sft(
        datasets, strategy, out, templates=cfg.templates, sample_frames=sample,
        include_plain=not no_plain, extra_files=ds_files, config_digest=cfg.digest,
    )
    counts = {Path(f.path).name: f.records for f in manifest.datasets}
    return {"strategy": strategy, "files": counts, "sft_rows": counts[f"sft_{strategy}.jsonl"]}


def cmd_export_sft(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    corpus = _load_corpus(args.corpus)
    triples_path = Path(args.triples) if args.triples else Path(args.out) / TRIPLES_FILE
    if not triples_path.is_file():
        raise CliError(f"triples not found: {triples_path}", "io")
    triples = read_jsonl(triples_path, CoTTriple)
    known = {p.id for p in corpus}
    dangling = [t.pair_id for t in triples if t.pair_id not in known]
    if dangling:
        raise CliError(f"{len(dangling)} triples reference pairs missing from the corpus", "corpus")
    if not triples:
        raise CliError("no triples to export", "input")
    strategy = args.strategy or cfg.pipeline.strategy
    info = _export(cfg, triples, corpus, strategy, Path(args.out), args.no_plain)
    _emit({"command": "export-sft", "triples": len(triples), "config_digest": cfg.digest, **info})
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    corpus = _validated(_load_corpus(args.corpus, args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = {"cot": "cot_chained", "two-stage": "two_stage"}.get(args.mode, args.mode)
    grounding = args.grounding or cfg.pipeline.grounding
    vlm = _require_backend(cfg, args.vlm or cfg.pipeline.vlm, "vlm")
    llm = None
    if mode == "two_stage" or (mode == "cot_chained" and grounding == "video_caption"):
        llm = _require_backend(cfg, args.llm or cfg.pipeline.llm, "llm")
    gw = cfg.gateway(out / "cache", use_cache=False if args.no_cache else None)
    records = run_split(
        corpus, mode, Backends(vlm, llm), gw, limit=args.limit or cfg.pipeline.limit,
        grounding=grounding, templates=cfg.templates, out_path=out / INFERENCES_FILE,
    )
    failed = sum(1 for r in records if not hasattr(r, "final_caption"))
    _emit({
        "command": "infer", "mode": mode, "items": len(records), "failures": failed,
        "config_digest": cfg.digest, **_backend_stats(gw),
    })
    return 1 if failed else 0


def _metric_selection(spec: str | None, cfg: Config) -> tuple[str, ...]:
    if not spec:
        return cfg.metrics.metrics
    names = tuple(m.strip().lower().replace("-", "").replace("_", "") for m in spec.split(",") if m.strip())
    bad = [m for m in names if m not in METRIC_FAMILIES_CLI]
    if bad:
        raise CliError(f"unknown metrics {bad}; choose from {sorted(METRIC_FAMILIES_CLI)}")
    return tuple(METRIC_FAMILIES_CLI[m] for m in names)


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if not Path(args.corpus).is_file():
        raise CliError(f"corpus not found: {args.corpus}", "io")
    refs, audio = load_references(args.corpus)
    mcfg = cfg.metrics.with_metrics(_metric_selection(args.metrics, cfg))
    if args.clap_mode:
        mcfg = type(mcfg)(**{**mcfg.__dict__, "clap_mode": args.clap_mode})
    gw = cfg.gateway() if "clap" in mcfg.metrics else None
    try:
        if args.gt:
            items = [EvalItem(k, v[0], tuple(v), audio.get(k)) for k, v in refs.items()]
            report = score_items(items, mcfg, gw)
        else:
            if not args.inferences or not Path(args.inferences).is_file():
                raise CliError(f"inferences not found: {args.inferences}", "io")
            results, errors = load_inferences(args.inferences)
            if errors:
                logger.warning("%d items have no inference result and are not scored", len(errors))
            report = evaluate(results, refs, mcfg, gw, audio)
    except MissingReference as exc:
        raise CliError(str(exc), "missing_reference") from exc
    except EmptyEvaluation as exc:
        raise CliError(str(exc), "empty_evaluation") from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_json(report), encoding="utf-8")
    label = args.label or ("GT" if args.gt else labels_for([out])[0])
    if args.table:
        Path(args.table).parent.mkdir(parents=True, exist_ok=True)
        Path(args.table).write_text(to_csv({label: report}), encoding="utf-8")
        print(to_text({label: report}), end="", file=sys.stderr)
    _emit({
        "command": "evaluate", "items": len(report.per_item), "corpus": report.corpus,
        "digest": report.metric_config_digest, "config_digest": cfg.digest,
    })
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    paths = [Path(p) for p in args.reports]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise CliError(f"report not found: {', '.join(missing)}", "io")
    labels = args.labels.split(",") if args.labels else labels_for(paths)
    if len(labels) != len(paths):
        raise CliError("--labels must name every report")
    reports = {}
    for label, p in zip(labels, paths):
        reports[label] = MetricReport.from_dict(json.loads(p.read_text(encoding="utf-8")))
    written = render_report(reports, args.out, args.format)
    print(to_text(reports), end="", file=sys.stderr)
    _emit({"command": "report", "files": sorted(str(p) for p in written.values())})
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotcap", description="CoT audio-caption datasets, inference and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, backends: bool = True) -> None:
        p.add_argument("--config", help="TOML config file")
        if backends:
            p.add_argument("--vlm", help="backend id of the vision-language model")
            p.add_argument("--llm", help="backend id of the text-only model")
            p.add_argument("--limit", type=int, help="max concurrent items")
            p.add_argument("--no-cache", action="store_true", help="bypass the response cache")
            p.add_argument("--split", choices=("train", "val", "test"), help="only use this split of the corpus")

    p = sub.add_parser("build-dataset", help="caption videos, extract objects/events, export SFT data")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=tuple(STRATEGY_GROUNDING))
    p.add_argument("--resume", action="store_true", help="skip pairs finished by a previous run")
    p.add_argument("--no-plain", action="store_true", help="skip the non-CoT (direct prompt) export")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("export-sft", help="re-export SFT data from existing triples")
    common(p, backends=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", help="defaults to <out>/cot_triples.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=tuple(STRATEGY_GROUNDING))
    p.add_argument("--no-plain", action="store_true")
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("infer", help="run direct / two-stage / cot inference over a corpus")
    common(p)
    p.add_argument("--mode", required=True, choices=("direct", "two_stage", "two-stage", "cot", "cot_chained"))
    p.add_argument("--grounding", choices=("video", "video_caption"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score inferences against reference captions")
    common(p, backends=False)
    p.add_argument("--inferences")
    p.add_argument("--corpus", required=True, help="pairs JSONL holding the reference captions")
    p.add_argument("--out", required=True, help="report.json path")
    p.add_argument("--metrics", help="comma list of: clap,bleu,meteor,rougel,cider")
    p.add_argument("--clap-mode", choices=("audio", "text"))
    p.add_argument("--gt", action="store_true", help="score each item's first reference as the candidate")
    p.add_argument("--table", help="also write the results table as CSV here")
    p.add_argument("--label", help="row label for the table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="tables and figures from one or more report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated row labels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", default="png", choices=("png", "pdf", "svg"))
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "kind": exc.kind}), file=sys.stderr)
        return exc.code
    except BackendError as exc:
        print(json.dumps({"error": str(exc), "kind": "backend"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
