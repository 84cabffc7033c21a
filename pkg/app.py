#!/usr/bin/env python3
"""
FinCARDS command line.

Intra-document evidence reranking for financial filings: split a filing into
chunks, extract chunk cards and query intents, rerank with the card-based
tournament, evaluate run files and inspect audit traces.
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from fincards_backend.config.config import PipelineConfig, get_settings, load_pipeline_config
from fincards_backend.exceptions import EXIT_IO, EXIT_OK, EXIT_VALIDATION, ConfigError, FinCardsError, StageError
from fincards_backend.services.audit.service import AuditTrace, explain, validate_trace
from fincards_backend.services.corpus.service import ChunkStore, dump_chunks, load_chunks, split_filing
from fincards_backend.services.eval.service import comparison_table, evaluate_run, format_table
from fincards_backend.services.eval.trec import load_qrels, load_run, write_qrels, write_run
from fincards_backend.services.experiments.grid import run_grid
from fincards_backend.services.experiments.stability import run_stability
from fincards_backend.services.experiments.synthetic import filing_text, generate_filing
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.lexical.service import build_index
from fincards_backend.services.schema.io import load_cards, load_intents, load_questions, write_cards, write_intents
from fincards_backend.services.tournament.service import TournamentService

logger = logging.getLogger(__name__)


def run_async(coro):
    """Run an async coroutine to completion on a fresh event loop."""
    loop = asyncio.new_event_loop()
    asyncio.set_event_loop(loop)
    try:
        return loop.run_until_complete(coro)
    finally:
        loop.close()


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        overrides["stage3"] = {"base_seed": args.seed}
    if getattr(args, "judge", None):
        overrides["judge"] = {"backend": args.judge}
    paths = {}
    for key in ("chunks", "cards", "intents", "qrels"):
        if getattr(args, key, None):
            paths[key] = getattr(args, key)
    if getattr(args, "out", None):
        paths["output_dir"] = args.out
    if paths:
        overrides["paths"] = paths
    return overrides


def _config(args: argparse.Namespace) -> PipelineConfig:
    return load_pipeline_config(getattr(args, "config", None), _overrides(args))


def _require(value: Optional[Path], name: str) -> Path:
    if value is None:
        raise ConfigError(f"no {name} file given (set paths.{name} in the config or pass --{name})")
    return Path(value)


def _card_map(path: Path, store: ChunkStore) -> Dict[str, Any]:
    return {chunk_id: entry.card for chunk_id, entry in load_cards(path, store).items()}


def cmd_split(args: argparse.Namespace) -> int:
    text = Path(args.filing).read_text(encoding="utf-8")
    doc_id = args.doc_id or Path(args.filing).stem
    store = split_filing(text, doc_id)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_chunks(store, out)
    logger.info(f"Wrote {store.length} chunks to {out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    config = _config(args)
    store = load_chunks(_require(config.paths.chunks, "chunks"))
    judge = JudgeService(config.judge, config.oracle_weights)
    entries = run_async(judge.extract_cards(store))
    out = Path(args.cards_out)
    write_cards(out, entries)
    failed = [e.chunk_id for e in entries if e.card is None]
    for chunk_id in failed:
        logger.warning(f"No card for {chunk_id}")
    print(f"{len(entries) - len(failed)} cards written to {out}, {len(failed)} failures")
    return EXIT_OK


def cmd_intent(args: argparse.Namespace) -> int:
    config = _config(args)
    questions = load_questions(args.questions)
    judge = JudgeService(config.judge, config.oracle_weights)
    entries = run_async(judge.extract_intents(questions))
    out = Path(args.intents_out)
    write_intents(out, [entries[qid] for qid in sorted(entries)])
    missing = sorted(set(questions) - set(entries))
    print(f"{len(entries)} intents written to {out}, {len(missing)} failures")
    for qid in missing:
        print(f"  failed: {qid}")
    return EXIT_OK


def _save_trace(trace: AuditTrace, trace_dir: Path, suffix: str = "") -> Path:
    path = trace_dir / f"{trace.query_id}{suffix}.json"
    trace.save(path)
    return path


def cmd_rerank(args: argparse.Namespace) -> int:
    config = _config(args)
    store = load_chunks(_require(config.paths.chunks, "chunks"))
    cards = _card_map(_require(config.paths.cards, "cards"), store)
    intents = load_intents(_require(config.paths.intents, "intents"))
    qrels = load_qrels(config.paths.qrels) if config.paths.qrels else None

    out_dir = Path(config.paths.output_dir)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    tournament = TournamentService(JudgeService(config.judge, config.oracle_weights), config)
    index = build_index(store, config=config.lexical)

    async def rerank() -> list:
        lists = []
        for query_id in sorted(intents):
            entry = intents[query_id]
            gold_ids = None
            if qrels is not None:
                gold_ids = [cid for cid, grade in qrels.get(query_id, {}).items() if grade > 0]
            try:
                ranked, trace = await tournament.run_pipeline(query_id, entry.question, entry.intent, store, cards, index, gold_ids)
            except StageError as e:
                if e.trace is not None:
                    path = _save_trace(e.trace, trace_dir, ".partial")
                    logger.error(f"Query {query_id} failed in {e.stage}; partial trace at {path}")
                raise
            _save_trace(trace, trace_dir)
            lists.append(ranked)
        return lists

    lists = run_async(rerank())
    run_path = out_dir / f"{config.variant.value}.run"
    write_run(lists, run_path, tag=config.variant.value)
    print(f"Run file: {run_path} ({len(lists)} queries), traces in {trace_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    qrels = load_qrels(args.qrels)
    reports = []
    for run_path in args.runs:
        traces = None
        if args.traces:
            traces = [AuditTrace.load(p) for p in sorted(Path(args.traces).glob("*.json")) if not p.name.endswith(".partial.json")]
        report = evaluate_run(
            load_run(run_path),
            qrels,
            k=args.k,
            linear_gain=args.ndcg_linear_gain,
            run_name=Path(run_path).stem,
            traces=traces,
        )
        reports.append(report)
        print(report.to_text())
    if len(reports) > 1:
        print()
        print(format_table(comparison_table(reports)))
    if args.report:
        Path(args.report).write_text(
            json.dumps([r.model_dump(mode="json") for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    if args.trace_command == "explain":
        trace = AuditTrace.load(args.trace)
        chunk_text = None
        if args.chunks:
            store: ChunkStore = load_chunks(args.chunks)
            if args.chunk_id in store:
                chunk_text = store.get_chunk(args.chunk_id).text
        print(explain(trace, args.chunk_id, chunk_text).render())
        return EXIT_OK

    failed = 0
    for path in args.traces:
        report = validate_trace(AuditTrace.load(path))
        print(f"{path}: {report.render()}")
        failed += 0 if report.passed else 1
    return EXIT_OK if failed == 0 else 2


def cmd_grid(args: argparse.Namespace) -> int:
    config = _config(args)
    store = load_chunks(_require(config.paths.chunks, "chunks"))
    cards = _card_map(_require(config.paths.cards, "cards"), store)
    intents = load_intents(_require(config.paths.intents, "intents"))
    qrels = load_qrels(_require(config.paths.qrels, "qrels"))
    questions = {qid: (entry.question, entry.intent) for qid, entry in intents.items()}
    _, table = run_async(run_grid(store, cards, questions, qrels, config, args.masks, Path(config.paths.output_dir)))
    print(format_table(table))
    out = Path(config.paths.output_dir) / "grid.csv"
    table.to_csv(out)
    print(f"Table written to {out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    filing = generate_filing(seed=args.seed, n_queries=args.queries, n_chunks=args.length, lexical_gap=args.lexical_gap, doc_id=args.doc_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "filing.txt").write_text(filing_text(filing), encoding="utf-8")
    dump_chunks(filing.store, out / "chunks.jsonl")
    with open(out / "questions.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for query in filing.queries:
            f.write(json.dumps({"query_id": query.query_id, "question": query.question}) + "\n")
    write_qrels(filing.qrels, out / "qrels.txt")
    print(f"Synthetic filing with {filing.store.length} chunks and {len(filing.queries)} queries in {out}")
    return EXIT_OK


def cmd_stability(args: argparse.Namespace) -> int:
    config = _config(args)
    first_seed = args.seed if args.seed is not None else 0
    filings = [generate_filing(seed=first_seed + i, doc_id=f"synthetic{i}") for i in range(args.filings)]
    results = run_async(run_stability(filings, replicates=args.replicates, noise_scale=args.noise_scale, base=config))
    for name, result in results.items():
        within = f"{result.within_run_variance:.4f}" if result.within_run_variance is not None else "undefined"
        print(f"{name:<16} replicate variance {result.replicate_variance:.4f}  within-run variance {within}")
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--variant", choices=["stage1", "zeroshot_rerank", "s1_s3", "s1_s2", "full"])
    parser.add_argument("--seed", type=int, help="base seed for bootstrap rounds and Stage-2 retries")
    parser.add_argument("--judge", choices=["oracle", "noisy_oracle", "remote"])
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--chunks", type=Path)
    parser.add_argument("--cards", type=Path)
    parser.add_argument("--intents", type=Path)
    parser.add_argument("--qrels", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fincards", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a filing text into chunks")
    p.add_argument("filing", type=Path)
    p.add_argument("--doc-id")
    p.add_argument("--out", type=Path, required=True, help="chunk JSONL to write")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("extract", help="extract chunk cards")
    _add_config_flags(p)
    p.add_argument("--cards-out", type=Path, required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("intent", help="extract query intents")
    _add_config_flags(p)
    p.add_argument("--questions", type=Path, required=True)
    p.add_argument("--intents-out", type=Path, required=True)
    p.set_defaults(func=cmd_intent)

    p = sub.add_parser("rerank", help="rerank every query and write a run file plus traces")
    _add_config_flags(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score run files against qrels")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ndcg-linear-gain", action="store_true")
    p.add_argument("--traces", type=Path, help="trace directory for candidate sizes and rank variance")
    p.add_argument("--report", type=Path, help="JSON report to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="inspect audit traces")
    trace_sub = p.add_subparsers(dest="trace_command", required=True)
    t = trace_sub.add_parser("explain")
    t.add_argument("trace", type=Path)
    t.add_argument("chunk_id")
    t.add_argument("--chunks", type=Path, help="chunk file, to quote matched text")
    t = trace_sub.add_parser("validate")
    t.add_argument("traces", nargs="+", type=Path)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("grid", help="run and score every system variant")
    _add_config_flags(p)
    p.add_argument("--masks", action="store_true", help="also run the full pipeline under every card mask")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="write a synthetic filing with questions and qrels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries", type=int, default=10)
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--lexical-gap", action="store_true")
    p.add_argument("--doc-id", default="synthetic")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stability", help="compare Stage-3 stability settings on synthetic filings")
    _add_config_flags(p)
    p.add_argument("--filings", type=int, default=3)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--noise-scale", type=float, default=1.5)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, get_settings().log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    try:
        return args.func(args)
    except FinCardsError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_IO
    except ValueError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
