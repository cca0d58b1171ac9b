"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 a pipeline stage
failed, 3 metric or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as config_mod
from .evalharness import load_paper_manifest
from .ingest import IngestError
from .kg import builtin_ontology, export_graph, load_ontology, parse_triples_text, validate_graph
from .llm import ConfigError as LLMConfigError
from .llm import LLMError, ReplayMode, ReplayStore
from .pipeline import StageFailure, WarningCapture, ask, run_evaluation, run_pipeline
from .tsed import DEFAULT_WEIGHTS, EditWeights, ResourceLimit, SourceSyntaxError, UnknownGrammar, compare_sources

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2
EXIT_METRIC = 3

logger = logging.getLogger("papercode.cli")


def _weights(text: str) -> EditWeights:
    try:
        return EditWeights.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_llm_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--replay-store", type=Path, help="JSON-lines record/replay file")
    p.add_argument(
        "--replay-mode",
        choices=[m.value for m in ReplayMode],
        default=ReplayMode.REPLAY.value,
        help="replay (offline, default), record (live calls saved) or passthrough",
    )
    p.add_argument("--refs", type=Path, help="directory of reference .txt/.md files")
    p.add_argument("--k", type=int, help="chunks retrieved per question")


def _add_pipeline_options(p: argparse.ArgumentParser) -> None:
    _add_llm_options(p)
    p.add_argument("--run-dir", type=Path, help="write artifacts here instead of RUNS_ROOT/<run_id>")
    p.add_argument("--runs-root", type=Path, default=Path("runs"))
    p.add_argument("--exclude-paper-from-db", action="store_true",
                   help="build the retrieval database from references only")
    p.add_argument("--max-queries", type=int)
    p.add_argument("--rounds", type=int, help="query/answer/refine cycles (default 1)")
    p.add_argument("--context-budget", type=int, help="characters of retrieved context per prompt")
    p.add_argument("--weights", type=_weights, help="delete,insert,rename penalties, e.g. 4,0.7,0.1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="papercode", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline on one paper")
    p.add_argument("paper", type=Path)
    p.add_argument("--ground-truth", type=Path, help="score final code against this file")
    _add_pipeline_options(p)

    p = sub.add_parser("eval", help="baseline vs. pipeline over several iterations")
    p.add_argument("paper", type=Path)
    p.add_argument("--ground-truth", type=Path, required=True)
    p.add_argument("-n", "--iterations", type=int, default=3)
    p.add_argument("--paper-id")
    p.add_argument("--manifest", type=Path, help="paper manifest JSON supplying per-paper weights")
    p.add_argument("--parallel", action="store_true", help="run iterations concurrently (replay mode only)")
    _add_pipeline_options(p)

    p = sub.add_parser("tsed", help="score generated code against ground truth")
    p.add_argument("generated", type=Path)
    p.add_argument("ground_truth", type=Path)
    p.add_argument("--grammar", default="python")
    p.add_argument("--weights", type=_weights, default=DEFAULT_WEIGHTS)
    p.add_argument("--json", action="store_true", help="print the result as JSON")

    p = sub.add_parser("kg", help="export a knowledge graph from a run")
    p.add_argument("source", type=Path, help="kg.triples file or a run directory")
    p.add_argument("--format", choices=["triples", "dot"], default="dot")
    p.add_argument("--ontology", type=Path, help="validate against this ontology instead of the built-in one")

    p = sub.add_parser("ask", help="answer a question about a paper and its references")
    p.add_argument("paper", type=Path)
    p.add_argument("question")
    _add_llm_options(p)

    p = sub.add_parser("fixtures", help="record or inspect replay stores")
    fx = p.add_subparsers(dest="fixtures_command", required=True)
    q = fx.add_parser("inspect", help="list the entries of a replay store")
    q.add_argument("store", type=Path)
    q = fx.add_parser("record", help="run the pipeline with live providers, saving every response")
    q.add_argument("paper", type=Path)
    q.add_argument("--ground-truth", type=Path)
    _add_pipeline_options(q)
    return parser


def _load_config(args) -> config_mod.PipelineConfig:
    overrides = {
        "k": getattr(args, "k", None),
        "max_queries": getattr(args, "max_queries", None),
        "rounds": getattr(args, "rounds", None),
        "context_budget": getattr(args, "context_budget", None),
        "weights": getattr(args, "weights", None),
    }
    return config_mod.load_config(args.config, overrides)


def _open_store(args, mode: Optional[str] = None) -> ReplayStore:
    mode = ReplayMode(mode or args.replay_mode)
    if args.replay_store is None and mode is not ReplayMode.PASSTHROUGH:
        raise LLMConfigError(f"--replay-store is required in {mode.value} mode")
    return ReplayStore(args.replay_store, mode)


def _print_warnings(run_dir: Path) -> None:
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    for stage in manifest["stages"]:
        for message in stage["warnings"]:
            print(f"warning [{stage['name']}]: {message}", file=sys.stderr)


def cmd_run(args, mode: Optional[str] = None) -> int:
    if not args.paper.is_file():
        print(f"error: paper {args.paper} not found", file=sys.stderr)
        return EXIT_USAGE
    config = _load_config(args)
    store = _open_store(args, mode)
    run_dir = run_pipeline(
        args.paper, args.refs, config, store,
        run_dir=args.run_dir,
        runs_root=args.runs_root,
        exclude_paper_from_db=args.exclude_paper_from_db,
        ground_truth_path=args.ground_truth,
    )
    _print_warnings(run_dir)
    print(run_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.ground_truth.is_file():
        print(f"error: ground truth {args.ground_truth} not found", file=sys.stderr)
        return EXIT_USAGE
    config = _load_config(args)
    if args.manifest is not None and args.weights is None:
        entries = {e.id: e for e in load_paper_manifest(args.manifest)}
        if args.paper_id not in entries:
            print(f"error: paper id {args.paper_id!r} not in {args.manifest}", file=sys.stderr)
            return EXIT_USAGE
        config = config_mod.load_config(args.config, {"weights": entries[args.paper_id].weights})
    store = _open_store(args)
    run_dir, report = run_evaluation(
        args.paper, args.refs, args.ground_truth, config, store, args.iterations,
        paper_id=args.paper_id,
        run_dir=args.run_dir,
        runs_root=args.runs_root,
        exclude_paper_from_db=args.exclude_paper_from_db,
        parallel=args.parallel,
    )
    print((run_dir / "report.txt").read_text(encoding="utf-8"), end="")
    print(run_dir)
    return EXIT_OK


def cmd_tsed(args) -> int:
    generated = args.generated.read_text(encoding="utf-8")
    truth = args.ground_truth.read_text(encoding="utf-8")
    result = compare_sources(generated, truth, args.grammar, args.weights)
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True))
    else:
        print(f"weights (d,i,r): {args.weights.render()}")
        print(f"direction: {result.origin} -> {result.target}")
        print(f"ted: {result.ted:.2f}")
        print(f"max_nodes: {result.max_nodes}")
        print(f"tsed: {result.tsed:.2f}")
        print(f"tsed x100: {result.tsed_percent:.2f}")
    return EXIT_OK


def cmd_kg(args) -> int:
    source = args.source / "kg.triples" if args.source.is_dir() else args.source
    graph = parse_triples_text(source.read_text(encoding="utf-8"))
    ontology = load_ontology(args.ontology) if args.ontology else builtin_ontology()
    for violation in validate_graph(graph, ontology):
        print(f"warning: {violation.kind}: {violation.detail}", file=sys.stderr)
    sys.stdout.write(export_graph(graph, args.format))
    return EXIT_OK


def cmd_ask(args) -> int:
    config = _load_config(args)
    store = _open_store(args)
    capture = WarningCapture()
    root = logging.getLogger("papercode")
    root.addHandler(capture)
    try:
        answer = ask(args.paper, args.refs, args.question, config, store, k=args.k)
    finally:
        root.removeHandler(capture)
    for message in capture.messages:
        print(f"warning: {message}", file=sys.stderr)
    print(answer.answer)
    print()
    print("retrieved:")
    for r in answer.retrieved:
        print(f"  {r.doc_id} #{r.chunk_ref}  similarity {r.similarity:.4f}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    if args.fixtures_command == "record":
        return cmd_run(args, mode=ReplayMode.RECORD.value)
    store = ReplayStore(args.store, ReplayMode.REPLAY)
    for key, response in store.entries.items():
        request = store.requests.get(key, {})
        prompt = " ".join(request.get("user_prompt", "").split())[:60]
        print(f"{key[:12]}  {request.get('model_id', '?'):<24} {len(response.text):>6} chars  {prompt}")
    print(f"{len(store)} entries", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "eval": cmd_eval,
    "tsed": cmd_tsed,
    "kg": cmd_kg,
    "ask": cmd_ask,
    "fixtures": cmd_fixtures,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # warnings reach the user through stage logs; the console shows errors
    # unless --verbose is given
    package_logger = logging.getLogger("papercode")
    package_logger.setLevel(logging.INFO if args.verbose else logging.WARNING)
    if not any(getattr(h, "_papercode_cli", False) for h in package_logger.handlers):
        handler = logging.StreamHandler()
        handler.setLevel(logging.INFO if args.verbose else logging.ERROR)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        handler._papercode_cli = True
        package_logger.addHandler(handler)
    try:
        return COMMANDS[args.command](args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.run_dir is not None:
            print(f"partial run: {exc.run_dir}", file=sys.stderr)
        return EXIT_STAGE
    except SourceSyntaxError as exc:
        print(f"error: {exc} (side: {exc.side or 'unknown'})", file=sys.stderr)
        return EXIT_METRIC
    except (ResourceLimit, UnknownGrammar) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (config_mod.ConfigError, LLMConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
