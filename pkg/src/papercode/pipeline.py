"""End-to-end orchestration and run-directory persistence."""

from __future__ import annotations

import contextlib
import datetime as _dt
import hashlib
import json
import logging
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

from . import __version__
from .analysis import AnalyzedChunk, analyze_chunks, filter_code_oriented
from .config import PipelineConfig
from .evalharness import (
    ExperimentReport,
    aggregate,
    render_report,
    run_experiment,
)
from .ingest import Document, DocumentKind, chunk_paragraphs, load_document, load_reference_corpus
from .kg import (
    KnowledgeGraph,
    Ontology,
    builtin_ontology,
    export_dot,
    export_triples,
    extract_unified_graph,
    load_ontology,
    validate_graph,
)
from .llm import ConfigError as LLMConfigError
from .llm import LLMGateway, ReplayMode, ReplayStore
from .prompts import prompt_digests
from .retrieval import EmbeddingProvider, RetrievalIndex, build_dynamic_database
from .rrag import (
    CodeArtifact,
    Intent,
    Query,
    RetrievedAnswer,
    answer_queries,
    answer_query,
    formulate_queries,
    generate_baseline_code,
    generate_intermediate_code,
    refine_code,
)
from .tsed import SourceSyntaxError, compare_sources, parse_to_tree

logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "chunk",
    "analyze",
    "knowledge_graph",
    "intermediate",
    "database",
    "queries",
    "answers",
    "refine",
)


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, run_dir: Optional[Path] = None):
        self.stage = stage
        self.cause = cause
        self.run_dir = run_dir
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class WarningCapture(logging.Handler):
    def __init__(self) -> None:
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class StageLog:
    name: str
    status: str = "pending"
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        data = {"name": self.name, "status": self.status, "warnings": sorted(self.warnings)}
        if self.error:
            data["error"] = self.error
        return data


class RunWriter:
    """Writes artifacts into one run directory and tracks stage outcomes."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}
        self.stages: list[StageLog] = []

    def write(self, name: str, text: str) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        self.artifacts[name] = sha256_text(text)
        return path

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[StageLog]:
        log = StageLog(name)
        self.stages.append(log)
        capture = WarningCapture()
        root = logging.getLogger("papercode")
        root.addHandler(capture)
        try:
            yield log
        except Exception as exc:
            log.status = "failed"
            log.error = f"{type(exc).__name__}: {exc}"
            raise StageFailure(name, exc, self.run_dir) from exc
        else:
            log.status = "completed"
        finally:
            root.removeHandler(capture)
            log.warnings.extend(capture.messages)

    @property
    def last_completed(self) -> Optional[str]:
        done = [s.name for s in self.stages if s.status == "completed"]
        return done[-1] if done else None

    def all_warnings(self) -> list[str]:
        return [w for s in self.stages for w in s.warnings]


def new_run_id() -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-{secrets.token_hex(3)}"


def make_gateway(config: PipelineConfig, store: ReplayStore) -> LLMGateway:
    providers = config.live_providers() if store.mode is not ReplayMode.REPLAY else {}
    return LLMGateway(
        store,
        providers,
        config.models,
        max_in_flight=config.max_in_flight,
        max_tokens=config.max_tokens,
    )


def resolve_ontology(config: PipelineConfig) -> Ontology:
    return load_ontology(config.ontology_path) if config.ontology_path else builtin_ontology()


@dataclass
class PipelineResult:
    chunks: list
    analyzed: list[AnalyzedChunk]
    graph: KnowledgeGraph
    intermediate: CodeArtifact
    index: RetrievalIndex
    queries: list[Query]
    answers: list[RetrievedAnswer]
    final: CodeArtifact
    database: dict


def _chunks_json(chunks) -> str:
    return dump_json(
        [
            {"chunk_id": c.chunk_id, "source_doc": c.source_doc, "text": c.text, "char_span": list(c.char_span)}
            for c in chunks
        ]
    )


def _queries_text(queries: Sequence[Query]) -> str:
    return "".join(f"{q.query_id + 1:02d} | {q.origin.value} | {q.text}\n" for q in queries)


def _answer_text(answer: RetrievedAnswer) -> str:
    lines = [
        f"query: {answer.query.text}",
        f"intent: {answer.query.origin.value}",
        "retrieved:",
    ]
    for r in answer.retrieved:
        lines.append(f"  - entry {r.entry_id} {r.doc_id} #{r.chunk_ref} similarity {r.similarity:.6f}")
    if not answer.retrieved:
        lines.append("  (none)")
    lines += ["answer:", answer.answer]
    return "\n".join(lines) + "\n"


def refine_paper(
    paper: Document,
    references: Sequence[Document],
    config: PipelineConfig,
    gateway: LLMGateway,
    embedder: EmbeddingProvider,
    writer: RunWriter,
    *,
    include_paper_in_db: bool = True,
    session: Optional[int] = None,
) -> PipelineResult:
    """Chunk, analyze, build the graph, draft, retrieve and refine; persist each stage."""
    with writer.stage("chunk"):
        chunks = chunk_paragraphs(paper)
        writer.write("chunks.json", _chunks_json(chunks))

    with writer.stage("analyze"):
        analyzed = analyze_chunks(chunks, gateway, session)
        writer.write(
            "summaries.json",
            dump_json([{"chunk_id": a.chunk.chunk_id, "summary": a.summary} for a in analyzed]),
        )
        writer.write(
            "relevance.json",
            dump_json(
                [
                    {"chunk_id": a.chunk.chunk_id, "relevance": a.relevance.value, "rationale": a.rationale}
                    for a in analyzed
                ]
            ),
        )

    with writer.stage("knowledge_graph"):
        ontology = resolve_ontology(config)
        code_chunks = filter_code_oriented(analyzed)
        if not code_chunks:
            logger.warning("knowledge graph is empty; code generation relies on the full paper text")
        graph = extract_unified_graph(code_chunks, ontology, gateway, session)
        for violation in validate_graph(graph, ontology):
            logger.warning("graph violation %s: %s", violation.kind, violation.detail)
        writer.write("kg.triples", export_triples(graph))
        writer.write("kg.dot", export_dot(graph))

    with writer.stage("intermediate"):
        intermediate = generate_intermediate_code(paper, graph, gateway, session)
        writer.write("intermediate.code", intermediate.source_text)

    with writer.stage("database"):
        index = build_dynamic_database(
            paper if include_paper_in_db else None,
            references,
            embedder,
            instruction=config.document_instruction,
        )
        writer.write("index.txt", index.to_text())
        database = {
            "paper_included": include_paper_in_db,
            "reference_ids": sorted(d.id for d in references),
            "documents": index.doc_ids(),
            "entries": len(index),
        }

    draft = intermediate
    for round_no in range(1, config.rounds + 1):
        suffix = "" if round_no == 1 else f".r{round_no}"
        with writer.stage("queries" if round_no == 1 else f"queries{suffix}"):
            queries = formulate_queries(paper, draft, gateway, config.max_queries, kg=graph, session=session)
            writer.write(f"queries{suffix}.txt", _queries_text(queries))
        with writer.stage("answers" if round_no == 1 else f"answers{suffix}"):
            answers = answer_queries(
                queries, index, embedder, gateway, config.k,
                context_budget=config.context_budget,
                instruction=config.query_instruction,
                session=session,
            )
            prefix = "" if round_no == 1 else f"r{round_no}-"
            for a in answers:
                writer.write(f"answers/{prefix}{a.query.query_id + 1:02d}.txt", _answer_text(a))
        with writer.stage("refine" if round_no == 1 else f"refine{suffix}"):
            final = refine_code(draft, answers, paper, gateway, session)
            if round_no < config.rounds:
                writer.write(f"final.r{round_no}.code", final.source_text)
            else:
                writer.write("final.code", final.source_text)
        draft = final

    return PipelineResult(chunks, analyzed, graph, intermediate, index, queries, answers, final, database)


def _load_inputs(writer: RunWriter, paper_path, refs_dir) -> tuple[Document, list[Document]]:
    with writer.stage("ingest"):
        paper = load_document(paper_path, DocumentKind.PAPER)
        references: list[Document] = []
        if refs_dir is not None:
            references = load_reference_corpus(refs_dir)
        else:
            logger.warning("no reference directory given; the database holds the paper only")
    return paper, references


def _document_entries(docs: Sequence[Document]) -> list[dict]:
    return [{"id": d.id, "kind": d.kind.value, "sha256": sha256_text(d.body)} for d in docs]


def write_manifest(
    writer: RunWriter,
    run_id: str,
    config: PipelineConfig,
    store: ReplayStore,
    *,
    command: str,
    documents: Sequence[Document] = (),
    extra: Optional[dict] = None,
    status: str = "completed",
) -> Path:
    manifest = {
        "run_id": run_id,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "version": __version__,
        "status": status,
        "config_hash": config.digest(),
        "config": config.to_dict(),
        "prompts": prompt_digests(),
        "documents": _document_entries(documents),
        "replay_store": {
            "path": str(store.path) if store.path is not None else None,
            "mode": store.mode.value,
            "sha256": store.digest() if store.mode is ReplayMode.REPLAY else None,
        },
        "stages": [s.to_dict() for s in writer.stages],
        "last_completed_stage": writer.last_completed,
        "artifacts": dict(sorted(writer.artifacts.items())),
    }
    manifest.update(extra or {})
    path = writer.run_dir / "manifest.json"
    path.write_text(dump_json(manifest), encoding="utf-8")
    return path


def _run_dir(run_dir: Optional[Path], runs_root: Path, run_id: str) -> Path:
    return Path(run_dir) if run_dir is not None else Path(runs_root) / run_id


def run_pipeline(
    paper_path: str | Path,
    refs_dir: Optional[str | Path],
    config: PipelineConfig,
    store: ReplayStore,
    *,
    run_dir: Optional[Path] = None,
    runs_root: Path = Path("runs"),
    exclude_paper_from_db: bool = False,
    ground_truth_path: Optional[str | Path] = None,
    gateway: Optional[LLMGateway] = None,
    embedder: Optional[EmbeddingProvider] = None,
) -> Path:
    """Run every stage for one paper; returns the run directory.

    The manifest is written last, including when a stage fails, in which
    case :class:`StageFailure` is raised after it is written.
    """
    run_id = new_run_id()
    writer = RunWriter(_run_dir(run_dir, runs_root, run_id))
    gateway = gateway or make_gateway(config, store)
    documents: list[Document] = []
    extra: dict = {"database": None}
    try:
        ground_truth = None
        if ground_truth_path is not None:
            ground_truth = load_document(ground_truth_path, DocumentKind.GROUND_TRUTH)
        paper, references = _load_inputs(writer, paper_path, refs_dir)
        documents = [paper, *references] + ([ground_truth] if ground_truth else [])
        result = refine_paper(
            paper, references, config, gateway, embedder or config.embedder(), writer,
            include_paper_in_db=not exclude_paper_from_db,
        )
        extra["database"] = result.database
        if ground_truth is not None:
            with writer.stage("score"):
                score = compare_sources(result.final.source_text, ground_truth.body, config.grammar_id, config.weights)
                extra["score"] = score.to_dict()
    except StageFailure:
        write_manifest(writer, run_id, config, store, command="run", documents=documents, extra=extra, status="failed")
        raise
    write_manifest(writer, run_id, config, store, command="run", documents=documents, extra=extra)
    return writer.run_dir


def run_evaluation(
    paper_path: str | Path,
    refs_dir: Optional[str | Path],
    ground_truth_path: str | Path,
    config: PipelineConfig,
    store: ReplayStore,
    n: int = 3,
    *,
    paper_id: Optional[str] = None,
    run_dir: Optional[Path] = None,
    runs_root: Path = Path("runs"),
    exclude_paper_from_db: bool = False,
    parallel: bool = False,
    gateway: Optional[LLMGateway] = None,
    embedder: Optional[EmbeddingProvider] = None,
) -> tuple[Path, ExperimentReport]:
    """Baseline vs. pipeline over ``n`` sessions, scored against the ground truth.

    ``parallel`` is only allowed in replay mode so that live provider calls
    keep a reproducible order.
    """
    if parallel and store.mode is not ReplayMode.REPLAY:
        raise LLMConfigError("parallel iterations are only allowed in replay mode")
    # fail before any provider call if the ground truth is missing or broken
    ground_truth = load_document(ground_truth_path, DocumentKind.GROUND_TRUTH)
    try:
        parse_to_tree(ground_truth.body, config.grammar_id)
    except SourceSyntaxError as exc:
        raise exc.with_side("ground_truth") from None

    run_id = new_run_id()
    writer = RunWriter(_run_dir(run_dir, runs_root, run_id))
    gateway = gateway or make_gateway(config, store)
    embedder = embedder or config.embedder()
    paper, references = _load_inputs(writer, paper_path, refs_dir)
    paper_id = paper_id or Path(paper_path).stem
    iterations: dict[int, dict] = {}

    def one_iteration(i: int) -> tuple[str, str]:
        sub = RunWriter(writer.run_dir / f"iter_{i:02d}")
        # a failed iteration should still leave its stage log behind
        try:
            baseline = generate_baseline_code(paper, gateway, session=i)
            sub.write("baseline.code", baseline.source_text)
            result = refine_paper(
                paper, references, config, gateway, embedder, sub,
                include_paper_in_db=not exclude_paper_from_db, session=i,
            )
        finally:
            iterations[i] = {
                "stages": [s.to_dict() for s in sub.stages],
                "artifacts": dict(sorted(sub.artifacts.items())),
            }
            for name, digest in sub.artifacts.items():
                writer.artifacts[f"iter_{i:02d}/{name}"] = digest
        return baseline.source_text, result.final.source_text

    documents = [paper, *references, ground_truth]
    try:
        with writer.stage("evaluate"):
            records = run_experiment(
                paper_id, ground_truth.body, config.weights, n, one_iteration, config.grammar_id,
                parallel=parallel,
            )
            report = aggregate(records, config.weights, paper_id)
            writer.write("report.txt", render_report([report], "text"))
            writer.write("report.csv", render_report([report], "csv"))
    except StageFailure:
        write_manifest(writer, run_id, config, store, command="eval", documents=documents,
                       extra={"paper_id": paper_id}, status="failed")
        raise

    write_manifest(
        writer, run_id, config, store,
        command="eval",
        documents=documents,
        extra={
            "paper_id": paper_id,
            "paper_included_in_db": not exclude_paper_from_db,
            "iterations": {f"{i:02d}": iterations[i] for i in sorted(iterations)},
            "records": [r.to_dict() for r in records],
            "report": {
                "avg_baseline": report.avg_baseline,
                "avg_refined": report.avg_refined,
                "increment": report.increment,
                "stability": report.stability,
                "n_iterations": report.n_iterations,
                "excluded": list(report.excluded),
            },
        },
    )
    return writer.run_dir, report


def ask(
    paper_path: str | Path,
    refs_dir: Optional[str | Path],
    question: str,
    config: PipelineConfig,
    store: ReplayStore,
    *,
    k: Optional[int] = None,
    gateway: Optional[LLMGateway] = None,
    embedder: Optional[EmbeddingProvider] = None,
) -> RetrievedAnswer:
    """Answer a question about a paper from the paper and its references."""
    paper = load_document(paper_path, DocumentKind.PAPER)
    references = load_reference_corpus(refs_dir) if refs_dir is not None else []
    if not references:
        logger.warning("no reference documents; answering from the paper alone")
    embedder = embedder or config.embedder()
    gateway = gateway or make_gateway(config, store)
    index = build_dynamic_database(paper, references, embedder, instruction=config.document_instruction)
    query = Query(0, question, Intent.EXPLAIN_CONCEPT)
    return answer_query(
        query, index, embedder, gateway, k or config.k,
        context_budget=config.context_budget,
        instruction=config.query_instruction,
        template="ask",
    )
