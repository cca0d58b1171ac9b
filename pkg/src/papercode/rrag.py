"""Retrospective retrieval-augmented generation.

Draft code is generated from the paper and its knowledge graph, the draft
is inspected to formulate questions, each question is answered from the
dynamic database, and the answers drive a rewrite of the draft.
"""

from __future__ import annotations

import enum
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .ingest import Document
from .kg import KnowledgeGraph, export_triples
from .llm import LLMGateway
from .prompts import load_prompt
from .retrieval import QUERY_INSTRUCTION, EmbeddingProvider, RetrievalIndex, embed_texts, search_top_k

logger = logging.getLogger(__name__)

DEFAULT_MAX_QUERIES = 8
DEFAULT_K = 5
DEFAULT_CONTEXT_BUDGET = 12_000


class GenerationError(Exception):
    pass


class NoCodeBlock(GenerationError):
    pass


class UnparseableQueries(GenerationError):
    pass


class Stage(str, enum.Enum):
    INTERMEDIATE = "intermediate"
    FINAL = "final"
    BASELINE = "baseline"


class Intent(str, enum.Enum):
    EXPLAIN_CONCEPT = "EXPLAIN_CONCEPT"
    IMPLEMENTATION_DETAIL = "IMPLEMENTATION_DETAIL"
    PROCEDURE_STEPS = "PROCEDURE_STEPS"


@dataclass(frozen=True)
class CodeArtifact:
    stage: Stage
    source_text: str
    model_id: str
    prompt_fingerprint: str
    template_digest: str


@dataclass(frozen=True)
class Query:
    query_id: int
    text: str
    origin: Intent


@dataclass(frozen=True)
class Retrieved:
    entry_id: int
    similarity: float
    doc_id: str
    chunk_ref: int
    text: str


@dataclass(frozen=True)
class RetrievedAnswer:
    query: Query
    retrieved: tuple[Retrieved, ...]
    answer: str


_FENCE = re.compile(r"```[^\n]*\n(.*?)(?:\n)?```", re.DOTALL)


def extract_code_blocks(text: str) -> str:
    """Fenced code from a response; several blocks are joined with a blank line."""
    blocks = _FENCE.findall(text)
    if not blocks:
        raise NoCodeBlock("response contains no fenced code block")
    return "\n\n".join(blocks)


def _generate(
    stage: Stage, template: str, gateway: LLMGateway, session: Optional[int], **values: str
) -> CodeArtifact:
    prompt = load_prompt(template)
    system, user = prompt.render(session, **values)
    text, key = gateway.ask("coder", system, user)
    try:
        source = extract_code_blocks(text)
    except NoCodeBlock as exc:
        raise NoCodeBlock(f"{stage.value} code: {exc}") from None
    if not source.strip():
        raise NoCodeBlock(f"{stage.value} code: fenced block is empty")
    return CodeArtifact(stage, source, gateway.model_for("coder"), key, prompt.digest)


def generate_intermediate_code(
    paper: Document, kg: KnowledgeGraph, gateway: LLMGateway, session: Optional[int] = None
) -> CodeArtifact:
    triples = export_triples(kg) or "(empty)\n"
    return _generate(
        Stage.INTERMEDIATE, "intermediate", gateway, session,
        paper_text=paper.body, kg_triples=triples.rstrip("\n"),
    )


def generate_baseline_code(paper: Document, gateway: LLMGateway, session: Optional[int] = None) -> CodeArtifact:
    return _generate(Stage.BASELINE, "baseline", gateway, session, paper_text=paper.body)


def _parse_intent(token: str) -> Optional[Intent]:
    wanted = re.sub(r"[^a-z]", "", token.lower())
    for intent in Intent:
        if re.sub(r"[^a-z]", "", intent.value.lower()) == wanted:
            return intent
    return None


def parse_queries(text: str, max_queries: int) -> list[Query]:
    queries: list[Query] = []
    for raw in text.split("\n"):
        line = re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", raw).strip()
        if "|" not in line:
            continue
        intent_text, question = (part.strip() for part in line.split("|", 1))
        if not question:
            continue
        intent = _parse_intent(intent_text)
        if intent is None:
            logger.warning("unknown query intent %r treated as IMPLEMENTATION_DETAIL", intent_text)
            intent = Intent.IMPLEMENTATION_DETAIL
        queries.append(Query(len(queries), question, intent))
        if len(queries) == max_queries:
            break
    if not queries:
        raise UnparseableQueries(f"no 'INTENT | question' lines in response: {text[:120]!r}")
    return queries


def formulate_queries(
    paper: Document,
    draft: CodeArtifact,
    gateway: LLMGateway,
    max_queries: int = DEFAULT_MAX_QUERIES,
    kg: Optional[KnowledgeGraph] = None,
    session: Optional[int] = None,
) -> list[Query]:
    if max_queries < 1:
        raise ValueError("max_queries must be positive")
    triples = export_triples(kg).rstrip("\n") if kg is not None else ""
    system, user = load_prompt("queries").render(
        session,
        paper_text=paper.body,
        kg_triples=triples or "(empty)",
        code=draft.source_text,
        max_queries=str(max_queries),
    )
    text, _ = gateway.ask("analyst", system, user)
    return parse_queries(text, max_queries)


def retrieve(
    question: str,
    index: RetrievalIndex,
    provider: EmbeddingProvider,
    k: int,
    instruction: str = QUERY_INSTRUCTION,
) -> list[Retrieved]:
    if not index.entries:
        logger.warning("dynamic database is empty; answering %r without context", question[:60])
        return []
    (vector,) = embed_texts([question], instruction, provider)
    hits = search_top_k(index, vector, k)
    return [
        Retrieved(i, sim, index.entries[i].doc_id, index.entries[i].chunk_ref, index.entries[i].text)
        for i, sim in hits
    ]


def fit_context(retrieved: Sequence[Retrieved], budget: int) -> list[Retrieved]:
    """Drop the least similar chunks until the texts fit in ``budget`` characters."""
    kept = list(retrieved)
    while kept and sum(len(r.text) for r in kept) > budget:
        weakest = min(range(len(kept)), key=lambda n: (kept[n].similarity, -kept[n].entry_id))
        kept.pop(weakest)
    return kept


def format_context(retrieved: Sequence[Retrieved]) -> str:
    if not retrieved:
        return "(no excerpts available)"
    return "\n\n".join(f"[{r.doc_id} #{r.chunk_ref}]\n{r.text}" for r in retrieved)


def answer_query(
    query: Query,
    index: RetrievalIndex,
    provider: EmbeddingProvider,
    gateway: LLMGateway,
    k: int = DEFAULT_K,
    *,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    instruction: str = QUERY_INSTRUCTION,
    template: str = "answer",
    session: Optional[int] = None,
) -> RetrievedAnswer:
    hits = fit_context(retrieve(query.text, index, provider, k, instruction), context_budget)
    system, user = load_prompt(template).render(
        session, question=query.text, context=format_context(hits)
    )
    text, _ = gateway.ask("analyst", system, user)
    answer = text.strip()
    if not answer:
        raise GenerationError(f"empty answer for query {query.query_id}")
    return RetrievedAnswer(query, tuple(hits), answer)


def answer_queries(
    queries: Sequence[Query],
    index: RetrievalIndex,
    provider: EmbeddingProvider,
    gateway: LLMGateway,
    k: int = DEFAULT_K,
    **kwargs,
) -> list[RetrievedAnswer]:
    with ThreadPoolExecutor(max_workers=gateway.max_in_flight) as pool:
        return list(pool.map(lambda q: answer_query(q, index, provider, gateway, k, **kwargs), queries))


def format_answers(answers: Sequence[RetrievedAnswer]) -> str:
    if not answers:
        return "(no questions were answered)"
    return "\n\n".join(
        f"Q{a.query.query_id + 1} [{a.query.origin.value}]: {a.query.text}\nA: {a.answer}" for a in answers
    )


def refine_code(
    draft: CodeArtifact,
    answers: Sequence[RetrievedAnswer],
    paper: Document,
    gateway: LLMGateway,
    session: Optional[int] = None,
) -> CodeArtifact:
    if not answers:
        logger.warning("refining without any answered questions")
    return _generate(
        Stage.FINAL, "refine", gateway, session,
        paper_text=paper.body, code=draft.source_text, answers=format_answers(answers),
    )
