"""Per-chunk summaries and code-relevance verdicts."""

from __future__ import annotations

import enum
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .ingest import Chunk
from .llm import LLMGateway
from .prompts import load_prompt

logger = logging.getLogger(__name__)

VERDICT_LINE = re.compile(r"^\s*VERDICT\s*:\s*(CODE|NONCODE)\s*\.?\s*$", re.IGNORECASE)


class Relevance(str, enum.Enum):
    CODE = "code"
    NONCODE = "noncode"


class AnalysisError(Exception):
    pass


class EmptySummary(AnalysisError):
    pass


class UnparseableVerdict(AnalysisError):
    pass


@dataclass(frozen=True)
class AnalyzedChunk:
    chunk: Chunk
    summary: str
    relevance: Relevance
    rationale: str

    @property
    def is_code(self) -> bool:
        return self.relevance is Relevance.CODE


def summarize_chunk(chunk: Chunk, gateway: LLMGateway, session: Optional[int] = None) -> str:
    if not chunk.text.strip():
        raise ValueError(f"chunk {chunk.chunk_id} is empty")
    system, user = load_prompt("summarize").render(session, chunk_text=chunk.text)
    text, _ = gateway.ask("analyst", system, user)
    summary = text.strip()
    if not summary:
        raise EmptySummary(f"provider returned an empty summary for chunk {chunk.chunk_id}")
    return summary


def parse_verdict(text: str) -> tuple[Relevance, str]:
    lines = text.strip().split("\n")
    verdicts = [(i, m.group(1).upper()) for i, line in enumerate(lines) if (m := VERDICT_LINE.match(line))]
    if len(verdicts) != 1:
        found = "no" if not verdicts else f"{len(verdicts)}"
        raise UnparseableVerdict(f"expected exactly one VERDICT line, found {found}: {text[:120]!r}")
    index, token = verdicts[0]
    rationale = " ".join(line.strip() for k, line in enumerate(lines) if k != index and line.strip())
    return (Relevance.CODE if token == "CODE" else Relevance.NONCODE), rationale


def classify_chunk(
    chunk: Chunk, summary: str, gateway: LLMGateway, session: Optional[int] = None
) -> tuple[Relevance, str]:
    system, user = load_prompt("classify").render(session, chunk_text=chunk.text, summary=summary)
    text, _ = gateway.ask("analyst", system, user)
    try:
        return parse_verdict(text)
    except UnparseableVerdict as exc:
        raise UnparseableVerdict(f"chunk {chunk.chunk_id}: {exc}") from None


def analyze_chunk(chunk: Chunk, gateway: LLMGateway, session: Optional[int] = None) -> AnalyzedChunk:
    summary = summarize_chunk(chunk, gateway, session)
    relevance, rationale = classify_chunk(chunk, summary, gateway, session)
    return AnalyzedChunk(chunk, summary, relevance, rationale)


def analyze_chunks(
    chunks: list[Chunk], gateway: LLMGateway, session: Optional[int] = None
) -> list[AnalyzedChunk]:
    """Analyze every chunk, concurrently up to the gateway's in-flight bound."""
    with ThreadPoolExecutor(max_workers=gateway.max_in_flight) as pool:
        return list(pool.map(lambda c: analyze_chunk(c, gateway, session), chunks))


def filter_code_oriented(analyzed: list[AnalyzedChunk]) -> list[AnalyzedChunk]:
    kept = [a for a in analyzed if a.is_code]
    if analyzed and not kept:
        logger.warning("no chunk was classified as code-oriented")
    return kept
