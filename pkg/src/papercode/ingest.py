"""Loading papers and references and splitting them into paragraph chunks."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

REFERENCE_SUFFIXES = (".txt", ".md")

# Two or more newlines; blank lines holding only spaces/tabs still count as blank.
SEPARATOR = re.compile(r"\n[ \t]*\n(?:[ \t]*\n)*")


class DocumentKind(str, enum.Enum):
    PAPER = "paper"
    REFERENCE = "reference"
    GROUND_TRUTH = "ground_truth"


class IngestError(Exception):
    pass


class EmptyDocument(IngestError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    kind: DocumentKind
    body: str
    title: Optional[str] = None


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    source_doc: str
    text: str
    char_span: tuple[int, int]


def normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def load_document(path: str | Path, kind: DocumentKind, doc_id: Optional[str] = None) -> Document:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise IngestError(f"no such file: {path}") from None
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    try:
        body = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path} is not valid UTF-8 text ({exc.reason} at byte {exc.start})") from exc
    body = normalize_newlines(body)
    if body.startswith("\ufeff"):
        body = body[1:]
    kind = DocumentKind(kind)
    if kind is DocumentKind.PAPER and not body.strip():
        raise EmptyDocument(f"paper {path} has no text")
    title = next((line.strip() for line in body.split("\n") if line.strip()), None)
    return Document(doc_id or f"{kind.value}:{path.name}", kind, body, title)


def chunk_paragraphs(doc: Document) -> list[Chunk]:
    chunks: list[Chunk] = []
    start = 0
    body = doc.body
    bounds = [(m.start(), m.end()) for m in SEPARATOR.finditer(body)]
    bounds.append((len(body), len(body)))
    for sep_start, sep_end in bounds:
        piece = body[start:sep_start]
        stripped = piece.strip()
        if stripped:
            lead = len(piece) - len(piece.lstrip())
            span_start = start + lead
            chunks.append(
                Chunk(len(chunks), doc.id, stripped, (span_start, span_start + len(stripped)))
            )
        start = sep_end
    return chunks


def load_reference_corpus(
    directory: str | Path, problems: Optional[list[str]] = None
) -> list[Document]:
    """Load every .txt/.md file in ``directory`` as a reference, sorted by name.

    Files that cannot be read or decoded are skipped; a message for each is
    logged and appended to ``problems`` when given.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestError(f"reference directory {directory} does not exist or is not a directory")
    try:
        entries = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))
    except OSError as exc:
        raise IngestError(f"cannot list {directory}: {exc}") from exc

    docs: list[Document] = []
    for path in entries:
        message = None
        if path.suffix.lower() not in REFERENCE_SUFFIXES:
            message = f"skipped {path.name}: not a .txt or .md file"
        else:
            try:
                docs.append(load_document(path, DocumentKind.REFERENCE))
            except IngestError as exc:
                message = f"skipped {path.name}: {exc}"
        if message:
            logger.warning(message)
            if problems is not None:
                problems.append(message)
    return docs
