"""Ontology-typed knowledge graphs extracted from code-oriented chunks."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .analysis import AnalyzedChunk
from .llm import LLMGateway
from .prompts import load_prompt

logger = logging.getLogger(__name__)

FALLBACK_LABEL = "Miscellaneous"
FALLBACK_RELATIONSHIP = "Misc"


class KnowledgeGraphError(Exception):
    pass


class UnparseableTriples(KnowledgeGraphError):
    pass


@dataclass(frozen=True)
class OntologyEntry:
    name: str
    description: str


@dataclass(frozen=True)
class Ontology:
    labels: tuple[OntologyEntry, ...]
    relationships: tuple[OntologyEntry, ...]
    # verbatim rendering for prompts, when the ontology was loaded from text
    source_text: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        for kind, entries in (("label", self.labels), ("relationship", self.relationships)):
            names = [e.name for e in entries]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} names in ontology")

    @property
    def label_names(self) -> list[str]:
        return [e.name for e in self.labels]

    @property
    def relationship_names(self) -> list[str]:
        return [e.name for e in self.relationships]

    def resolve_label(self, name: str) -> Optional[str]:
        return _resolve(name, self.label_names)

    def resolve_relationship(self, name: str) -> Optional[str]:
        return _resolve(name, self.relationship_names)

    def serialize(self) -> str:
        if self.source_text is not None:
            return self.source_text
        labels = ",\n".join(
            "{" + json.dumps(e.name) + " : " + json.dumps(e.description) + "}" for e in self.labels
        )
        rels = ",\n".join(
            "        " + json.dumps(f"{e.name} : {e.description}") for e in self.relationships
        )
        return f"Ontology(\n    labels=[\n{labels},\n],\n    relationships=[\n{rels},\n]\n)"


def _canon(name: str) -> str:
    return " ".join(name.split()).casefold()


def _resolve(name: str, names: list[str]) -> Optional[str]:
    if name in names:
        return name
    wanted = _canon(name).replace("_", " ")
    for candidate in names:
        if _canon(candidate).replace("_", " ") == wanted:
            return candidate
    return None


_LABEL_ENTRY = re.compile(r"""\{\s*"([^"]+)"\s*:\s*(?:'''(.*?)'''|"(.*?)")\s*\}""", re.DOTALL)
_RELATIONSHIP_ENTRY = re.compile(r'"([^"]+?)\s+:\s+([^"]*)"')


def parse_ontology_text(text: str) -> Ontology:
    """Parse the ``Ontology(labels=[...], relationships=[...])`` notation."""
    head, sep, tail = text.partition("relationships=[")
    if not sep:
        raise ValueError("ontology text has no relationships=[ section")
    labels = tuple(
        OntologyEntry(m.group(1), m.group(2) if m.group(2) is not None else m.group(3))
        for m in _LABEL_ENTRY.finditer(head)
    )
    relationships = tuple(
        OntologyEntry(m.group(1).strip(), m.group(2).strip()) for m in _RELATIONSHIP_ENTRY.finditer(tail)
    )
    if not labels or not relationships:
        raise ValueError("ontology text defines no labels or no relationships")
    return Ontology(labels, relationships, source_text=text.strip("\n"))


@lru_cache(maxsize=1)
def builtin_ontology() -> Ontology:
    text = (resources.files("papercode") / "data" / "ontology.txt").read_text("utf-8")
    return parse_ontology_text(text)


def load_ontology(path: str | Path) -> Ontology:
    """Load an ontology from a JSON file or from the Ontology(...) text notation."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return Ontology(
            tuple(OntologyEntry(e["name"], e.get("description", "")) for e in data["labels"]),
            tuple(OntologyEntry(e["name"], e.get("description", "")) for e in data["relationships"]),
        )
    return parse_ontology_text(text)


@dataclass(frozen=True)
class KGNode:
    node_id: str
    label: str
    name: str
    provenance: frozenset[int] = frozenset()


@dataclass(frozen=True)
class KGEdge:
    relationship: str
    source: str
    target: str
    provenance: frozenset[int] = frozenset()

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.source, self.relationship, self.target)


def node_key(label: str, name: str) -> str:
    return f"{label}::{_canon(name)}"


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: dict[str, KGNode] = field(default_factory=dict)
    edges: dict[tuple[str, str, str], KGEdge] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def triples(self) -> list[tuple[str, str, str, str, str]]:
        out = []
        for key in sorted(self.edges):
            edge = self.edges[key]
            src, dst = self.nodes.get(edge.source), self.nodes.get(edge.target)
            if src is None or dst is None:
                continue
            out.append((src.label, src.name, edge.relationship, dst.label, dst.name))
        return out


@dataclass(frozen=True)
class Triple:
    subject_label: str
    subject_name: str
    relationship: str
    object_label: str
    object_name: str


def graph_from_triples(triples: Iterable[Triple], provenance: Iterable[int] = ()) -> KnowledgeGraph:
    prov = frozenset(provenance)
    nodes: dict[str, KGNode] = {}
    edges: dict[tuple[str, str, str], KGEdge] = {}
    for t in triples:
        ids = []
        for label, name in ((t.subject_label, t.subject_name), (t.object_label, t.object_name)):
            nid = node_key(label, name)
            nodes[nid] = _merge_node(nodes.get(nid), KGNode(nid, label, name.strip(), prov))
            ids.append(nid)
        edge = KGEdge(t.relationship, ids[0], ids[1], prov)
        edges[edge.key] = _merge_edge(edges.get(edge.key), edge)
    return KnowledgeGraph(nodes, edges)


def _merge_node(a: Optional[KGNode], b: KGNode) -> KGNode:
    if a is None:
        return b
    # display name must not depend on merge order
    return KGNode(a.node_id, a.label, min(a.name, b.name), a.provenance | b.provenance)


def _merge_edge(a: Optional[KGEdge], b: KGEdge) -> KGEdge:
    if a is None:
        return b
    return KGEdge(a.relationship, a.source, a.target, a.provenance | b.provenance)


def merge_graphs(graphs: Iterable[KnowledgeGraph]) -> KnowledgeGraph:
    def fold(acc: KnowledgeGraph, g: KnowledgeGraph) -> KnowledgeGraph:
        nodes = dict(acc.nodes)
        edges = dict(acc.edges)
        for nid, node in g.nodes.items():
            nodes[nid] = _merge_node(nodes.get(nid), node)
        for key, edge in g.edges.items():
            edges[key] = _merge_edge(edges.get(key), edge)
        return KnowledgeGraph(nodes, edges)

    merged = reduce(fold, graphs, KnowledgeGraph())
    return KnowledgeGraph(
        {k: merged.nodes[k] for k in sorted(merged.nodes)},
        {k: merged.edges[k] for k in sorted(merged.edges)},
    )


_FENCE = re.compile(r"```[ \t]*([\w+-]*)[^\n]*\n(.*?)```", re.DOTALL)


def parse_triple_lines(lines: Iterable[str]) -> tuple[list[Triple], list[str]]:
    triples, problems = [], []
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 5 or not all(fields):
            problems.append(f"malformed triple line: {line!r}")
            continue
        triples.append(Triple(*fields))
    return triples, problems


def parse_triple_block(text: str) -> tuple[list[Triple], list[str]]:
    """Triples from the fenced block(s) of a model response, plus rejected lines.

    Blocks tagged ``triples`` are preferred; otherwise every fenced block is read.
    """
    blocks = _FENCE.findall(text)
    if not blocks:
        raise UnparseableTriples("response contains no fenced triple block")
    tagged = [body for tag, body in blocks if tag.lower() == "triples"]
    bodies = tagged or [body for _, body in blocks]
    return parse_triple_lines("\n".join(bodies).split("\n"))


def conform_triples(triples: Iterable[Triple], ontology: Ontology) -> tuple[list[Triple], list[str]]:
    """Map labels and relationships onto the ontology, using the catch-alls for unknowns."""
    out, notes = [], []
    for t in triples:
        fixed = []
        for label in (t.subject_label, t.object_label):
            resolved = ontology.resolve_label(label)
            if resolved is None:
                notes.append(f"unknown label {label!r} mapped to {FALLBACK_LABEL!r}")
                resolved = FALLBACK_LABEL
            fixed.append(resolved)
        rel = ontology.resolve_relationship(t.relationship)
        if rel is None:
            notes.append(f"unknown relationship {t.relationship!r} mapped to {FALLBACK_RELATIONSHIP!r}")
            rel = FALLBACK_RELATIONSHIP
        out.append(Triple(fixed[0], t.subject_name, rel, fixed[1], t.object_name))
    return out, notes


def extract_graph(
    chunk: AnalyzedChunk,
    ontology: Ontology,
    gateway: LLMGateway,
    session: Optional[int] = None,
) -> KnowledgeGraph:
    if not chunk.is_code:
        raise ValueError(f"chunk {chunk.chunk.chunk_id} is not code-oriented")
    system, user = load_prompt("extract_kg").render(
        session, ontology=ontology.serialize(), chunk_text=chunk.chunk.text
    )
    text, _ = gateway.ask("analyst", system, user)
    try:
        triples, problems = parse_triple_block(text)
    except UnparseableTriples as exc:
        raise UnparseableTriples(f"chunk {chunk.chunk.chunk_id}: {exc}") from None
    triples, notes = conform_triples(triples, ontology)
    for message in problems + notes:
        logger.warning("chunk %d: %s", chunk.chunk.chunk_id, message)
    return graph_from_triples(triples, [chunk.chunk.chunk_id])


def extract_unified_graph(
    chunks: list[AnalyzedChunk],
    ontology: Ontology,
    gateway: LLMGateway,
    session: Optional[int] = None,
) -> KnowledgeGraph:
    with ThreadPoolExecutor(max_workers=gateway.max_in_flight) as pool:
        graphs = list(pool.map(lambda c: extract_graph(c, ontology, gateway, session), chunks))
    return merge_graphs(graphs)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def validate_graph(graph: KnowledgeGraph, ontology: Ontology) -> list[Violation]:
    violations = []
    labels = set(ontology.label_names)
    relationships = set(ontology.relationship_names)
    for key in sorted(graph.nodes):
        node = graph.nodes[key]
        if key != node.node_id:
            violations.append(Violation("DuplicateNodeId", f"node stored under {key!r} has id {node.node_id!r}"))
        if node.label not in labels:
            violations.append(Violation("UnknownLabel", f"{node.node_id}: {node.label!r}"))
    for key in sorted(graph.edges):
        edge = graph.edges[key]
        if edge.relationship not in relationships:
            violations.append(Violation("UnknownRelationship", f"{key}: {edge.relationship!r}"))
        for end in (edge.source, edge.target):
            if end not in graph.nodes:
                violations.append(Violation("DanglingEdge", f"{key}: no node {end!r}"))
    return violations


def export_triples(graph: KnowledgeGraph) -> str:
    lines = [" | ".join(t) for t in graph.triples()]
    return "".join(line + "\n" for line in lines)


def parse_triples_text(text: str) -> KnowledgeGraph:
    triples, problems = parse_triple_lines(text.split("\n"))
    if problems:
        raise UnparseableTriples("; ".join(problems))
    return graph_from_triples(triples)


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(graph: KnowledgeGraph) -> str:
    lines = ["digraph knowledge_graph {"]
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        caption = _dot_quote(node.name + "\n[" + node.label + "]")
        lines.append(f"  {_dot_quote(nid)} [label={caption}];")
    for key in sorted(graph.edges):
        edge = graph.edges[key]
        lines.append(
            f"  {_dot_quote(edge.source)} -> {_dot_quote(edge.target)} "
            f"[label={_dot_quote(edge.relationship)}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: KnowledgeGraph, fmt: str = "triples") -> str:
    if fmt == "triples":
        return export_triples(graph)
    if fmt == "dot":
        return export_dot(graph)
    raise ValueError(f"unknown graph format {fmt!r}")
