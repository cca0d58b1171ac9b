"""Normalized tree-edit similarity between generated and reference code."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .parsing import SourceSyntaxError, parse_to_tree
from .ted import DEFAULT_PAIR_LIMIT, tree_edit_distance
from .tree import DEFAULT_WEIGHTS, EditWeights, Tree, node_count


@dataclass(frozen=True)
class ComparisonResult:
    ted: float
    max_nodes: int
    tsed: float
    weights: EditWeights
    origin: str = "generated"
    target: str = "ground_truth"

    @property
    def tsed_percent(self) -> float:
        return self.tsed * 100.0

    def render(self) -> str:
        return (
            f"ted={self.ted:.2f} max_nodes={self.max_nodes} "
            f"tsed={self.tsed:.2f} ({self.tsed_percent:.2f}) "
            f"weights(d,i,r)={self.weights.render()} direction={self.origin}->{self.target}"
        )

    def to_dict(self) -> dict:
        return {
            "ted": self.ted,
            "max_nodes": self.max_nodes,
            "tsed": self.tsed,
            "weights": list(self.weights.as_tuple()),
            "origin": self.origin,
            "target": self.target,
        }


def tsed_from_distance(ted: float, max_nodes: int) -> float:
    if max_nodes == 0:
        # both trees empty: only the empty script applies
        return 1.0
    # (n - ted) / n rather than 1 - ted / n: one rounding step instead of two
    return max((max_nodes - ted) / max_nodes, 0.0)


def tsed_score(
    origin: Optional[Tree],
    target: Optional[Tree],
    weights: EditWeights = DEFAULT_WEIGHTS,
    *,
    pair_limit: Optional[int] = DEFAULT_PAIR_LIMIT,
) -> ComparisonResult:
    ted = tree_edit_distance(origin, target, weights, pair_limit=pair_limit)
    max_nodes = max(node_count(origin), node_count(target))
    return ComparisonResult(ted, max_nodes, tsed_from_distance(ted, max_nodes), weights)


def compare_sources(
    generated: str,
    ground_truth: str,
    grammar_id: str = "python",
    weights: EditWeights = DEFAULT_WEIGHTS,
    *,
    pair_limit: Optional[int] = DEFAULT_PAIR_LIMIT,
) -> ComparisonResult:
    """Score generated code against the ground truth.

    The generated code is the origin tree, so deletions price content that
    only the generated side has.
    """
    try:
        origin = parse_to_tree(generated, grammar_id)
    except SourceSyntaxError as exc:
        raise exc.with_side("generated") from None
    try:
        target = parse_to_tree(ground_truth, grammar_id)
    except SourceSyntaxError as exc:
        raise exc.with_side("ground_truth") from None
    return tsed_score(origin, target, weights, pair_limit=pair_limit)
