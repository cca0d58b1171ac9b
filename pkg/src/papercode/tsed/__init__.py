"""Tree edit distance and the normalized TSED score for source code."""

from .metric import ComparisonResult, compare_sources, tsed_from_distance, tsed_score
from .oracle import MAX_ORACLE_NODES, SizeLimit, brute_force_ted
from .parsing import (
    SourceSyntaxError,
    UnknownGrammar,
    available_grammars,
    parse_to_tree,
    register_grammar,
)
from .ted import DEFAULT_PAIR_LIMIT, ResourceLimit, tree_edit_distance
from .tree import DEFAULT_WEIGHTS, EditWeights, Tree, node_count

__all__ = [
    "ComparisonResult",
    "DEFAULT_PAIR_LIMIT",
    "DEFAULT_WEIGHTS",
    "EditWeights",
    "MAX_ORACLE_NODES",
    "ResourceLimit",
    "SizeLimit",
    "SourceSyntaxError",
    "Tree",
    "UnknownGrammar",
    "available_grammars",
    "brute_force_ted",
    "compare_sources",
    "node_count",
    "parse_to_tree",
    "register_grammar",
    "tree_edit_distance",
    "tsed_from_distance",
    "tsed_score",
]
