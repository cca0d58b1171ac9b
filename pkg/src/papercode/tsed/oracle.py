"""Exhaustive edit-mapping search, used to check the fast distance on small trees.

An edit script corresponds to a mapping between node sets that is
one-to-one and preserves both ancestry and left-to-right order. Its cost is
the renames on mapped pairs plus deletion of every unmapped origin node and
insertion of every unmapped target node. Enumerating every valid mapping
and taking the cheapest gives the edit distance directly, with no dynamic
programming shared with :mod:`papercode.tsed.ted`.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

from .tree import EditWeights, Tree

MAX_ORACLE_NODES = 7


class SizeLimit(ValueError):
    """Raised when a tree is too big for exhaustive enumeration."""


def _orders(tree: Optional[Tree]) -> tuple[tuple[str, int, int], ...]:
    """(label, preorder rank, postorder rank) for each node, in preorder."""
    if tree is None:
        return ()
    pre: list[Tree] = []
    post_rank: dict[int, int] = {}

    def walk(node: Tree) -> None:
        pre.append(node)
        for child in node.children:
            walk(child)
        post_rank[id(node)] = len(post_rank)

    walk(tree)
    return tuple((node.label, rank, post_rank[id(node)]) for rank, node in enumerate(pre))


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def _compatible(a1, b1, a2, b2) -> bool:
    # Ancestry and sibling order are both captured by the relative order of
    # preorder and postorder ranks: u is an ancestor of v iff pre(u) < pre(v)
    # and post(u) > post(v); u is left of v iff both ranks are smaller.
    return (
        _sign(a1[1] - a2[1]) == _sign(b1[1] - b2[1])
        and _sign(a1[2] - a2[2]) == _sign(b1[2] - b2[2])
    )


@lru_cache(maxsize=4096)
def _mapping_profiles(
    nodes1: tuple[tuple[str, int, int], ...], nodes2: tuple[tuple[str, int, int], ...]
) -> frozenset[tuple[int, int]]:
    """Every achievable (pairs mapped, pairs renamed) over valid mappings."""
    profiles: set[tuple[int, int]] = set()
    used = [False] * len(nodes2)
    chosen: list[tuple[int, int]] = []

    def extend(k: int, renamed: int) -> None:
        if k == len(nodes1):
            profiles.add((len(chosen), renamed))
            return
        extend(k + 1, renamed)
        a = nodes1[k]
        for j, b in enumerate(nodes2):
            if used[j]:
                continue
            if all(_compatible(a, b, nodes1[i], nodes2[jj]) for i, jj in chosen):
                used[j] = True
                chosen.append((k, j))
                extend(k + 1, renamed + (a[0] != b[0]))
                chosen.pop()
                used[j] = False

    extend(0, 0)
    return frozenset(profiles)


def brute_force_ted(origin: Optional[Tree], target: Optional[Tree], weights: EditWeights) -> float:
    nodes1, nodes2 = _orders(origin), _orders(target)
    if len(nodes1) > MAX_ORACLE_NODES or len(nodes2) > MAX_ORACLE_NODES:
        raise SizeLimit(
            f"exhaustive search supports at most {MAX_ORACLE_NODES} nodes per tree, "
            f"got {len(nodes1)} and {len(nodes2)}"
        )
    n1, n2 = len(nodes1), len(nodes2)
    d, i, r = weights.delete_cost, weights.insert_cost, weights.rename_cost
    return min(
        r * renamed + d * (n1 - mapped) + i * (n2 - mapped)
        for mapped, renamed in _mapping_profiles(nodes1, nodes2)
    )
