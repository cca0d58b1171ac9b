"""Random ordered trees and weight triples for property tests."""

from __future__ import annotations

import random
from typing import Optional

from papercode.tsed import EditWeights, Tree


def random_tree(rng: random.Random, max_nodes: int, alphabet: str = "abcd") -> Optional[Tree]:
    """A random recursive tree with 0..max_nodes nodes; children keep insertion order."""
    n = rng.randint(0, max_nodes)
    if n == 0:
        return None
    labels = [rng.choice(alphabet) for _ in range(n)]
    children: list[list[int]] = [[] for _ in range(n)]
    for node in range(1, n):
        children[rng.randrange(node)].append(node)

    def build(i: int) -> Tree:
        return Tree(labels[i], tuple(build(c) for c in children[i]))

    return build(0)


def random_weights(rng: random.Random, high: float = 5.0) -> EditWeights:
    # values on a 1/8 grid keep sums exact, so tolerance checks test the algorithm
    # and not float rounding; a few zeros exercise degenerate costs
    def one() -> float:
        return 0.0 if rng.random() < 0.1 else round(rng.uniform(0, high) * 8) / 8

    return EditWeights(one(), one(), one())


def chain(labels: str) -> Tree:
    node = Tree(labels[-1])
    for label in reversed(labels[:-1]):
        node = Tree(label, (node,))
    return node
