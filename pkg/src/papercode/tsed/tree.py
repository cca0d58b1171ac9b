"""Ordered labeled trees and edit-cost weights."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tree:
    """A rooted, ordered, labeled tree node.

    The empty tree is represented by ``None``; every function taking a tree
    accepts ``Optional[Tree]``.
    """

    label: str
    children: tuple["Tree", ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("tree labels must be non-empty")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    def preorder(self) -> Iterator["Tree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def to_sexpr(self) -> str:
        if not self.children:
            return self.label
        return f"{self.label}({','.join(c.to_sexpr() for c in self.children)})"

    @classmethod
    def parse(cls, text: str) -> Optional["Tree"]:
        """Build a tree from compact notation such as ``a(b,c(d))``.

        An empty or whitespace-only string yields the empty tree.
        Labels may not contain ``(``, ``)`` or ``,``.
        """
        tokens = re.findall(r"[(),]|[^(),\s][^(),]*", text)
        tokens = [t.strip() for t in tokens]
        if not tokens:
            return None
        pos = 0

        def node() -> Tree:
            nonlocal pos
            label = tokens[pos]
            if label in "(),":
                raise ValueError(f"expected label at token {pos} in {text!r}")
            pos += 1
            kids: list[Tree] = []
            if pos < len(tokens) and tokens[pos] == "(":
                pos += 1
                while True:
                    kids.append(node())
                    if pos >= len(tokens):
                        raise ValueError(f"unbalanced parentheses in {text!r}")
                    if tokens[pos] == ",":
                        pos += 1
                        continue
                    if tokens[pos] == ")":
                        pos += 1
                        break
                    raise ValueError(f"unexpected token {tokens[pos]!r} in {text!r}")
            return cls(label, tuple(kids))

        root = node()
        if pos != len(tokens):
            raise ValueError(f"trailing input in {text!r}")
        return root


def node_count(tree: Optional[Tree]) -> int:
    if tree is None:
        return 0
    return sum(1 for _ in tree.preorder())


@dataclass(frozen=True)
class EditWeights:
    """Per-operation penalties for tree edit distance."""

    delete_cost: float
    insert_cost: float
    rename_cost: float

    def __post_init__(self) -> None:
        for name in ("delete_cost", "insert_cost", "rename_cost"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")
            object.__setattr__(self, name, float(value))

    @property
    def is_ordered(self) -> bool:
        """True when delete > insert > rename."""
        return self.delete_cost > self.insert_cost > self.rename_cost

    def check_ordering(self) -> bool:
        if not self.is_ordered:
            logger.warning(
                "edit weights %s do not satisfy delete > insert > rename", self.render()
            )
        return self.is_ordered

    def swapped(self) -> "EditWeights":
        """Weights for the reversed edit direction (delete and insert exchanged)."""
        return EditWeights(self.insert_cost, self.delete_cost, self.rename_cost)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delete_cost, self.insert_cost, self.rename_cost)

    def render(self) -> str:
        return "(" + ",".join(f"{v:g}" for v in self.as_tuple()) + ")"

    @classmethod
    def parse(cls, text: str) -> "EditWeights":
        """Parse ``"4,0.7,0.1"`` (parentheses optional) as (delete, insert, rename)."""
        parts = [p.strip() for p in text.strip().strip("()").split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {text!r}")
        try:
            d, i, r = (float(p) for p in parts)
        except ValueError as exc:
            raise ValueError(f"weights must be numbers: {text!r}") from exc
        return cls(d, i, r)


DEFAULT_WEIGHTS = EditWeights(4.0, 0.7, 0.1)
