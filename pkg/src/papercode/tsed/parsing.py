"""Source code to :class:`Tree` via grammar backends.

Interior nodes are labeled with the grammar's node kind; leaves carry
``kind:token`` so that renaming an identifier or literal is a rename, not a
no-op.
"""

from __future__ import annotations

from typing import Callable, Optional

from .tree import Tree


class UnknownGrammar(KeyError):
    pass


class SourceSyntaxError(ValueError):
    """Source failed to parse. ``side`` is set when comparing two sources."""

    def __init__(self, message: str, line: int, column: int, side: Optional[str] = None):
        self.line = line
        self.column = column
        self.side = side
        self.message = message
        where = f"{side} source" if side else "source"
        super().__init__(f"{where}: {message} at line {line}, column {column}")

    def with_side(self, side: str) -> "SourceSyntaxError":
        return SourceSyntaxError(self.message, self.line, self.column, side)


ParserBackend = Callable[[str], Tree]

_REGISTRY: dict[str, ParserBackend] = {}


def register_grammar(grammar_id: str, backend: ParserBackend) -> None:
    _REGISTRY[grammar_id] = backend


def available_grammars() -> list[str]:
    return sorted(_REGISTRY)


def parse_to_tree(source_text: str, grammar_id: str = "python") -> Tree:
    try:
        backend = _REGISTRY[grammar_id]
    except KeyError:
        raise UnknownGrammar(
            f"no parser registered for {grammar_id!r}; available: {available_grammars()}"
        ) from None
    return backend(source_text)


def convert_tree_sitter(root) -> Tree:
    """Map a tree-sitter node (and its whole subtree) onto :class:`Tree`."""
    # iterative postorder; generated code can nest deeper than the recursion limit
    built: list[Tree] = []
    stack: list[tuple[object, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        children = node.children
        if not children:
            text = node.text.decode("utf-8", errors="replace") if node.text is not None else ""
            built.append(Tree(f"{node.type}:{text}"))
            continue
        if expanded:
            kids = tuple(built[-len(children):])
            del built[-len(children):]
            built.append(Tree(node.type, kids))
            continue
        stack.append((node, True))
        for child in reversed(children):
            stack.append((child, False))
    return built[0]


def _first_error(root):
    stack = [root]
    while stack:
        node = stack.pop()
        if node.type == "ERROR" or node.is_missing:
            return node
        if node.has_error:
            stack.extend(reversed(node.children))
    return root


def _tree_sitter_python() -> Optional[ParserBackend]:
    try:
        import tree_sitter
        import tree_sitter_python
    except ImportError:  # pragma: no cover - exercised only without the extra
        return None
    language = tree_sitter.Language(tree_sitter_python.language())

    def parse_python(source_text: str) -> Tree:
        # tree-sitter parsers are not thread-safe; one per call is cheap
        parser = tree_sitter.Parser(language)
        parsed = parser.parse(source_text.encode("utf-8"))
        root = parsed.root_node
        if root.has_error:
            bad = _first_error(root)
            line, col = bad.start_point
            what = f"missing {bad.type}" if bad.is_missing else "invalid syntax"
            raise SourceSyntaxError(what, line + 1, col + 1)
        return convert_tree_sitter(root)

    return parse_python


_python_backend = _tree_sitter_python()
if _python_backend is not None:
    register_grammar("python", _python_backend)
