"""Research-paper-to-code pipeline with a tree-edit-distance code similarity metric."""

__version__ = "0.1.0"
