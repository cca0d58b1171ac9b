"""Weighted ordered tree edit distance (Zhang-Shasha)."""

from __future__ import annotations

from typing import Optional

from .tree import EditWeights, Tree, node_count

DEFAULT_PAIR_LIMIT = 4_000_000


class ResourceLimit(RuntimeError):
    """Raised when a tree pair is too large for the configured bound."""


def _annotate(root: Tree, label_ids: dict[str, int]) -> tuple[list[int], list[int], list[int]]:
    """Postorder label ids, leftmost-leaf indices and keyroots of ``root``."""
    labels: list[int] = []
    sizes: list[int] = []
    pending: list[int] = []
    stack: list[tuple[Tree, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            size = 1
            for _ in node.children:
                size += pending.pop()
            labels.append(label_ids.setdefault(node.label, len(label_ids)))
            sizes.append(size)
            pending.append(size)
            continue
        stack.append((node, True))
        for child in reversed(node.children):
            stack.append((child, False))
    lmd = [i - sizes[i] + 1 for i in range(len(sizes))]
    highest: dict[int, int] = {}
    for i, left in enumerate(lmd):
        highest[left] = i
    return labels, lmd, sorted(highest.values())


def _kernel_python(lab1, lmd1, kr1, lab2, lmd2, kr2, d, ins, r) -> float:
    n1, n2 = len(lab1), len(lab2)
    td = [[0.0] * n2 for _ in range(n1)]
    for i in kr1:
        li = lmd1[i]
        rows = i - li + 2
        for j in kr2:
            lj = lmd2[j]
            cols = j - lj + 2
            fd = [[0.0] * cols for _ in range(rows)]
            first = fd[0]
            for y in range(1, cols):
                first[y] = first[y - 1] + ins
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + d
            for x in range(1, rows):
                ix = li + x - 1
                lmd_ix = lmd1[ix]
                lab_ix = lab1[ix]
                prev = fd[x - 1]
                cur = fd[x]
                td_ix = td[ix]
                whole_i = lmd_ix == li
                off_x = lmd_ix - li
                for y in range(1, cols):
                    jy = lj + y - 1
                    best = prev[y] + d
                    alt = cur[y - 1] + ins
                    if alt < best:
                        best = alt
                    if whole_i and lmd2[jy] == lj:
                        # both prefixes are whole subtrees: the tree distance itself
                        alt = prev[y - 1] + (0.0 if lab_ix == lab2[jy] else r)
                        if alt < best:
                            best = alt
                        cur[y] = best
                        td_ix[jy] = best
                    else:
                        alt = fd[off_x][lmd2[jy] - lj] + td_ix[jy]
                        if alt < best:
                            best = alt
                        cur[y] = best
    return td[n1 - 1][n2 - 1]


def _build_numba_kernel():
    try:
        import numba
        import numpy as np
    except ImportError:  # pragma: no cover
        return None

    @numba.njit(cache=True)
    def kernel(lab1, lmd1, kr1, lab2, lmd2, kr2, d, ins, r):  # pragma: no cover - compiled
        n1 = lab1.shape[0]
        n2 = lab2.shape[0]
        td = np.zeros((n1, n2))
        fd = np.zeros((n1 + 1, n2 + 1))
        for a in range(kr1.shape[0]):
            i = kr1[a]
            li = lmd1[i]
            rows = i - li + 2
            for b in range(kr2.shape[0]):
                j = kr2[b]
                lj = lmd2[j]
                cols = j - lj + 2
                fd[0, 0] = 0.0
                for y in range(1, cols):
                    fd[0, y] = fd[0, y - 1] + ins
                for x in range(1, rows):
                    fd[x, 0] = fd[x - 1, 0] + d
                for x in range(1, rows):
                    ix = li + x - 1
                    lx = lmd1[ix]
                    for y in range(1, cols):
                        jy = lj + y - 1
                        best = fd[x - 1, y] + d
                        alt = fd[x, y - 1] + ins
                        if alt < best:
                            best = alt
                        if lx == li and lmd2[jy] == lj:
                            alt = fd[x - 1, y - 1] + (0.0 if lab1[ix] == lab2[jy] else r)
                            if alt < best:
                                best = alt
                            fd[x, y] = best
                            td[ix, jy] = best
                        else:
                            alt = fd[lx - li, lmd2[jy] - lj] + td[ix, jy]
                            if alt < best:
                                best = alt
                            fd[x, y] = best
        return td[n1 - 1, n2 - 1]

    def run(lab1, lmd1, kr1, lab2, lmd2, kr2, d, ins, r) -> float:
        arrays = [np.asarray(a, dtype=np.int64) for a in (lab1, lmd1, kr1, lab2, lmd2, kr2)]
        return float(kernel(*arrays, float(d), float(ins), float(r)))

    return run


_numba_kernel = None
_numba_checked = False

# below this many node pairs the interpreter beats JIT start-up
AUTO_NUMBA_THRESHOLD = 40_000


def _get_numba_kernel():
    global _numba_kernel, _numba_checked
    if not _numba_checked:
        _numba_kernel = _build_numba_kernel()
        _numba_checked = True
    return _numba_kernel


def tree_edit_distance(
    origin: Optional[Tree],
    target: Optional[Tree],
    weights: EditWeights,
    *,
    pair_limit: Optional[int] = DEFAULT_PAIR_LIMIT,
    backend: str = "auto",
) -> float:
    """Minimum cost of deletes, inserts and renames turning ``origin`` into ``target``.

    Deleting a node splices its children into its parent; inserting is the
    dual. Renaming costs ``rename_cost`` when labels differ and nothing when
    they match. ``backend`` is ``"python"``, ``"numba"`` or ``"auto"``, which
    compiles only for large pairs.
    """
    n1, n2 = node_count(origin), node_count(target)
    if pair_limit is not None and n1 * n2 > pair_limit:
        raise ResourceLimit(
            f"tree pair of {n1} x {n2} nodes exceeds the limit of {pair_limit} node pairs"
        )
    d, ins, r = weights.delete_cost, weights.insert_cost, weights.rename_cost
    if origin is None or target is None:
        return d * n1 + ins * n2

    label_ids: dict[str, int] = {}
    ann1 = _annotate(origin, label_ids)
    ann2 = _annotate(target, label_ids)

    if backend not in ("auto", "python", "numba"):
        raise ValueError(f"unknown backend {backend!r}")
    kernel = _kernel_python
    if backend == "numba" or (backend == "auto" and n1 * n2 > AUTO_NUMBA_THRESHOLD):
        compiled = _get_numba_kernel()
        if compiled is not None:
            kernel = compiled
        elif backend == "numba":
            raise RuntimeError("numba is not installed")
    return kernel(*ann1, *ann2, d, ins, r)
