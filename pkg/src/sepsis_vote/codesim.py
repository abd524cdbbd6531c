"""Code similarity from ordered tree edit distance between serialized syntax trees.

Trees use a parenthesized notation, ``label(child child ...)``; labels are any
run of characters other than whitespace and parentheses. Extracting trees
from source code happens upstream (e.g. a script walking Python's ``ast``
module) and is not part of this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from .diversity import SimilarityMatrix, rank_order
from .errors import FormatError

DEFAULT_CAP_FACTOR = 10.0


@dataclass(frozen=True)
class EditCosts:
    insert: float = 1
    delete: float = 1
    relabel: float = 1

    def __post_init__(self):
        if min(self.insert, self.delete, self.relabel) < 0:
            raise ValueError("edit costs must be non-negative")


UNIT_COSTS = EditCosts()


@dataclass(frozen=True)
class AstTree:
    """Ordered labeled tree stored in postorder; ``parents[root] == -1``."""

    labels: tuple[str, ...]
    parents: tuple[int, ...]

    def __post_init__(self):
        labels, parents = tuple(self.labels), tuple(self.parents)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "parents", parents)
        n = len(labels)
        if len(parents) != n:
            raise ValueError("labels and parents differ in length")
        if n == 0:
            return
        if parents[-1] != -1 or any(p == -1 for p in parents[:-1]):
            raise ValueError("the last node in postorder must be the single root")
        if any(not (i < p < n) for i, p in enumerate(parents[:-1])):
            raise ValueError("every parent must follow its children in postorder")
        # subtrees in postorder are contiguous blocks ending at their root
        for i in range(n):
            for child in self.children[i]:
                if not self.leftmost[i] <= child < i:
                    raise ValueError("parent indices do not describe a postorder layout")
        size = [1] * n
        for i, p in enumerate(parents[:-1]):
            size[p] += size[i]
        if any(self.leftmost[i] != i - size[i] + 1 for i in range(n)):
            raise ValueError("parent indices do not describe a postorder layout")

    def __len__(self) -> int:
        return len(self.labels)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.labels]
        for i, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def leftmost(self) -> tuple[int, ...]:
        """Postorder index of the leftmost leaf below each node."""
        lml = list(range(len(self.labels)))
        for i in range(len(self.labels)):
            if self.children[i]:
                lml[i] = lml[self.children[i][0]]
        return tuple(lml)

    @cached_property
    def keyroots(self) -> tuple[int, ...]:
        """Highest node for each distinct leftmost leaf, ascending."""
        highest = {}
        for i, lml in enumerate(self.leftmost):
            highest[lml] = i
        return tuple(sorted(highest.values()))

    @property
    def root(self) -> int | None:
        return len(self.labels) - 1 if self.labels else None

    def __str__(self) -> str:
        return format_tree(self)


def parse_tree(text) -> AstTree:
    """Parse ``label(child ...)`` notation into a postorder AstTree.

    Blank input yields the empty tree. Errors carry the character offset.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    n = len(text)
    labels: list[str] = []
    parents: list[int] = []
    # stack of (label, child indices awaiting a parent)
    stack: list[tuple[str, list[int]]] = []
    pending: tuple[str, int] | None = None  # label just read, not yet known to have children
    roots: list[int] = []

    def emit(label, kids):
        idx = len(labels)
        labels.append(label)
        parents.append(-1)
        for k in kids:
            parents[k] = idx
        if stack:
            stack[-1][1].append(idx)
        else:
            roots.append(idx)

    i = 0
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "(":
            if pending is None:
                raise FormatError("'(' without a preceding label", offset=i)
            stack.append((pending[0], []))
            pending = None
            i += 1
        elif ch == ")":
            if pending is not None:
                emit(pending[0], [])
                pending = None
            if not stack:
                raise FormatError("unbalanced ')'", offset=i)
            label, kids = stack.pop()
            emit(label, kids)
            i += 1
        else:
            if pending is not None:
                emit(pending[0], [])
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            pending = (text[i:j], i)
            if not stack and roots:
                raise FormatError("more than one root", offset=i)
            i = j
    if pending is not None:
        emit(pending[0], [])
    if stack:
        raise FormatError(f"unbalanced '(': {len(stack)} unclosed at end of input", offset=n)
    if len(roots) > 1:
        raise FormatError("more than one root", offset=n)
    return AstTree(tuple(labels), tuple(parents))


def format_tree(tree: AstTree) -> str:
    if not len(tree):
        return ""

    def render(i):
        kids = tree.children[i]
        if not kids:
            return tree.labels[i]
        return tree.labels[i] + "(" + " ".join(render(k) for k in kids) + ")"

    return render(tree.root)


def tree_edit_distance(t1: AstTree, t2: AstTree, costs: EditCosts = UNIT_COSTS) -> float:
    """Zhang-Shasha ordered tree edit distance.

    Runs the forest-distance recurrence once per pair of keyroots, filling the
    subtree-distance table bottom-up.
    """
    n1, n2 = len(t1), len(t2)
    ins, dele, rel = costs.insert, costs.delete, costs.relabel
    if n1 == 0 or n2 == 0:
        return n2 * ins + n1 * dele
    l1, l2 = t1.leftmost, t2.leftmost
    lab1, lab2 = t1.labels, t2.labels
    td = [[0] * n2 for _ in range(n1)]

    for i in t1.keyroots:
        li = l1[i]
        m = i - li + 2
        for j in t2.keyroots:
            lj = l2[j]
            w = j - lj + 2
            fd = [[0] * w for _ in range(m)]
            first = fd[0]
            for y in range(1, w):
                first[y] = first[y - 1] + ins
            for x in range(1, m):
                a = li + x - 1
                la = l1[a]
                prev = fd[x - 1]
                row = fd[x]
                row[0] = prev[0] + dele
                td_a = td[a]
                label_a = lab1[a]
                whole_a = la == li
                for y in range(1, w):
                    b = lj + y - 1
                    lb = l2[b]
                    cost = prev[y] + dele
                    alt = row[y - 1] + ins
                    if alt < cost:
                        cost = alt
                    if whole_a and lb == lj:
                        alt = prev[y - 1] + (0 if label_a == lab2[b] else rel)
                        if alt < cost:
                            cost = alt
                        td_a[b] = cost
                    else:
                        alt = fd[la - li][lb - lj] + td_a[b]
                        if alt < cost:
                            cost = alt
                    row[y] = cost
    return td[n1 - 1][n2 - 1]


def code_similarity(d: float, cap: float = DEFAULT_CAP_FACTOR) -> float:
    """``1/d``, with identical trees (``d == 0``) mapped to ``cap``.

    The default cap is ten times the largest similarity reachable at unit
    cost, where the smallest positive distance is 1.
    """
    if d < 0:
        raise ValueError("distance must be non-negative")
    return cap if d == 0 else 1.0 / d


def distance_matrix(trees: Mapping[str, AstTree], order=None, costs: EditCosts = UNIT_COSTS) -> np.ndarray:
    order = list(order) if order is not None else sorted(trees)
    n = len(order)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = tree_edit_distance(trees[order[i]], trees[order[j]], costs)
    return D


def code_similarity_matrix(
    trees: Mapping[str, AstTree],
    ranking: Mapping[str, float] | None = None,
    costs: EditCosts = UNIT_COSTS,
    cap_factor: float = DEFAULT_CAP_FACTOR,
) -> SimilarityMatrix:
    """Pairwise ``1/d`` matrix; zero-distance cells get ``cap_factor`` times the largest finite entry and are flagged."""
    order = rank_order(trees, ranking)
    D = distance_matrix(trees, order, costs)
    identical = D == 0
    finite = 1.0 / D[~identical]
    cap = cap_factor * (float(finite.max()) if finite.size else 1.0)
    S = np.where(identical, cap, 1.0 / np.where(identical, 1.0, D))
    flagged = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(identical)))
    return SimilarityMatrix(
        tuple(order), S, "code",
        "ranking score desc" if ranking is not None else "algorithm id",
        flagged,
        {"cap": cap, "identical_cells": len(flagged), "distances": D, "costs": costs},
    )
