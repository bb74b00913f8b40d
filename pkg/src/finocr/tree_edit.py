"""Ordered labeled tree edit distance (Zhang-Shasha keyroot dynamic programming)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from finocr.errors import TreeTooLarge

MAX_NODES = 20_000

STRUCTURAL = "structural"
CONTENT = "content"


@dataclass(frozen=True)
class OrderedTree:
    """A labeled ordered tree node.

    ``text`` carries cell or heading content for ``content`` nodes; structural
    nodes leave it empty.
    """

    label: str
    kind: str = STRUCTURAL
    children: tuple = ()
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class CostModel:
    insert_cost: Callable = field(default=lambda node: 1.0)
    delete_cost: Callable = field(default=lambda node: 1.0)
    relabel_cost: Callable = field(default=None)

    def __post_init__(self):
        if self.relabel_cost is None:
            object.__setattr__(self, "relabel_cost", _unit_relabel)


def _unit_relabel(a: OrderedTree, b: OrderedTree) -> float:
    return 0.0 if (a.label, a.kind, a.text) == (b.label, b.kind, b.text) else 1.0


def unit_cost() -> CostModel:
    return CostModel()


def tree_size(tree: OrderedTree) -> int:
    count = 0
    stack = [tree]
    while stack:
        node = stack.pop()
        count += 1
        stack.extend(node.children)
    return count


def _annotate(tree: OrderedTree):
    """Postorder node list and leftmost-leaf index for each node."""
    nodes = []
    lml = []
    # (node, next child index); a node's leftmost leaf is the next node emitted
    stack = [(tree, 0)]
    first_leaf = []
    while stack:
        node, i = stack[-1]
        if i == 0:
            first_leaf.append(len(nodes))
        if i < len(node.children):
            stack[-1] = (node, i + 1)
            stack.append((node.children[i], 0))
        else:
            stack.pop()
            leftmost = first_leaf.pop()
            nodes.append(node)
            lml.append(leftmost)
    keyroots = {}
    for i, l in enumerate(lml):
        keyroots[l] = i
    return nodes, lml, sorted(keyroots.values())


def tree_edit_distance(a: OrderedTree, b: OrderedTree, cost: CostModel = None) -> float:
    """Minimal cost of an insert/delete/relabel script turning ``a`` into ``b``."""
    cost = cost or unit_cost()
    na, nb = tree_size(a), tree_size(b)
    if na > MAX_NODES or nb > MAX_NODES:
        raise TreeTooLarge(f"trees of {na} and {nb} nodes exceed the {MAX_NODES}-node limit")

    nodes_a, lml_a, kr_a = _annotate(a)
    nodes_b, lml_b, kr_b = _annotate(b)
    del_a = [cost.delete_cost(n) for n in nodes_a]
    ins_b = [cost.insert_cost(n) for n in nodes_b]
    relabel = cost.relabel_cost
    td = [[0.0] * nb for _ in range(na)]

    for i in kr_a:
        li = lml_a[i]
        for j in kr_b:
            lj = lml_b[j]
            rows = i - li + 2
            cols = j - lj + 2
            fd = [[0.0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + del_a[li + x - 1]
            first = fd[0]
            for y in range(1, cols):
                first[y] = first[y - 1] + ins_b[lj + y - 1]
            for x in range(1, rows):
                ax = li + x - 1
                ax_l = lml_a[ax]
                d_ax = del_a[ax]
                prev = fd[x - 1]
                cur = fd[x]
                td_ax = td[ax]
                for y in range(1, cols):
                    by = lj + y - 1
                    if ax_l == li and lml_b[by] == lj:
                        v = min(
                            prev[y] + d_ax,
                            cur[y - 1] + ins_b[by],
                            prev[y - 1] + relabel(nodes_a[ax], nodes_b[by]),
                        )
                        cur[y] = v
                        td_ax[by] = v
                    else:
                        p = ax_l - li
                        q = lml_b[by] - lj
                        cur[y] = min(
                            prev[y] + d_ax,
                            cur[y - 1] + ins_b[by],
                            fd[p][q] + td_ax[by],
                        )
    return td[na - 1][nb - 1]
