"""ICD-10-CA style code hierarchy.

The tree is read from a CSV with header ``code,parent,level,description``.
Chapters have an empty parent and sit at depth 0; every other node has
exactly one parent, and levels strictly increase along any root-to-leaf path
(chapter < block < category < subcategory < expansion).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import CycleDetected, DuplicateCode, MalformedRow, UnknownCode, UnknownParent

LEVELS = ("chapter", "block", "category", "subcategory", "expansion")
LEVEL_RANK = {name: i for i, name in enumerate(LEVELS)}
HEADER = ["code", "parent", "level", "description"]


@dataclass(frozen=True)
class IcdNode:
    code: str
    parent: str | None
    level: str
    description: str = ""


class IcdTree:
    """Immutable, validated code hierarchy.

    Depths and ancestor chains are computed once at construction; all queries
    are read-only afterwards.
    """

    def __init__(self, nodes: Iterable[IcdNode]):
        index: dict[str, IcdNode] = {}
        order: list[str] = []
        for node in nodes:
            if node.code in index:
                raise DuplicateCode(f"duplicate code {node.code!r}")
            if node.level not in LEVEL_RANK:
                raise MalformedRow(f"{node.code}: unknown level {node.level!r}")
            index[node.code] = node
            order.append(node.code)

        for node in index.values():
            if node.parent is None:
                if node.level != "chapter":
                    raise MalformedRow(f"{node.code}: only chapters may lack a parent")
                continue
            if node.level == "chapter":
                raise MalformedRow(f"{node.code}: chapter with parent {node.parent!r}")
            if node.parent not in index:
                raise UnknownParent(f"{node.code}: parent {node.parent!r} not in tree")

        depth: dict[str, int] = {}
        for code in order:
            self._resolve_depth(code, index, depth)

        for node in index.values():
            if node.parent is not None:
                parent = index[node.parent]
                if LEVEL_RANK[parent.level] >= LEVEL_RANK[node.level]:
                    raise MalformedRow(
                        f"{node.code}: level {node.level} not below parent level {parent.level}"
                    )

        children: dict[str, list[str]] = {code: [] for code in order}
        for code in order:
            parent = index[code].parent
            if parent is not None:
                children[parent].append(code)

        self._index = MappingProxyType(index)
        self._order = tuple(order)
        self._depth = MappingProxyType(depth)
        self._children = MappingProxyType({k: tuple(v) for k, v in children.items()})

    @staticmethod
    def _resolve_depth(code, index, depth):
        path = []
        on_path = set()
        cur = code
        while cur not in depth:
            if cur in on_path:
                raise CycleDetected(f"cycle through {cur!r}")
            on_path.add(cur)
            path.append(cur)
            parent = index[cur].parent
            if parent is None:
                depth[cur] = 0
                path.pop()
                break
            cur = parent
        for c in reversed(path):
            depth[c] = depth[index[c].parent] + 1

    # -- container protocol -------------------------------------------------
    def __len__(self):
        return len(self._order)

    def __contains__(self, code):
        return code in self._index

    def __iter__(self):
        return iter(self._order)

    def __eq__(self, other):
        if not isinstance(other, IcdTree):
            return NotImplemented
        return self.nodes == other.nodes

    @property
    def nodes(self) -> tuple[IcdNode, ...]:
        return tuple(self._index[c] for c in self._order)

    @property
    def index(self) -> Mapping[str, IcdNode]:
        return self._index

    def node(self, code: str) -> IcdNode:
        try:
            return self._index[code]
        except KeyError:
            raise UnknownCode(f"unknown code {code!r}") from None

    def children(self, code: str) -> tuple[str, ...]:
        self.node(code)
        return self._children[code]

    def leaves(self) -> list[str]:
        """Codes without children, in file order."""
        return [c for c in self._order if not self._children[c]]

    def chapters(self) -> list[str]:
        return [c for c in self._order if self._index[c].parent is None]

    # -- queries ---------------------------------------------------------------
    def depth(self, code: str) -> int:
        self.node(code)
        return self._depth[code]

    def ancestors(self, code: str) -> list[str]:
        """Ancestor codes, nearest parent first, ending at the chapter."""
        out = []
        parent = self.node(code).parent
        while parent is not None:
            out.append(parent)
            parent = self._index[parent].parent
        return out

    def feature_weight(self, code: str) -> float:
        """Depth-discounted loss weight ``1 / (1 + depth)``; chapters get 1.0."""
        return 1.0 / (1.0 + self.depth(code))

    def feature_weights(self, codes: Iterable[str]):
        return np.array([self.feature_weight(c) for c in codes], dtype=float)

    # -- serialization ---------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for n in self.nodes:
            w.writerow([n.code, n.parent or "", n.level, n.description])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _rows_to_nodes(reader) -> list[IcdNode]:
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow("empty tree file") from None
    if [h.strip() for h in header] != HEADER:
        raise MalformedRow(f"bad header {header!r}; expected {HEADER}")
    nodes = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise MalformedRow(f"line {lineno}: expected 4 fields, got {len(row)}")
        code, parent, level = (c.strip() for c in row[:3])
        desc = row[3]
        if not code:
            raise MalformedRow(f"line {lineno}: empty code")
        if level not in LEVEL_RANK:
            raise MalformedRow(f"line {lineno}: unknown level {level!r}")
        nodes.append(IcdNode(code, parent or None, level, desc))
    return nodes


def parse_tree(source) -> IcdTree:
    """Parse a tree CSV from a path, an open text file, or a CSV string.

    Raises
    ------
    MalformedRow, UnknownParent, DuplicateCode, CycleDetected
    """
    if hasattr(source, "read"):
        return IcdTree(_rows_to_nodes(csv.reader(source)))
    if isinstance(source, str) and "\n" in source:
        return IcdTree(_rows_to_nodes(csv.reader(io.StringIO(source))))
    with open(source, newline="", encoding="utf-8") as fh:
        return IcdTree(_rows_to_nodes(csv.reader(fh)))


def sample_tree_path() -> Path:
    return Path(str(resources.files("icdfs") / "data" / "icd10ca_sample.csv"))


def load_sample_tree() -> IcdTree:
    """The bundled ~970-node sample hierarchy."""
    return parse_tree(sample_tree_path())


def depth(tree: IcdTree, code: str) -> int:
    return tree.depth(code)


def ancestors(tree: IcdTree, code: str) -> list[str]:
    return tree.ancestors(code)


def feature_weight(tree: IcdTree, code: str) -> float:
    return tree.feature_weight(code)
