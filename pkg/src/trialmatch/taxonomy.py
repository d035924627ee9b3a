"""Four-level medical concept hierarchies with per-node textual descriptions.

A taxonomy is a forest: level-1 nodes are roots (most general), level-4 nodes
are the leaf codes that appear in patient records. Every non-root node points
at a parent exactly one level up. Files are flat CSV, one node per row, so
they can be validated while streaming.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import (
    CycleDetected,
    DuplicateId,
    LevelGap,
    MalformedRow,
    NotALeaf,
    UnknownCode,
)

CODE_TYPES = ("diagnosis", "medication", "procedure")

# Depth of every taxonomy handled by this package. Deeper input files are
# rejected at load time rather than truncated.
TAXONOMY_DEPTH = 4

CSV_HEADER = ["node_id", "level", "parent_id", "code_type", "description"]


@dataclass(frozen=True)
class TaxonomyNode:
    node_id: str
    level: int
    parent_id: str | None
    code_type: str
    description: str


@dataclass
class Taxonomy:
    code_type: str
    nodes: dict[str, TaxonomyNode] = field(default_factory=dict)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def get(self, node_id: str) -> TaxonomyNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownCode(
                f"{self.code_type}: no node {node_id!r}"
            ) from None

    def roots(self) -> list[TaxonomyNode]:
        return [n for n in self.nodes.values() if n.level == 1]

    def leaves(self) -> list[TaxonomyNode]:
        return [n for n in self.nodes.values() if n.level == TAXONOMY_DEPTH]

    def children_of(self, node_id: str) -> list[TaxonomyNode]:
        return [n for n in self.nodes.values() if n.parent_id == node_id]


def ancestor_chain(tax: Taxonomy, leaf_id: str) -> list[str]:
    """Node ids from root to leaf (levels 1..4) for a level-4 code.

    The leaf itself is the last element; consecutive elements are
    parent/child pairs.
    """
    node = tax.get(leaf_id)
    if node.level != TAXONOMY_DEPTH:
        raise NotALeaf(
            f"{leaf_id!r} is at level {node.level}, not {TAXONOMY_DEPTH}"
        )
    chain = [node.node_id]
    while node.parent_id is not None:
        node = tax.get(node.parent_id)
        chain.append(node.node_id)
    chain.reverse()
    return chain


def description_of(tax: Taxonomy, node_id: str) -> str:
    return tax.get(node_id).description


def load_taxonomy(path, code_type: str) -> Taxonomy:
    """Load and fully validate a taxonomy CSV.

    Raises MalformedRow (with the offending line number), DuplicateId,
    CycleDetected, or LevelGap. The returned taxonomy is immutable by
    convention and safe to share across workers.
    """
    if code_type not in CODE_TYPES:
        raise ValueError(f"unknown code type {code_type!r}")
    nodes: dict[str, TaxonomyNode] = {}
    lines: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise MalformedRow(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            node = _parse_row(path, lineno, row, code_type)
            if node.node_id in nodes:
                raise DuplicateId(
                    f"{path}: line {lineno}: duplicate id {node.node_id!r}"
                )
            nodes[node.node_id] = node
            lines[node.node_id] = lineno
    tax = Taxonomy(code_type=code_type, nodes=nodes)
    _validate_structure(path, tax, lines)
    return tax


def save_taxonomy(tax: Taxonomy, path) -> None:
    """Write the CSV form; row order is (level, node_id) for reproducibility."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for node in sorted(tax.nodes.values(), key=lambda n: (n.level, n.node_id)):
            writer.writerow(
                [
                    node.node_id,
                    node.level,
                    node.parent_id or "",
                    node.code_type,
                    node.description,
                ]
            )


def _parse_row(path, lineno: int, row: list[str], code_type: str) -> TaxonomyNode:
    if len(row) != 5:
        raise MalformedRow(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
    node_id, level_str, parent_id, row_type, description = (f.strip() for f in row)
    if not node_id:
        raise MalformedRow(f"{path}: line {lineno}: empty node_id")
    try:
        level = int(level_str)
    except ValueError:
        raise MalformedRow(
            f"{path}: line {lineno}: level {level_str!r} is not an integer"
        ) from None
    if not 1 <= level <= TAXONOMY_DEPTH:
        raise MalformedRow(
            f"{path}: line {lineno}: level {level} outside 1..{TAXONOMY_DEPTH}"
        )
    if row_type != code_type:
        raise MalformedRow(
            f"{path}: line {lineno}: code_type {row_type!r} != {code_type!r}"
        )
    if not description:
        raise MalformedRow(f"{path}: line {lineno}: empty description")
    if level == 1 and parent_id:
        raise MalformedRow(
            f"{path}: line {lineno}: root node {node_id!r} must not have a parent"
        )
    if level > 1 and not parent_id:
        raise MalformedRow(
            f"{path}: line {lineno}: non-root node {node_id!r} needs a parent"
        )
    return TaxonomyNode(
        node_id=node_id,
        level=level,
        parent_id=parent_id or None,
        code_type=code_type,
        description=description,
    )


def _validate_structure(path, tax: Taxonomy, lines: dict[str, int]) -> None:
    for node in tax.nodes.values():
        if node.parent_id is not None and node.parent_id not in tax.nodes:
            raise MalformedRow(
                f"{path}: line {lines[node.node_id]}: "
                f"unknown parent {node.parent_id!r}"
            )
    # Walk parent chains before checking level arithmetic so that a loop is
    # reported as a cycle, not as a level gap.
    for node in tax.nodes.values():
        seen = {node.node_id}
        cur = node
        while cur.parent_id is not None:
            if cur.parent_id in seen:
                raise CycleDetected(
                    f"{path}: cycle through {cur.parent_id!r}"
                )
            cur = tax.nodes[cur.parent_id]
            seen.add(cur.node_id)
    for node in tax.nodes.values():
        if node.parent_id is None:
            continue
        parent = tax.nodes[node.parent_id]
        if parent.level != node.level - 1:
            raise LevelGap(
                f"{path}: line {lines[node.node_id]}: node {node.node_id!r} at "
                f"level {node.level} has parent at level {parent.level}"
            )
