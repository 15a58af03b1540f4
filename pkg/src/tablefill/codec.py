"""Conversion between triple sets and per-relation label tables."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .core import (
    Label,
    LabelTable,
    RelationSchema,
    Triple,
    ValidationError,
    canonical_triple_set,
)


class Conflict(NamedTuple):
    relation: int
    row: int
    col: int
    existing: Label
    attempted: Label
    triple: Triple


@dataclass
class ConflictReport:
    conflicts: list[Conflict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.conflicts)

    def __bool__(self) -> bool:
        return bool(self.conflicts)

    def __iter__(self):
        return iter(self.conflicts)

    @property
    def triples(self) -> list[Triple]:
        """Triples that lost at least one cell to an earlier writer."""
        return canonical_triple_set(c.triple for c in self.conflicts)


def triple_cells(triple: Triple) -> list[tuple[int, int, Label]]:
    """The (row, col, label) cells a triple writes into its relation table."""
    s, o = triple.subject, triple.object
    if s.is_single and o.is_single:
        return [(s.start, o.start, Label.SS)]
    if not s.is_single and not o.is_single:
        return [(s.start, o.start, Label.MMH), (s.end, o.end, Label.MMT)]
    if not s.is_single:
        return [(s.start, o.start, Label.MSH), (s.end, o.start, Label.MST)]
    return [(s.start, o.start, Label.SMH), (s.start, o.end, Label.SMT)]


def _num_relations(schema: RelationSchema | int) -> int:
    return schema if isinstance(schema, int) else len(schema)


def encode_triples(
    n: int, triples: Iterable[Triple], schema: RelationSchema | int
) -> tuple[LabelTable, ConflictReport]:
    """Fill gold label tables for a sentence of length ``n``.

    Triples are written in canonical order; when a cell already holds a
    different non-N/A label the first write is kept and the collision is
    recorded in the returned report.
    """
    num_rel = _num_relations(schema)
    ordered = canonical_triple_set(triples, n, num_rel)
    grid = np.zeros((num_rel, n, n), dtype=np.int8)
    report = ConflictReport()
    for t in ordered:
        for row, col, label in triple_cells(t):
            existing = grid[t.relation, row, col]
            if existing == Label.NA:
                grid[t.relation, row, col] = label
            elif existing != label:
                report.conflicts.append(
                    Conflict(t.relation, row, col, Label(int(existing)), label, t))
    return LabelTable(grid), report


def labels_match(head: Label, tail: Label) -> bool:
    """Whether a head label and a tail label agree on both multiplicities."""
    head, tail = Label(head), Label(tail)
    if not head.is_head or not tail.is_tail:
        raise ValueError(f"labels_match expects (head, tail) labels, got ({head.text}, {tail.text})")
    return head.name[:2] == tail.name[:2]


def spans_consistent(head_label: Label, i: int, j: int, k: int, m: int) -> bool:
    """Check candidate span lengths ``k-i+1`` and ``m-j+1`` against the M/S characters."""
    head_label = Label(head_label)
    subj_len, obj_len = k - i + 1, m - j + 1
    if subj_len < 1 or obj_len < 1:
        return False
    subj_ok = subj_len >= 2 if head_label.subject_multi else subj_len == 1
    obj_ok = obj_len >= 2 if head_label.object_multi else obj_len == 1
    return subj_ok and obj_ok


def _cells(grid: np.ndarray, wanted: frozenset[int]) -> list[tuple[int, int, Label]]:
    rows, cols = np.nonzero(np.isin(grid, list(wanted)))
    return [(int(i), int(j), Label(int(grid[i, j]))) for i, j in zip(rows, cols)]


_HEAD_CODES = frozenset({int(Label.MMH), int(Label.MSH), int(Label.SMH)})
_TAIL_CODES = frozenset({int(Label.MMT), int(Label.MST), int(Label.SMT)})


def forward_search(heads, tails):
    """Pair each head cell with its closest matching tail cell below-right of it.

    Closeness is the L1 grid distance; ties go to the smaller row, then the
    smaller column.
    """
    pairs = []
    for i, j, hl in heads:
        best = None
        for k, m, tl in tails:
            if k < i or m < j or not labels_match(hl, tl) or not spans_consistent(hl, i, j, k, m):
                continue
            key = (k - i + m - j, k, m)
            if best is None or key < best:
                best = key
        if best is not None:
            pairs.append((i, j, best[1], best[2]))
    return pairs


def reverse_search(heads, tails):
    """Pair each tail cell with its closest matching head cell above-left of it.

    Ties go to the larger row, then the larger column.
    """
    pairs = []
    for k, m, tl in tails:
        best = None
        for i, j, hl in heads:
            if i > k or j > m or not labels_match(hl, tl) or not spans_consistent(hl, i, j, k, m):
                continue
            key = (k - i + m - j, -i, -j)
            if best is None or key < best:
                best = key
        if best is not None:
            pairs.append((-best[1], -best[2], k, m))
    return pairs


def decode_relation(grid: np.ndarray, relation: int, reverse: bool = True) -> list[Triple]:
    """Decode one relation's ``[n, n]`` label grid into triples."""
    heads = _cells(grid, _HEAD_CODES)
    tails = _cells(grid, _TAIL_CODES)
    found = [Triple.of(i, k, relation, j, m) for i, j, k, m in forward_search(heads, tails)]
    if reverse:
        found += [Triple.of(i, k, relation, j, m) for i, j, k, m in reverse_search(heads, tails)]
    rows, cols = np.nonzero(grid == Label.SS)
    found += [Triple.of(int(i), int(i), relation, int(j), int(j)) for i, j in zip(rows, cols)]
    return found


def decode_tables(
    tables: LabelTable, schema: RelationSchema | int | None = None, reverse_search: bool = True
) -> list[Triple]:
    """Extract the canonical triple set encoded by filled label tables.

    Runs the forward, reverse (unless disabled) and single-token routes for
    every relation. Head or tail cells with no partner are dropped.
    """
    if schema is not None and _num_relations(schema) != tables.num_relations:
        raise ValidationError(
            f"table has {tables.num_relations} relations, schema has {_num_relations(schema)}")
    found: list[Triple] = []
    for r in range(tables.num_relations):
        found += decode_relation(tables.grid[r], r, reverse=reverse_search)
    return canonical_triple_set(found)


def cell_count_ours(n: int, num_relations: int) -> int:
    """Number of cells filled by the per-relation n x n strategy."""
    return n * n * num_relations


def cell_count_baseline(n: int, num_relations: int) -> int:
    """Cells filled by the handshaking (upper-triangle, 2|R|+1 matrix) strategy."""
    return (2 * num_relations + 1) * (n * n + n) // 2


__all__ = [
    "Conflict", "ConflictReport", "triple_cells", "encode_triples", "labels_match",
    "spans_consistent", "forward_search", "reverse_search", "decode_relation", "decode_tables",
    "cell_count_ours", "cell_count_baseline",
]
