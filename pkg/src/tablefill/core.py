"""Domain types shared across the package.

Token indices are 0-based and spans are inclusive on both ends everywhere.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_MAX_LEN = 100


class ValidationError(ValueError):
    """Raised when a domain object violates its invariants."""


class Label(enum.IntEnum):
    """Table cell labels.

    The first character gives the subject multiplicity (M multi-token, S
    single-token), the second the object multiplicity, the third whether the
    cell pairs the two head tokens (H) or the two tail tokens (T). ``SS``
    marks a pair of single-token entities. ``NA`` is code 0 so that a
    zero-filled array is an empty table.
    """

    NA = 0
    MMH = 1
    MMT = 2
    MSH = 3
    MST = 4
    SMH = 5
    SMT = 6
    SS = 7

    @property
    def text(self) -> str:
        return "N/A" if self is Label.NA else self.name

    @classmethod
    def from_text(cls, text: str) -> "Label":
        if text == "N/A":
            return cls.NA
        return cls[text]

    @property
    def is_head(self) -> bool:
        return self in _HEADS

    @property
    def is_tail(self) -> bool:
        return self in _TAILS

    @property
    def subject_multi(self) -> bool:
        return self.name[0] == "M"

    @property
    def object_multi(self) -> bool:
        return self.name[1] == "M"


NUM_LABELS = len(Label)
_HEADS = frozenset({Label.MMH, Label.MSH, Label.SMH})
_TAILS = frozenset({Label.MMT, Label.MST, Label.SMT})


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int

    def __post_init__(self) -> None:
        if not (isinstance(self.start, int) and isinstance(self.end, int)):
            raise ValidationError(f"span bounds must be ints, got {self!r}")
        if self.start < 0 or self.end < self.start:
            raise ValidationError(f"invalid span {self!r}")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    @property
    def is_single(self) -> bool:
        return self.start == self.end

    def check(self, n: int) -> None:
        if self.end >= n:
            raise ValidationError(f"span {self!r} out of range for sentence length {n}")

    def overlaps(self, other: "EntitySpan") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class Triple:
    subject: EntitySpan
    relation: int
    object: EntitySpan

    @classmethod
    def of(cls, s_start: int, s_end: int, relation: int, o_start: int, o_end: int) -> "Triple":
        return cls(EntitySpan(s_start, s_end), relation, EntitySpan(o_start, o_end))

    @property
    def key(self) -> tuple[int, int, int, int, int]:
        """Canonical sort key: relation first, then subject, then object."""
        return (self.relation, self.subject.start, self.subject.end,
                self.object.start, self.object.end)

    def __lt__(self, other: "Triple") -> bool:
        return self.key < other.key

    def check(self, n: int, num_relations: int | None = None) -> None:
        try:
            self.subject.check(n)
            self.object.check(n)
        except ValidationError as exc:
            raise ValidationError(f"invalid triple {self!r}: {exc}") from None
        if self.relation < 0 or (num_relations is not None and self.relation >= num_relations):
            raise ValidationError(f"invalid triple {self!r}: relation id out of range")


def canonical_triple_set(
    triples: Iterable[Triple], n: int | None = None, num_relations: int | None = None
) -> list[Triple]:
    """Sort triples canonically and drop duplicates.

    If ``n`` (and optionally ``num_relations``) is given each triple is
    validated against it first.
    """
    triples = list(triples)
    if n is not None:
        for t in triples:
            t.check(n, num_relations)
    return sorted(set(triples), key=lambda t: t.key)


@dataclass(frozen=True)
class RelationSchema:
    names: tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValidationError(f"relation names must be distinct: {names}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "index", {name: i for i, name in enumerate(names)})

    def __len__(self) -> int:
        return len(self.names)

    def id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise ValidationError(f"unknown relation {name!r}") from None

    def name(self, rel_id: int) -> str:
        return self.names[rel_id]


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[str, ...]

    def __init__(self, id: str, tokens: Sequence[str], max_len: int | None = DEFAULT_MAX_LEN):
        tokens = tuple(tokens)
        if not tokens:
            raise ValidationError(f"sentence {id!r} has no tokens")
        if max_len is not None and len(tokens) > max_len:
            raise ValidationError(f"sentence {id!r} has {len(tokens)} tokens > max_len={max_len}")
        if any(not isinstance(t, str) or not t for t in tokens):
            raise ValidationError(f"sentence {id!r} contains an empty token")
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self, span: EntitySpan) -> str:
        return " ".join(self.tokens[span.start:span.end + 1])


class LabelTable:
    """Per-relation n x n label grids, stored as one int8 array ``[R, n, n]``.

    ``grid[r, i, j]`` is the label of subject token i and object token j for
    relation r.
    """

    __slots__ = ("grid",)

    def __init__(self, grid):
        grid = np.asarray(grid, dtype=np.int8)
        if grid.ndim != 3 or grid.shape[1] != grid.shape[2]:
            raise ValidationError(f"label grid must have shape [R, n, n], got {grid.shape}")
        if grid.size and (grid.min() < 0 or grid.max() >= NUM_LABELS):
            raise ValidationError("label codes out of range")
        grid.setflags(write=False)
        self.grid = grid

    @classmethod
    def empty(cls, num_relations: int, n: int) -> "LabelTable":
        return cls(np.zeros((num_relations, n, n), dtype=np.int8))

    @property
    def num_relations(self) -> int:
        return self.grid.shape[0]

    @property
    def n(self) -> int:
        return self.grid.shape[1]

    def __getitem__(self, idx: tuple[int, int, int]) -> Label:
        return Label(int(self.grid[idx]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelTable):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool((self.grid == other.grid).all())

    def __repr__(self) -> str:
        return f"LabelTable(R={self.num_relations}, n={self.n}, filled={int((self.grid != 0).sum())})"
