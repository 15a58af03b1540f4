"""Datasets: JSON ingestion, vocabulary, batching, overlap categories, synthetic corpora.

On disk a dataset is JSON (an array, or one object per line) of records::

    {"text": "a b c", "triple_list": [["a", "r1", "c"]]}

Text is split on whitespace and every entity string is located as a token
subsequence (first occurrence wins).
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import encode_triples
from .core import (
    DEFAULT_MAX_LEN,
    EntitySpan,
    RelationSchema,
    Sentence,
    Triple,
    canonical_triple_set,
)

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
CATEGORIES = ("Normal", "EPO", "SEO")
BUCKETS = ("0", "1", "2", "3", "4", ">=5")


class LoadError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    sentence: Sentence
    triples: tuple[Triple, ...]

    @property
    def n(self) -> int:
        return len(self.sentence)


@dataclass
class Dataset:
    examples: list[Example]
    schema: RelationSchema
    split: str = "train"
    dropped: int = 0
    ambiguous: int = 0

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def subset(self, indices: Iterable[int], split: str | None = None) -> "Dataset":
        return Dataset([self.examples[i] for i in indices], self.schema, split or self.split)

    @property
    def categories(self) -> list[frozenset[str]]:
        return [classify_sentence(ex.triples)[0] for ex in self.examples]


# ---------------------------------------------------------------- categories

def classify_sentence(triples: Iterable[Triple]) -> tuple[frozenset[str], str]:
    """Overlap categories of a sentence and its triple-count bucket.

    EPO: two triples relate the same pair of entity spans.  SEO: two triples
    share exactly one entity span.  Normal: neither.  A pair sharing both
    spans counts as EPO only.
    """
    ts = canonical_triple_set(triples)
    cats = set()
    ents = [frozenset((t.subject, t.object)) for t in ts]
    for a in range(len(ts)):
        for b in range(a + 1, len(ts)):
            shared = len(ents[a] & ents[b])
            if ents[a] == ents[b]:
                cats.add("EPO")
            elif shared == 1:
                cats.add("SEO")
    if not cats:
        cats.add("Normal")
    k = len(ts)
    bucket = "0" if k == 0 else (str(k) if k < 5 else ">=5")
    return frozenset(cats), bucket


# ---------------------------------------------------------------- loading

def locate(tokens: Sequence[str], phrase: Sequence[str]) -> list[int]:
    """All start offsets at which ``phrase`` occurs as a token subsequence."""
    k = len(phrase)
    if k == 0:
        return []
    return [i for i in range(len(tokens) - k + 1) if tuple(tokens[i:i + k]) == tuple(phrase)]


def _read_records(path: Path) -> list[tuple[int, dict]]:
    text = path.read_text()
    if text.lstrip().startswith("["):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LoadError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from None
        return [(i + 1, rec) for i, rec in enumerate(doc)]
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise LoadError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
    return records


def load_dataset(path, schema: RelationSchema | None = None, split: str = "train") -> Dataset:
    """Read a dataset file.

    Relations are registered in first-seen order unless ``schema`` is given,
    in which case an unknown relation raises :class:`SchemaError`.  Triples
    whose entity strings cannot be found are dropped and counted in
    ``Dataset.dropped``; strings found more than once resolve to the first
    occurrence and are counted in ``Dataset.ambiguous``.
    """
    path = Path(path)
    names: list[str] = list(schema.names) if schema else []
    index = {n: i for i, n in enumerate(names)}
    raw = []
    dropped = ambiguous = 0
    for lineno, rec in _read_records(path):
        if not isinstance(rec, dict) or "text" not in rec or "triple_list" not in rec:
            raise LoadError(f"{path}:{lineno}: record needs 'text' and 'triple_list'")
        tokens = rec["text"].split()
        found = []
        for item in rec["triple_list"]:
            if len(item) != 3:
                raise LoadError(f"{path}:{lineno}: triple must be [subject, relation, object]")
            subj, rel, obj = item
            if rel not in index:
                if schema is not None:
                    raise SchemaError(f"{path}:{lineno}: relation {rel!r} not in schema")
                index[rel] = len(names)
                names.append(rel)
            spans = []
            for phrase in (subj.split(), obj.split()):
                hits = locate(tokens, phrase)
                if len(hits) > 1:
                    ambiguous += 1
                spans.append(EntitySpan(hits[0], hits[0] + len(phrase) - 1) if hits else None)
            if None in spans:
                dropped += 1
                continue
            found.append(Triple(spans[0], index[rel], spans[1]))
        sid = str(rec.get("id", f"{split}-{len(raw)}"))
        raw.append(Example(Sentence(sid, tokens, max_len=None), tuple(canonical_triple_set(found))))
    if dropped:
        log.warning("%s: dropped %d triples with unlocatable entities", path, dropped)
    return Dataset(raw, schema or RelationSchema(names), split, dropped, ambiguous)


def example_record(ex: Example, schema: RelationSchema, with_spans: bool = False) -> dict:
    rec = {
        "text": " ".join(ex.sentence.tokens),
        "triple_list": [[ex.sentence.text(t.subject), schema.name(t.relation), ex.sentence.text(t.object)]
                        for t in ex.triples],
    }
    if with_spans:
        rec["spans"] = [[t.subject.start, t.subject.end, schema.name(t.relation), t.object.start, t.object.end]
                        for t in ex.triples]
    return rec


def save_dataset(dataset: Dataset, path) -> None:
    """Write one JSON record per line."""
    lines = [json.dumps(example_record(ex, dataset.schema)) for ex in dataset.examples]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- vocabulary

class Vocab:
    """Token ids with ``PAD=0`` and ``UNK=1`` reserved."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = ["<pad>", "<unk>"] + [t for t in tokens if t not in ("<pad>", "<unk>")]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, datasets: Iterable[Dataset]) -> "Vocab":
        counts = Counter(tok for ds in datasets for ex in ds for tok in ex.sentence.tokens)
        return cls(sorted(counts, key=lambda t: (-counts[t], t)))

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def to_list(self) -> list[str]:
        return self.itos[2:]


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    ids: np.ndarray          # [B, n] int64, PAD beyond each length
    mask: np.ndarray         # [B, n] bool
    gold: np.ndarray         # [B, R, n, n] int8 label codes, N/A on padding
    examples: list[Example]  # after truncation
    indices: list[int]       # positions in the source dataset
    conflicts: int = 0

    def __len__(self) -> int:
        return len(self.examples)


def truncate(ex: Example, max_len: int) -> tuple[Example, int]:
    """Cut an example to ``max_len`` tokens, dropping triples that no longer fit."""
    if ex.n <= max_len:
        return ex, 0
    kept = tuple(t for t in ex.triples if t.subject.end < max_len and t.object.end < max_len)
    sent = Sentence(ex.sentence.id, ex.sentence.tokens[:max_len], max_len=max_len)
    return Example(sent, kept), len(ex.triples) - len(kept)


def batchify(dataset: Dataset, batch_size: int, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN,
             shuffle_seed: int | None = None) -> list[Batch]:
    """Pad examples into batches with masks and gold tables.

    Order follows the dataset unless ``shuffle_seed`` is given, in which case
    a seeded permutation is used.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.arange(len(dataset))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(dataset))
    num_rel = len(dataset.schema)
    batches = []
    cut = 0
    for start in range(0, len(order), batch_size):
        idx = [int(i) for i in order[start:start + batch_size]]
        exs = []
        for i in idx:
            ex, lost = truncate(dataset[i], max_len)
            if ex is not dataset[i]:
                cut += 1
                if lost:
                    log.warning("sentence %s truncated to %d tokens, %d triples dropped",
                                ex.sentence.id, max_len, lost)
            exs.append(ex)
        n = max(ex.n for ex in exs)
        ids = np.full((len(exs), n), PAD, dtype=np.int64)
        mask = np.zeros((len(exs), n), dtype=bool)
        gold = np.zeros((len(exs), num_rel, n, n), dtype=np.int8)
        conflicts = 0
        for b, ex in enumerate(exs):
            ids[b, :ex.n] = vocab.encode(ex.sentence.tokens)
            mask[b, :ex.n] = True
            table, report = encode_triples(ex.n, ex.triples, num_rel)
            gold[b, :, :ex.n, :ex.n] = table.grid
            conflicts += len(report)
        batches.append(Batch(ids, mask, gold, exs, idx, conflicts))
    if cut:
        log.warning("%d sentences longer than max_len=%d were truncated", cut, max_len)
    return batches


# ---------------------------------------------------------------- synthetic corpora

@dataclass
class SynthConfig:
    num_sentences: int = 600
    vocab_size: int = 200
    num_relations: int = 5
    max_entities: int = 6
    max_clauses: int = 3
    p_epo: float = 0.2
    p_seo: float = 0.3
    p_nest: float = 0.15
    max_entity_len: int = 3
    single_token_entities: bool = False
    seed: int = 7

    def validate(self) -> None:
        for name in ("p_epo", "p_seo", "p_nest"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} is not a probability")
        if self.num_sentences < 0 or self.num_relations < 1 or self.max_clauses < 1:
            raise ConfigError("num_sentences >= 0, num_relations >= 1 and max_clauses >= 1 required")
        if self.max_entity_len < 1:
            raise ConfigError("max_entity_len must be at least 1")
        if self.max_entities < 3:
            raise ConfigError("max_entities must be at least 3 (overlap patterns need three entities)")
        if self.p_nest > 0 and (self.max_entity_len < 2 or self.single_token_entities):
            raise ConfigError("nesting needs multi-token entities (max_entity_len >= 2)")
        needed = len(_FUNCTION_WORDS) + 2 * self.num_relations + _NUM_SUFFIX + self.min_entity_words
        if self.vocab_size < needed:
            raise ConfigError(f"vocab_size={self.vocab_size} too small; this config needs >= {needed}")

    @property
    def min_entity_words(self) -> int:
        # every entity in a sentence uses fresh words
        return self.max_entities * (1 if self.single_token_entities else self.max_entity_len) + 1

    def to_dict(self) -> dict:
        return asdict(self)


_FUNCTION_WORDS = (",", ".", "and", "while", "also", "then", "which", "the", "of", "a")
_NUM_SUFFIX = 10


@dataclass
class _Lexicon:
    triggers: list[list[str]]
    fillers: list[str]
    suffixes: list[str]
    entity_words: list[str]

    @classmethod
    def build(cls, cfg: SynthConfig) -> "_Lexicon":
        triggers = [[f"rel{r}{c}" for c in "ab"] for r in range(cfg.num_relations)]
        used = len(_FUNCTION_WORDS) + 2 * cfg.num_relations
        rest = cfg.vocab_size - used - _NUM_SUFFIX
        n_fill = max(0, min(20, rest - cfg.min_entity_words))
        fillers = [f"w{i}" for i in range(n_fill)]
        suffixes = [f"x{i}" for i in range(_NUM_SUFFIX)]
        entity_words = [f"e{i}" for i in range(rest - n_fill)]
        return cls(triggers, fillers, suffixes, entity_words)


class _SentenceBuilder:
    def __init__(self, rng: np.random.Generator, lex: _Lexicon, cfg: SynthConfig):
        self.rng, self.lex, self.cfg = rng, lex, cfg
        self.tokens: list[str] = []
        self.triples: list[tuple[EntitySpan, int, EntitySpan]] = []
        self.free = list(rng.permutation(len(lex.entity_words)))
        self.num_entities = 0

    def word(self, w: str) -> None:
        self.tokens.append(w)

    def maybe_filler(self, p: float = 0.3) -> None:
        if self.lex.fillers and self.rng.random() < p:
            self.word(self.lex.fillers[self.rng.integers(len(self.lex.fillers))])

    def trigger(self, r: int) -> None:
        opts = self.lex.triggers[r]
        self.word(opts[self.rng.integers(len(opts))])

    def entity(self, min_len: int = 1) -> EntitySpan:
        cfg = self.cfg
        length = 1 if cfg.single_token_entities else int(self.rng.integers(min_len, cfg.max_entity_len + 1))
        start = len(self.tokens)
        for _ in range(length):
            self.word(self.lex.entity_words[self.free.pop()])
        self.num_entities += 1
        return EntitySpan(start, start + length - 1)

    def relation(self, exclude: int | None = None) -> int:
        r = int(self.rng.integers(self.cfg.num_relations))
        if exclude is not None and self.cfg.num_relations > 1:
            while r == exclude:
                r = int(self.rng.integers(self.cfg.num_relations))
        return r

    def add(self, s: EntitySpan, r: int, o: EntitySpan) -> None:
        self.triples.append((s, r, o))

    # clause templates ------------------------------------------------

    def basic(self, nest: bool = False) -> None:
        self.maybe_filler()
        s = self.entity()
        r = self.relation()
        self.trigger(r)
        self.maybe_filler(0.2)
        o = self.entity(min_len=2 if nest else 1)
        self.add(s, r, o)
        if nest:
            # "New York" / "New York City": prefix and prefix + suffix word both hold
            self.word(self.lex.suffixes[self.rng.integers(len(self.lex.suffixes))])
            self.add(s, r, EntitySpan(o.start, o.end + 1))

    def epo(self) -> None:
        self.maybe_filler()
        s = self.entity()
        r1 = self.relation()
        r2 = self.relation(exclude=r1)
        self.trigger(r1)
        self.word("and")
        self.trigger(r2)
        o = self.entity()
        self.add(s, r1, o)
        self.add(s, r2, o)

    def seo(self) -> None:
        self.maybe_filler()
        s = self.entity()
        r1 = self.relation()
        self.trigger(r1)
        o1 = self.entity()
        r2 = self.relation()
        if self.rng.random() < 0.5:
            self.word("also")
            self.trigger(r2)
            o2 = self.entity()
            self.add(s, r1, o1)
            self.add(s, r2, o2)
        else:
            self.word("which")
            self.trigger(r2)
            o2 = self.entity()
            self.add(s, r1, o1)
            self.add(o1, r2, o2)


def generate_synthetic(cfg: SynthConfig, split: str = "train") -> Dataset:
    """Seeded corpus of templated sentences with controllable overlap patterns.

    Each sentence has up to ``max_clauses`` clauses.  With probability
    ``p_epo`` one clause relates one entity pair by two relations, with
    ``p_seo`` one clause shares an entity between two triples, and with
    ``p_nest`` one object is followed by a suffix word so that both the
    object and its one-token extension are gold objects.  Entity words are
    never reused within a sentence, so surface strings locate uniquely.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lex = _Lexicon.build(cfg)
    schema = RelationSchema([f"rel{r}" for r in range(cfg.num_relations)])
    examples = []
    joiners = (",", "and", "while", "then")
    for k in range(cfg.num_sentences):
        sb = _SentenceBuilder(rng, lex, cfg)
        kinds = []
        if rng.random() < cfg.p_epo:
            kinds.append("epo")
        if rng.random() < cfg.p_seo:
            kinds.append("seo")
        if rng.random() < cfg.p_nest:
            kinds.append("nest")
        extra = int(rng.integers(0, cfg.max_clauses)) if not kinds else int(rng.integers(0, 2))
        kinds += ["basic"] * (1 + extra if not kinds else extra)
        # entity budget goes to the requested patterns first, then to plain clauses
        budget, kept = cfg.max_entities, []
        for kind in sorted(kinds, key=("nest", "epo", "seo", "basic").index):
            need = 3 if kind == "seo" else 2
            if budget >= need:
                kept.append(kind)
                budget -= need
        kinds = [kept[i] for i in rng.permutation(len(kept))]
        for kind in kinds:
            if sb.tokens:
                sb.word(joiners[rng.integers(len(joiners))])
            if kind == "nest":
                sb.basic(nest=True)
            else:
                getattr(sb, kind)()
        sb.word(".")
        triples = canonical_triple_set(Triple(s, r, o) for s, r, o in sb.triples)
        examples.append(Example(Sentence(f"{split}-{k}", sb.tokens, max_len=None), tuple(triples)))
    return Dataset(examples, schema, split)


def split_dataset(dataset: Dataset, sizes: Sequence[int], names: Sequence[str]) -> list[Dataset]:
    """Consecutive, non-overlapping splits (the generator is already random)."""
    if sum(sizes) > len(dataset):
        raise ValueError(f"requested {sum(sizes)} examples from a dataset of {len(dataset)}")
    out, start = [], 0
    for size, name in zip(sizes, names):
        out.append(dataset.subset(range(start, start + size), split=name))
        start += size
    return out


def save_synthetic(dataset: Dataset, path, cfg: SynthConfig) -> Path:
    """Write the dataset plus a ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    save_dataset(dataset, path)
    sidecar = path.with_name(path.name + ".meta.json")
    cats = [classify_sentence(ex.triples) for ex in dataset]
    sidecar.write_text(json.dumps({
        "config": cfg.to_dict(),
        "relations": list(dataset.schema.names),
        "categories": [sorted(c) for c, _ in cats],
        "buckets": [b for _, b in cats],
    }, indent=1))
    return sidecar


__all__ = [
    "PAD", "UNK", "CATEGORIES", "BUCKETS", "LoadError", "SchemaError", "ConfigError", "Example",
    "Dataset", "classify_sentence", "locate", "load_dataset", "example_record", "save_dataset",
    "Vocab", "Batch", "truncate", "batchify", "SynthConfig", "generate_synthetic", "split_dataset",
    "save_synthetic",
]
