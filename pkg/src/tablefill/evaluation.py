"""Micro-averaged scoring with per-pattern breakdowns, plus size and speed measurements."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .codec import decode_tables
from .core import Triple, canonical_triple_set
from .data import BUCKETS, CATEGORIES, Dataset, Vocab, batchify, classify_sentence

METRICS_SCHEMA = "tablefill-metrics"
METRICS_SCHEMA_VERSION = 1


def match_exact(pred: Triple, gold: Triple) -> bool:
    return pred == gold


def match_partial(pred: Triple, gold: Triple) -> bool:
    """Relation and the head token of both entities agree."""
    return (pred.relation == gold.relation and pred.subject.start == gold.subject.start
            and pred.object.start == gold.object.start)


MATCHERS: dict[str, Callable[[Triple, Triple], bool]] = {"exact": match_exact, "partial": match_partial}


@dataclass(frozen=True)
class Metrics:
    tp: int
    pred: int
    gold: int

    @property
    def precision(self) -> float:
        return self.tp / self.pred if self.pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.pred + other.pred, self.gold + other.gold)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "pred": self.pred, "gold": self.gold,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def sentence_counts(pred: Iterable[Triple], gold: Iterable[Triple], mode: str = "exact") -> Metrics:
    """Greedy one-to-one matching within one sentence, both sides in canonical order."""
    match = MATCHERS[mode]
    pred = canonical_triple_set(pred)
    gold = canonical_triple_set(gold)
    used = [False] * len(gold)
    tp = 0
    for p in pred:
        for g_idx, g in enumerate(gold):
            if not used[g_idx] and match(p, g):
                used[g_idx] = True
                tp += 1
                break
    return Metrics(tp, len(pred), len(gold))


def micro_prf(predictions: Sequence[Iterable[Triple]], golds: Sequence[Iterable[Triple]],
              mode: str = "exact") -> Metrics:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} prediction sets vs {len(golds)} gold sets")
    total = Metrics(0, 0, 0)
    for p, g in zip(predictions, golds):
        total = total + sentence_counts(p, g, mode)
    return total


def breakdown(predictions, golds, categories=None, mode: str = "exact") -> dict:
    """Scores per overlap category and per triple-count bucket.

    ``categories`` defaults to classifying each gold set.  Categories and
    buckets with no sentences are left out.
    """
    if categories is None:
        tags = [classify_sentence(g) for g in golds]
    else:
        tags = [(frozenset(c), classify_sentence(g)[1]) for c, g in zip(categories, golds)]
    per_cat, per_bucket = {}, {}
    for name in CATEGORIES:
        idx = [i for i, (c, _) in enumerate(tags) if name in c]
        if idx:
            per_cat[name] = micro_prf([predictions[i] for i in idx], [golds[i] for i in idx], mode)
    for name in BUCKETS:
        idx = [i for i, (_, b) in enumerate(tags) if b == name]
        if idx:
            per_bucket[name] = micro_prf([predictions[i] for i in idx], [golds[i] for i in idx], mode)
    return {"category": per_cat, "bucket": per_bucket}


# ---------------------------------------------------------------- running a model

def predict(model, dataset: Dataset, vocab: Vocab, batch_size: int = 6,
            reverse_search: bool = True, N: int | None = None) -> list[list[Triple]]:
    """Decoded triples for every sentence, in dataset order."""
    preds: list[list[Triple]] = [[] for _ in range(len(dataset))]
    for batch in batchify(dataset, batch_size, vocab, model.config.max_len):
        tables = model.predict_tables(batch.ids, batch.mask, N)
        for i, table in zip(batch.indices, tables):
            preds[i] = decode_tables(table, reverse_search=reverse_search)
    return preds


def evaluate(model, dataset: Dataset, vocab: Vocab, batch_size: int = 6,
             reverse_search: bool = True, mode: str = "exact") -> Metrics:
    preds = predict(model, dataset, vocab, batch_size, reverse_search)
    return micro_prf(preds, [ex.triples for ex in dataset], mode)


def count_params(model) -> int:
    """Number of trainable scalars."""
    return int(sum(p.size for p in model.parameters()))


def time_inference(model, dataset: Dataset, vocab: Vocab, batch_size: int = 6,
                   passes: int = 3, warmup: int = 1) -> float:
    """Mean wall-clock milliseconds per sentence, table filling plus decoding."""
    batches = batchify(dataset, batch_size, vocab, model.config.max_len)
    for _ in range(warmup):
        for b in batches:
            for t in model.predict_tables(b.ids, b.mask):
                decode_tables(t)
    start = time.perf_counter()
    for _ in range(passes):
        for b in batches:
            for t in model.predict_tables(b.ids, b.mask):
                decode_tables(t)
    elapsed = time.perf_counter() - start
    return 1000.0 * elapsed / (passes * max(len(dataset), 1))


def metrics_report(predictions, golds, categories=None, params: int | None = None,
                   timing: dict | None = None, run: dict | None = None) -> dict:
    """JSON-ready metrics document.

    Keys: ``schema``, ``schema_version``, ``run`` (provenance), ``exact`` and
    ``partial`` (overall counts and P/R/F1), ``per_category`` and
    ``per_bucket`` (exact match), ``params``, ``timing_ms_per_sample``.
    """
    parts = breakdown(predictions, golds, categories, "exact")
    return {
        "schema": METRICS_SCHEMA,
        "schema_version": METRICS_SCHEMA_VERSION,
        "run": run or {},
        "exact": micro_prf(predictions, golds, "exact").to_dict(),
        "partial": micro_prf(predictions, golds, "partial").to_dict(),
        "per_category": {k: v.to_dict() for k, v in parts["category"].items()},
        "per_bucket": {k: v.to_dict() for k, v in parts["bucket"].items()},
        "params": params,
        "timing_ms_per_sample": timing or {},
    }


__all__ = [
    "METRICS_SCHEMA", "METRICS_SCHEMA_VERSION", "match_exact", "match_partial", "Metrics",
    "sentence_counts", "micro_prf", "breakdown", "predict", "evaluate", "count_params",
    "time_inference", "metrics_report",
]
