import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from instances import random_instance
from tablefill.core import Triple
from tablefill.data import SynthConfig, Vocab, generate_synthetic
from tablefill.evaluation import (
    METRICS_SCHEMA, Metrics, breakdown, count_params, match_exact, match_partial, metrics_report,
    micro_prf, predict, time_inference,
)
from tablefill.model import ModelConfig, TableFillingModel

A = Triple.of(0, 1, 0, 3, 3)


def test_match_examples():
    assert match_exact(A, A) and match_partial(A, A)
    longer = Triple.of(0, 2, 0, 3, 3)
    assert match_partial(longer, A) and not match_exact(longer, A)
    other = Triple.of(0, 1, 1, 3, 3)
    assert not match_partial(other, A) and not match_exact(other, A)


def test_metrics_arithmetic():
    m = Metrics(1, 2, 4)
    assert (m.precision, m.recall) == (0.5, 0.25) and m.f1 == pytest.approx(1 / 3)
    assert Metrics(0, 0, 3).to_dict()["f1"] == 0.0 and Metrics(0, 0, 0).precision == 0.0


def test_micro_prf_examples():
    golds = [[A, Triple.of(5, 5, 1, 6, 6)], [Triple.of(2, 2, 0, 4, 4)]]
    assert micro_prf(golds, golds).f1 == 1.0
    empty = micro_prf([[], []], golds)
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        micro_prf([[]], golds)


def test_micro_prf_aggregates_before_dividing():
    golds = [[A], [Triple.of(i, i, 0, 9, 9) for i in range(3)]]
    preds = [[A, Triple.of(7, 7, 0, 8, 8)], []]
    m = micro_prf(preds, golds)
    assert (m.tp, m.pred, m.gold) == (1, 2, 4)


def test_duplicates_and_one_to_one():
    m = micro_prf([[A, A]], [[A]])
    assert (m.tp, m.pred) == (1, 1)
    # two predictions sharing heads with one gold: only one may claim it
    p1, p2 = Triple.of(0, 1, 0, 3, 3), Triple.of(0, 2, 0, 3, 4)
    m = micro_prf([[p1, p2]], [[Triple.of(0, 0, 0, 3, 3)]], mode="partial")
    assert (m.tp, m.pred, m.gold) == (1, 2, 1)


def _corpus(seed, nested):
    rng = np.random.default_rng(seed)
    golds = [sorted(random_instance(rng, nested=nested)[2]) for _ in range(8)]
    preds = []
    for g in golds:
        keep = [t for t in g if rng.random() < 0.7]
        noise = [Triple.of(t.subject.start, t.subject.start, t.relation, t.object.start, t.object.end)
                 for t in g if rng.random() < 0.3]
        preds.append(keep + noise)
    return preds, golds


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.booleans())
def test_partial_never_below_exact(seed, nested):
    preds, golds = _corpus(seed, nested)
    assert micro_prf(preds, golds, "partial").f1 >= micro_prf(preds, golds, "exact").f1


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.randoms(use_true_random=False))
def test_permutation_invariance(seed, rnd):
    preds, golds = _corpus(seed, True)
    order = list(range(len(golds)))
    rnd.shuffle(order)
    shuffled_p = [rnd.sample(preds[i], len(preds[i])) for i in order]
    shuffled_g = [rnd.sample(golds[i], len(golds[i])) for i in order]
    for mode in ("exact", "partial"):
        assert micro_prf(preds, golds, mode) == micro_prf(shuffled_p, shuffled_g, mode)


def test_single_token_corpus_modes_coincide():
    rng = np.random.default_rng(5)
    golds, preds = [], []
    for _ in range(30):
        g = [Triple.of(int(a), int(a), int(r), int(b), int(b)) for a, r, b in rng.integers(0, 8, (4, 3))]
        golds.append(g)
        preds.append([t for t in g if rng.random() < 0.6] + [Triple.of(1, 1, 2, 3, 3)])
    e, p = micro_prf(preds, golds, "exact"), micro_prf(preds, golds, "partial")
    assert e.f1 == p.f1 and e == p


def test_breakdown_only_normal():
    golds = [[A], [Triple.of(4, 4, 1, 6, 6)]]
    parts = breakdown(golds, golds)
    assert set(parts["category"]) == {"Normal"} and set(parts["bucket"]) == {"1"}


def test_breakdown_counts_cover_overall():
    ds = generate_synthetic(SynthConfig(num_sentences=80))
    golds = [list(ex.triples) for ex in ds]
    preds = [g[:1] for g in golds]
    parts = breakdown(preds, golds)
    total = micro_prf(preds, golds)
    assert sum(m.gold for m in parts["category"].values()) >= total.gold
    assert sum(m.gold for m in parts["bucket"].values()) == total.gold
    assert {"EPO", "SEO", "Normal"} <= set(parts["category"])


def test_breakdown_explicit_categories():
    golds = [[A], [A]]
    parts = breakdown(golds, golds, categories=[{"EPO"}, {"Normal"}])
    assert parts["category"]["EPO"].gold == 1 and parts["category"]["Normal"].gold == 1


def _model_and_data(d_h=16, N=2):
    ds = generate_synthetic(SynthConfig(num_sentences=12, seed=3))
    vocab = Vocab.build([ds])
    cfg = ModelConfig(num_relations=len(ds.schema), vocab_size=len(vocab), d_h=d_h, heads=2, N=N,
                      emb_dim=8, rnn_hidden=(8, 8))
    return TableFillingModel(cfg, seed=0), ds, vocab


def test_count_params():
    counts = [count_params(_model_and_data(N=N)[0]) for N in (1, 2, 4)]
    assert counts[0] == counts[1] == counts[2]
    small, big = count_params(_model_and_data(d_h=16)[0]), count_params(_model_and_data(d_h=32)[0])
    # the d_h-dependent part grows faster than linearly
    base = count_params(_model_and_data(d_h=8)[0])
    assert (big - small) > 2 * (small - base)


def test_predict_is_order_independent_of_batching():
    model, ds, vocab = _model_and_data()
    assert predict(model, ds, vocab, batch_size=1) == predict(model, ds, vocab, batch_size=5)


def test_time_inference_batching():
    model, ds, vocab = _model_and_data()
    one = min(time_inference(model, ds, vocab, batch_size=1) for _ in range(2))
    six = min(time_inference(model, ds, vocab, batch_size=6) for _ in range(2))
    assert six > 0 and six <= 1.1 * one


def test_metrics_report_layout():
    ds = generate_synthetic(SynthConfig(num_sentences=20))
    golds = [list(ex.triples) for ex in ds]
    rep = metrics_report(golds, golds, params=10, timing={"batch_1": 1.0}, run={"seed": 0})
    assert rep["schema"] == METRICS_SCHEMA and rep["schema_version"] == 1
    assert rep["exact"]["f1"] == rep["partial"]["f1"] == 1.0
    assert rep["params"] == 10 and rep["run"] == {"seed": 0} and "SEO" in rep["per_category"]
